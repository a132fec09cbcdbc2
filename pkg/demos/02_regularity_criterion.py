"""
Checking the finite-observation regularity criterion
====================================================

From a time series of coarse observations we form M_h (the largest observed
energy), the candidate bound W_h, and compare

    max(nu lam1, c W_h^4 / nu^3, c W_h |f| / nu^2)   with   nu / (4 c h^2).

When the left side is smaller, any mu between the two is an admissible
nudging strength and sup ||u|| <= W_h is expected.
"""

# %%
import numpy as np

from nudging3d import DomainSpec, ForcingSpec, l2_norm, make_forcing, random_divfree_field
from nudging3d.assimilation import run_truth
from nudging3d.criterion import find_admissible_h
from nudging3d.observers import modal_h

domain = DomainSpec(L=2 * np.pi, N=16, nu=1.0)

# %%
# A gentle, low-Grashof flow: weak forcing and a small initial state.
f = make_forcing(ForcingSpec(amplitude=0.05), domain)
u0 = random_divfree_field(domain, seed=1, energy=0.01)
_, _, _, snaps = run_truth(u0, f, dt=0.02, T=2.0, sample_every=10, snapshot_every=10)
states = [u for _, u in snaps]

candidates = [modal_h(m, domain.L) for m in (1, 2, 4, 8)]
search = find_admissible_h(states, "modal", candidates, l2_norm(f), c=0.5)
print(search.curve_csv_text())
print("coarsest admissible h:", search.h)
print("measured sup ||u||:", search.sup_h1)

# %%
# Stronger forcing at the same observation scale moves the left side up.
for amp in (0.05, 0.5, 5.0):
    f = make_forcing(ForcingSpec(amplitude=amp), domain)
    s = find_admissible_h(states, "modal", candidates, l2_norm(f), c=0.5)
    print(f"amplitude {amp:5g}: admissible h = {s.h}")
