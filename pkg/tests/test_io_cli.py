import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nudging3d.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_MISMATCH,
    EXIT_OK,
    EXIT_UNSTABLE,
    main,
)
from nudging3d.config import ConfigError, parse_config
from nudging3d.io import load_snapshot, save_snapshot, snapshot_bytes
from nudging3d.spectral import random_divfree_field

from conftest import TWO_PI

SMALL = """
[domain]
L = 2*pi
N = 8
nu = 1.0

[forcing]
amplitude = 0.5

[initial]
seed = 3
energy = 0.5

[observer]
kind = modal
N_obs = 2

[nudging]
mu = 10
dt = 0.01
T = 0.2
sample_every = 5

[criterion]
c = 0.1
h_candidates = 1.0, 0.5, 0.25

[determining]
seed2 = 4
n_cells = 2

[lab]
N = 8
n_fields = 2
cells = 2, 4

[output]
snapshot_every = 10
observations = true
"""

# low-Grashof nodal setup where the criterion window is non-empty
AUTO = """
[domain]
L = 2pi
N = 32
nu = 1.0
[forcing]
amplitude = 0.05
[initial]
seed = 1
energy = 0.01
[observer]
kind = nodal
n_cells = 32
smoothed = true
[nudging]
mu = auto
dt = 0.02
T = 0.2
sample_every = 5
[criterion]
c = 0.58
"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _run(tmp_path, command, text=SMALL, out="out", extra=()):
    cfg = _write(tmp_path, text)
    code = main([command, "--config", str(cfg), "--out", str(tmp_path / out), "--quiet",
                 *extra])
    return code, tmp_path / out


class TestSnapshot:
    def test_round_trip(self, tmp_path, d8):
        u = random_divfree_field(d8, 0)
        save_snapshot(tmp_path / "a.nse3", u, t=1.25)
        v, t = load_snapshot(tmp_path / "a.nse3")
        assert t == 1.25 and np.array_equal(v.coeffs, u.coeffs)
        assert v.domain.N == 8 and v.domain.L == d8.L and v.domain.nu == d8.nu

    def test_truncated(self, tmp_path, d8):
        raw = snapshot_bytes(random_divfree_field(d8, 0))
        (tmp_path / "t.nse3").write_bytes(raw[:-16])
        with pytest.raises(ValueError, match="expected"):
            load_snapshot(tmp_path / "t.nse3")
        (tmp_path / "h.nse3").write_bytes(raw[:10])
        with pytest.raises(ValueError, match="truncated"):
            load_snapshot(tmp_path / "h.nse3")

    def test_bad_magic(self, tmp_path, d8):
        raw = bytearray(snapshot_bytes(random_divfree_field(d8, 0)))
        raw[:4] = b"XXXX"
        (tmp_path / "m.nse3").write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="not a velocity snapshot"):
            load_snapshot(tmp_path / "m.nse3")


class TestConfig:
    def test_parse(self):
        cfg = parse_config(SMALL)
        assert cfg.domain.L == pytest.approx(TWO_PI, rel=1e-15)
        assert cfg.h_candidates == (1.0, 0.5, 0.25)
        assert cfg.lab.cells == (2, 4)
        assert cfg.nudging().mu == 10.0

    def test_missing_required_field_is_named(self):
        with pytest.raises(ConfigError, match=r"\[domain\] nu"):
            parse_config(SMALL.replace("nu = 1.0", ""))

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="viscosity"):
            parse_config(SMALL.replace("nu = 1.0", "nu = 1.0\nviscosity = 2"))

    @pytest.mark.parametrize("old,new", [
        ("dt = 0.01", "dt = 0"), ("mu = 10", "mu = -1"), ("N_obs = 2", "N_obs = 9"),
        ("h_candidates = 1.0, 0.5, 0.25", "h_candidates = 0.25, 0.5"),
        ("energy = 0.5", "energy = lots"),
    ])
    def test_invalid_values(self, old, new):
        with pytest.raises(ConfigError):
            parse_config(SMALL.replace(old, new))

    def test_smoothed_requires_nodal(self):
        with pytest.raises(ConfigError):
            parse_config(SMALL.replace("N_obs = 2", "N_obs = 2\nsmoothed = true"))

    def test_auto_mu_needs_a_truth_run(self):
        cfg = parse_config(AUTO)
        assert cfg.auto_mu
        with pytest.raises(ValueError):
            cfg.nudging()

    @given(seed=st.integers(0, 2**31 - 1))
    def test_with_seed(self, seed):
        cfg = parse_config(SMALL).with_seed(seed)
        assert cfg.seed == seed and cfg.lab.seed == seed
        assert cfg.sha256 == parse_config(SMALL).sha256


class TestCliCommands:
    def test_truth_outputs(self, tmp_path):
        code, out = _run(tmp_path, "truth")
        assert code == EXIT_OK
        names = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())
        assert names == ["energy.json", "manifest.json", "observations.csv", "series.csv",
                         "snapshots/step_00000000.nse3", "snapshots/step_00000010.nse3",
                         "snapshots/step_00000020.nse3"]
        u, t = load_snapshot(out / "snapshots/step_00000020.nse3")
        assert t == pytest.approx(0.2)
        rep = json.loads((out / "energy.json").read_text())
        # the per-step residual is O(dt^2); the report integrates coarse samples
        assert abs(rep["stepwise_residual"]) < 5e-3
        assert rep["sup_u"] == pytest.approx(1.0, rel=1e-12)

    def test_twin_mu_zero_matches_truth(self, tmp_path):
        _run(tmp_path, "truth", out="truth")
        code, out = _run(tmp_path, "twin", SMALL.replace("mu = 10", "mu = 0"), out="twin")
        assert code == EXIT_OK
        with open(tmp_path / "truth/series.csv") as fa, open(out / "series.csv") as fb:
            a, b = list(csv.DictReader(fa)), list(csv.DictReader(fb))
        assert len(a) == len(b) == 5
        for ra, rb in zip(a, b):
            for col in ("t", "u_l2", "u_h1"):
                assert ra[col] == rb[col]

    def test_twin_summary(self, tmp_path):
        code, out = _run(tmp_path, "twin")
        s = json.loads((out / "summary.json").read_text())
        assert code == EXIT_OK
        assert s["mu"] == 10.0 and s["mu_source"] == "config"
        assert s["target_slope"] == -5.0

    def test_auto_mu_midpoint(self, tmp_path):
        code, out = _run(tmp_path, "twin", AUTO)
        assert code == EXIT_OK
        s = json.loads((out / "summary.json").read_text())
        lo, hi = s["mu_window"]
        assert s["mu_source"] == "auto" and lo < hi
        assert s["mu"] == pytest.approx(0.5 * (lo + hi), rel=1e-14)

    def test_auto_mu_empty_window_is_config_error(self, tmp_path):
        code, out = _run(tmp_path, "twin", AUTO.replace("n_cells = 32", "n_cells = 8"))
        assert code == EXIT_CONFIG
        assert not out.exists()

    def test_criterion_all_coarse(self, tmp_path):
        text = SMALL.replace("c = 0.1", "c = 50").replace(
            "h_candidates = 1.0, 0.5, 0.25", "h_candidates = 1.0")
        code, out = _run(tmp_path, "criterion", text)
        assert code == EXIT_OK
        rep = json.loads((out / "criterion.json").read_text())
        assert rep["satisfied"] is False and rep["admissible_h"] is None

    def test_criterion_bad_candidate(self, tmp_path):
        text = SMALL.replace("kind = modal\nN_obs = 2", "kind = volume\nn_cells = 2").replace(
            "h_candidates = 1.0, 0.5, 0.25", "h_candidates = 1.0")
        code, _ = _run(tmp_path, "criterion", text)
        assert code == EXIT_CONFIG

    def test_determining(self, tmp_path):
        code, out = _run(tmp_path, "determining")
        assert code == EXIT_OK
        rep = json.loads((out / "determining.json").read_text())
        assert (out / "determining.csv").read_text().startswith("t,obs_diff,diff")
        assert rep["n_cells"] == 2 and len(rep["M_h"]) == 2 and len(rep["reports"]) == 2
        assert rep["final_diff"] > 0

    def test_lab(self, tmp_path):
        code, out = _run(tmp_path, "lab")
        assert code == EXIT_OK
        cal = json.loads((out / "lab/calibration.json").read_text())
        assert math.isfinite(cal["calibrated_c"]) and cal["calibrated_c"] > 0


class TestCliFailures:
    def test_missing_field_exit_code(self, tmp_path):
        code, out = _run(tmp_path, "truth", SMALL.replace("nu = 1.0", ""))
        assert code == EXIT_CONFIG and not out.exists()

    def test_missing_config_file(self, tmp_path):
        assert main(["truth", "--config", str(tmp_path / "nope.ini"),
                     "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_CONFIG

    def test_bad_arguments(self):
        assert main(["truth"]) == EXIT_CONFIG
        assert main(["fly"]) == EXIT_CONFIG

    def test_instability(self, tmp_path):
        text = (SMALL.replace("energy = 0.5", "energy = 400")
                .replace("dt = 0.01", "dt = 0.2").replace("T = 0.2", "T = 2.0"))
        code, out = _run(tmp_path, "truth", text)
        assert code == EXIT_UNSTABLE and not out.exists()

    def test_unwritable_output(self, tmp_path):
        (tmp_path / "blocker").write_text("")
        code, _ = _run(tmp_path, "truth", out="blocker/sub")
        assert code == EXIT_IO


class TestReplay:
    def test_byte_identical(self, tmp_path):
        _, out = _run(tmp_path, "twin", extra=("--seed", "11"))
        code = main(["replay", "--manifest", str(out / "manifest.json"),
                     "--out", str(tmp_path / "again"), "--quiet"])
        assert code == EXIT_OK
        for p in out.rglob("*"):
            if p.is_file():
                assert (tmp_path / "again" / p.relative_to(out)).read_bytes() == p.read_bytes()
        assert json.loads((out / "manifest.json").read_text())["seed"] == 11

    def test_tampered_output_hash(self, tmp_path):
        _, out = _run(tmp_path, "truth")
        m = json.loads((out / "manifest.json").read_text())
        m["outputs"]["series.csv"] = "0" * 64
        (out / "manifest.json").write_text(json.dumps(m))
        code = main(["replay", "--manifest", str(out / "manifest.json"),
                     "--out", str(tmp_path / "again"), "--quiet"])
        assert code == EXIT_MISMATCH

    def test_tampered_config(self, tmp_path):
        _, out = _run(tmp_path, "truth")
        m = json.loads((out / "manifest.json").read_text())
        m["config_text"] = m["config_text"].replace("nu = 1.0", "nu = 2.0")
        (out / "manifest.json").write_text(json.dumps(m))
        code = main(["replay", "--manifest", str(out / "manifest.json"),
                     "--out", str(tmp_path / "again"), "--quiet"])
        assert code == EXIT_CONFIG
