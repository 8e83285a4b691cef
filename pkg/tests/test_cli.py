import json
import os
import subprocess
import sys

import numpy as np
import pytest

from chainlab.cli import main, RunConfig, ConfigError, EXIT_CONFIG_ERROR
from chainlab import verify as verify_mod
from chainlab.algebra import poisson_bracket


def write_cfg(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


BASE = {
    "model": {"kind": "KG", "g": 1.0, "disorder": {"seed": 0}},
    "initial": {"E0": 1.0},
    "horizon": 40.0,
    "ensemble_seeds": [0, 1],
    "workers": 1,
}


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("CHAINLAB_SEED", raising=False)


def run_cli(args, env_extra=None):
    env = dict(os.environ)
    env.pop("CHAINLAB_SEED", None)
    if env_extra:
        env.update(env_extra)
    return subprocess.run([sys.executable, "-m", "chainlab.cli", *args],
                          capture_output=True, text=True, env=env)


class TestConfig:
    def test_unknown_top_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown top-level"):
            RunConfig.from_dict({**BASE, "bogus": 1}, "simulate")

    def test_unknown_section_key_rejected(self):
        bad = {**BASE, "model": {"kind": "KG", "oops": 2}}
        with pytest.raises(ConfigError, match="unknown keys in model"):
            RunConfig.from_dict(bad, "simulate")

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="requires config keys"):
            RunConfig.from_dict({"model": BASE["model"]}, "simulate")

    def test_negative_step_exit_code(self, tmp_path):
        cfg = write_cfg(tmp_path, {**BASE, "integrator": {"step": -0.01}})
        assert main(["simulate", "--config", cfg]) == EXIT_CONFIG_ERROR

    def test_flag_overrides_file(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE)
        out = str(tmp_path / "o1")
        rc = main(["simulate", "--config", cfg, "--out", out, "--seeds", "3",
                   "--horizon", "5.0"])
        assert rc == 0
        summary = json.load(open(os.path.join(out, "summary.json")))
        assert summary["config"]["ensemble_seeds"] == [3]
        assert summary["config"]["horizon"] == 5.0

    def test_env_seed_override(self, tmp_path):
        cfg = write_cfg(tmp_path, {**BASE, "outputs": {"dir": str(tmp_path / "o2")}})
        r = run_cli(["simulate", "--config", cfg],
                    env_extra={"CHAINLAB_SEED": "11"})
        assert r.returncode == 0, r.stderr
        assert (tmp_path / "o2" / "trajectory_seed11.csv").exists()


class TestSimulate:
    def test_g0_flat_M(self, tmp_path):
        cfg = {**BASE, "model": {"kind": "KG", "g": 0.0, "disorder": {"seed": 0}},
               "ensemble_seeds": [0, 1, 2, 3],
               "outputs": {"dir": str(tmp_path / "flat")}}
        assert main(["simulate", "--config", write_cfg(tmp_path, cfg)]) == 0
        for seed in range(4):
            rows = np.genfromtxt(tmp_path / "flat" / f"trajectory_seed{seed}.csv",
                                 delimiter=",", names=True)
            M = np.atleast_1d(rows["M"])
            assert np.max(np.abs(M - M[0])) < 5e-5 * M[0]

    def test_byte_identical_reruns(self, tmp_path):
        out = str(tmp_path / "rep")
        cfg = write_cfg(tmp_path, {**BASE, "outputs": {"dir": out}})
        assert main(["simulate", "--config", cfg]) == 0
        blob1 = open(os.path.join(out, "trajectory_seed0.csv"), "rb").read()
        sum1 = open(os.path.join(out, "summary.json"), "rb").read()
        assert main(["simulate", "--config", cfg]) == 0
        assert open(os.path.join(out, "trajectory_seed0.csv"), "rb").read() == blob1
        assert open(os.path.join(out, "summary.json"), "rb").read() == sum1

    def test_config_round_trip(self, tmp_path):
        out1 = str(tmp_path / "a")
        cfg = write_cfg(tmp_path, {**BASE, "outputs": {"dir": out1}})
        assert main(["simulate", "--config", cfg]) == 0
        embedded = json.load(open(os.path.join(out1, "summary.json")))["config"]
        embedded["outputs"]["dir"] = str(tmp_path / "b")
        cfg2 = write_cfg(tmp_path, embedded, name="cfg2.json")
        assert main(["simulate", "--config", cfg2]) == 0
        b1 = open(os.path.join(out1, "trajectory_seed0.csv"), "rb").read()
        b2 = open(os.path.join(str(tmp_path / "b"), "trajectory_seed0.csv"), "rb").read()
        assert b1 == b2

    def test_summary_fields(self, tmp_path):
        out = str(tmp_path / "s")
        cfg = write_cfg(tmp_path, {**BASE, "outputs": {"dir": out}})
        assert main(["simulate", "--config", cfg]) == 0
        summary = json.load(open(os.path.join(out, "summary.json")))
        per = summary["per_seed"]
        assert [p["seed"] for p in per] == [0, 1]
        for p in per:
            assert p["ok"]
            assert "light_cone_sup" in p and "min_M" in p
            assert p["first_threshold_crossing"] is None
            assert p["threshold_margin"] > 1.0
            # crossings only in the vacuous corner where eps(t) -> 1
            assert p["threshold_clear_time"] is None or p["threshold_clear_time"] < 2.0

    def test_parallel_matches_serial(self, tmp_path):
        o1, o2 = str(tmp_path / "w1"), str(tmp_path / "w2")
        c1 = write_cfg(tmp_path, {**BASE, "horizon": 10.0,
                                  "outputs": {"dir": o1}}, "c1.json")
        c2 = write_cfg(tmp_path, {**BASE, "horizon": 10.0, "workers": 2,
                                  "outputs": {"dir": o2}}, "c2.json")
        assert main(["simulate", "--config", c1]) == 0
        assert main(["simulate", "--config", c2]) == 0
        for seed in (0, 1):
            a = open(os.path.join(o1, f"trajectory_seed{seed}.csv"), "rb").read()
            b = open(os.path.join(o2, f"trajectory_seed{seed}.csv"), "rb").read()
            assert a == b


class TestOtherSubcommands:
    def test_expand_output_degrees(self, tmp_path):
        cfg = write_cfg(tmp_path, {
            "model": {"kind": "KG", "g": 1.0, "disorder": {"seed": 5}},
            "expansion": {"x": [0], "n": 1},
            "outputs": {"dir": str(tmp_path / "e")}})
        assert main(["expand", "--config", cfg]) == 0
        data = json.load(open(tmp_path / "e" / "expansion_x0_n1.json"))
        u_degs = {len(row["sites"]) for row in data["u"]}
        g_degs = {len(row["sites"]) for row in data["g"]}
        assert u_degs == {4} and g_degs == {6}
        assert data["identity_residual"] <= 1e-10 * data["identity_scale"]

    def test_resonance_report(self, tmp_path):
        cfg = write_cfg(tmp_path, {
            "model": {"disorder": {"seed": 12}},
            "resonance": {"n": 1, "delta": 0.05, "window": [-50, 50]},
            "outputs": {"dir": str(tmp_path / "r")}})
        assert main(["resonance", "--config", cfg]) == 0
        rep = json.load(open(tmp_path / "r" / "resonance_n1.json"))
        ivs = rep["intervals"]
        for a, b in zip(ivs, ivs[1:]):
            assert a[1] + 1 < b[0]          # disjoint and maximal
        csv_lines = open(tmp_path / "r" / "resonance_n1.csv").read().splitlines()
        assert csv_lines[0] == "site,min_delta,resonant"
        assert len(csv_lines) == 102

    def test_mc_csv_monotone(self, tmp_path):
        cfg = write_cfg(tmp_path, {
            "model": {"disorder": {"seed": 7}},
            "mc": {"kind": "small-denominator", "samples": 20000,
                   "pattern": {"sites": [0, 1], "signs": [1, -1]}},
            "outputs": {"dir": str(tmp_path / "m")}})
        assert main(["mc", "--config", cfg]) == 0
        rows = np.genfromtxt(tmp_path / "m" / "mc_small_denominator.csv",
                             delimiter=",", names=True)
        est = np.atleast_1d(rows["estimate"])
        assert np.all(np.diff(est) >= 0)

    def test_schedule_subcommand(self):
        r = run_cli(["schedule", "--eps", str(np.exp(-8.0))])
        assert r.returncode == 0
        out = json.loads(r.stdout)
        assert out["n"] == 2
        assert out["phi"] == pytest.approx(np.exp(8.0), rel=1e-12)


class TestVerify:
    def test_pristine_checks_pass(self):
        results = verify_mod.run_all()
        failed = [r["name"] for r in results if not r["passed"]]
        assert failed == []

    def test_corrupted_bracket_fails_jacobi(self):
        jac = verify_mod.check_bracket_jacobi(
            bracket=verify_mod.corrupted_sign_bracket)
        assert not jac["passed"]
        anti = verify_mod.check_bracket_antisymmetry(
            bracket=verify_mod.corrupted_sign_bracket)
        assert not anti["passed"]

    def test_sign_corruption_fails_spectral(self):
        def flipped(f, g, prune_rel=1e-14):
            return poisson_bracket(g, f, prune_rel)

        spec_check = verify_mod.check_spectral_diagonal(bracket=flipped)
        assert not spec_check["passed"]
