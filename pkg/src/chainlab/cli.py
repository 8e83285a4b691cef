"""Command-line harness: config parsing, subcommands, ensemble orchestration.

Subcommands: simulate, expand, resonance, mc, verify, schedule.
Precedence: command-line flag > config file > built-in default.
CHAINLAB_SEED overrides the ensemble seed list.
Exit codes: 0 success, 1 check failure, 2 config error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lattice import (KG, DisorderSpec, ModelSpec, InitialCondition,
                      ConfigurationError, build_initial, sample_disorder)
from .dynamics import (IntegratorSpec, SamplingSpec, Runner, IntegrationFailure,
                       light_cone_check, decay_floor_report,
                       threshold_eps_of_t, _fmt)
from . import expansion as exp_
from . import resonance as res
from . import verify as verify_mod

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_FAILURE = 3

_SECTION_KEYS = {
    "model": {"kind", "g", "disorder"},
    "disorder": {"omega_min_sq", "omega_max_sq", "density_kind", "seed"},
    "initial": {"support", "mode", "E0", "custom_values"},
    "integrator": {"scheme", "step", "energy_drift_tol", "growth_margin",
                   "growth_trigger", "fp_tol", "fp_max_iter"},
    "sampling": {"kind", "t_first", "factor", "dt", "times"},
    "outputs": {"dir", "formats"},
    "expansion": {"x", "n", "explicit_check"},
    "resonance": {"n", "delta", "window"},
    "mc": {"kind", "pattern", "deltas", "samples", "lengths", "n", "seed"},
}

_REQUIRED = {
    "simulate": {"model", "initial", "horizon"},
    "expand": {"model", "expansion"},
    "resonance": {"model", "resonance"},
    "mc": {"model", "mc"},
    "verify": set(),
    "schedule": set(),
}

_ALLOWED_TOP = {"model", "initial", "integrator", "horizon", "sampling",
                "ensemble_seeds", "outputs", "expansion", "resonance", "mc",
                "workers"}


class ConfigError(ConfigurationError):
    pass


def _reject_unknown(section: str, data: dict):
    unknown = set(data) - _SECTION_KEYS[section]
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")


@dataclass
class RunConfig:
    model: ModelSpec
    initial: InitialCondition
    integrator: Optional[IntegratorSpec]
    horizon: float
    sampling: SamplingSpec
    ensemble_seeds: list
    out_dir: str
    formats: tuple
    workers: int
    expansion: Optional[dict] = None
    resonance: Optional[dict] = None
    mc: Optional[dict] = None
    raw: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(data: dict, command: str) -> "RunConfig":
        unknown = set(data) - _ALLOWED_TOP
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        missing = _REQUIRED[command] - set(data)
        if missing:
            raise ConfigError(f"{command} requires config keys {sorted(missing)}")

        mdata = dict(data.get("model", {}))
        _reject_unknown("model", mdata)
        ddata = dict(mdata.pop("disorder", {}))
        _reject_unknown("disorder", ddata)
        disorder = DisorderSpec(**ddata)
        model = ModelSpec(kind=mdata.get("kind", KG), g=mdata.get("g", 1.0),
                          disorder=disorder)

        idata = dict(data.get("initial", {"E0": 1.0}))
        _reject_unknown("initial", idata)
        if "support" in idata:
            idata["support"] = tuple(idata["support"])
        initial = InitialCondition(**idata)

        integ = None
        if "integrator" in data:
            gdata = dict(data["integrator"])
            _reject_unknown("integrator", gdata)
            integ = IntegratorSpec(**gdata)

        sdata = dict(data.get("sampling", {}))
        _reject_unknown("sampling", sdata)
        if "times" in sdata and sdata["times"] is not None:
            sdata["times"] = tuple(sdata["times"])
        sampling = SamplingSpec(**sdata)

        horizon = float(data.get("horizon", 0.0))
        if command == "simulate" and horizon <= 0:
            raise ConfigError("horizon must be positive")

        seeds = list(data.get("ensemble_seeds", [0]))
        env = os.environ.get("CHAINLAB_SEED")
        if env:
            try:
                seeds = [int(s) for s in env.split(",") if s.strip() != ""]
            except ValueError as e:
                raise ConfigError(f"bad CHAINLAB_SEED {env!r}") from e

        odata = dict(data.get("outputs", {}))
        _reject_unknown("outputs", odata)
        formats = tuple(odata.get("formats", ("csv", "json")))
        for f in formats:
            if f not in ("csv", "json"):
                raise ConfigError(f"unknown output format {f!r}")

        for section in ("expansion", "resonance", "mc"):
            if section in data:
                _reject_unknown(section, dict(data[section]))

        workers = int(data.get("workers", os.cpu_count() or 1))
        return RunConfig(model=model, initial=initial, integrator=integ,
                         horizon=horizon, sampling=sampling,
                         ensemble_seeds=seeds,
                         out_dir=odata.get("dir", "out"), formats=formats,
                         workers=max(1, workers),
                         expansion=data.get("expansion"),
                         resonance=data.get("resonance"), mc=data.get("mc"),
                         raw=data)


def _resolved_config_dict(cfg: RunConfig) -> dict:
    d = cfg.model.disorder
    out = {
        "model": {"kind": cfg.model.kind, "g": cfg.model.g,
                  "disorder": {"omega_min_sq": d.omega_min_sq,
                               "omega_max_sq": d.omega_max_sq,
                               "density_kind": d.density_kind, "seed": d.seed}},
        "initial": {"support": list(cfg.initial.support), "mode": cfg.initial.mode,
                    "E0": cfg.initial.E0},
        "horizon": cfg.horizon,
        "sampling": {"kind": cfg.sampling.kind, "t_first": cfg.sampling.t_first,
                     "factor": cfg.sampling.factor, "dt": cfg.sampling.dt,
                     "times": list(cfg.sampling.times) if cfg.sampling.times else None},
        "ensemble_seeds": list(cfg.ensemble_seeds),
        "outputs": {"dir": cfg.out_dir, "formats": list(cfg.formats)},
        "workers": cfg.workers,
    }
    if cfg.integrator is not None:
        i = cfg.integrator
        out["integrator"] = {"scheme": i.scheme, "step": i.step,
                             "energy_drift_tol": i.energy_drift_tol,
                             "growth_margin": i.growth_margin,
                             "growth_trigger": i.growth_trigger,
                             "fp_tol": i.fp_tol, "fp_max_iter": i.fp_max_iter}
    for section in ("expansion", "resonance", "mc"):
        if getattr(cfg, section) is not None:
            out[section] = getattr(cfg, section)
    return out


def _simulate_one(payload: tuple) -> dict:
    cfg_dict, seed = payload
    cfg = RunConfig.from_dict(cfg_dict, "simulate")
    disorder_spec = DisorderSpec(
        omega_min_sq=cfg.model.disorder.omega_min_sq,
        omega_max_sq=cfg.model.disorder.omega_max_sq,
        density_kind=cfg.model.disorder.density_kind, seed=seed)
    model = ModelSpec(kind=cfg.model.kind, g=cfg.model.g, disorder=disorder_spec)
    dis = sample_disorder(disorder_spec, (-64, 64))
    state = build_initial(cfg.initial, dis, model)
    ispec = cfg.integrator or IntegratorSpec.default_for(model.kind)
    runner = Runner(state, dis, model, ispec)
    try:
        rec = runner.run(cfg.horizon, cfg.sampling, seed=seed)
    except IntegrationFailure as e:
        return {"seed": seed, "ok": False, "error": str(e),
                "suggested_step": e.suggested_step}
    lc = light_cone_check(rec)
    floor = decay_floor_report(rec)
    # the threshold formula is vacuous as t -> 1+ (it tends to 1 >= E0);
    # margins and crossings are reported for t >= 2, plus the observable
    # last sample anywhere with M <= eps (observable clear time)
    mask = rec.sample_times >= 2.0
    margin = float(np.min(rec.M[mask] / rec.threshold[mask])) if mask.any() else np.inf
    crossing = None
    if mask.any():
        below = np.flatnonzero(rec.M[mask] <= rec.threshold[mask])
        if len(below):
            crossing = float(rec.sample_times[mask][below[0]])
    early = rec.sample_times >= 1.0
    below_any = np.flatnonzero(rec.M[early] <= rec.threshold[early])
    t_star = float(rec.sample_times[early][below_any[-1]]) if len(below_any) else None
    os.makedirs(cfg.out_dir, exist_ok=True)
    files = {}
    base = os.path.join(cfg.out_dir, f"trajectory_seed{seed}")
    if "csv" in cfg.formats:
        rec.to_csv(base + ".csv")
        files["csv"] = base + ".csv"
    if "json" in cfg.formats:
        with open(base + ".json", "w") as fh:
            json.dump(rec.to_json_dict(), fh, indent=1, sort_keys=True)
        files["json"] = base + ".json"
    def _finite_or_none(v):
        return float(v) if v is not None and np.isfinite(v) else None

    return {"seed": seed, "ok": True, "files": files,
            "light_cone_sup": lc.sup_ratio, "light_cone_argmax_t": lc.argmax_time,
            "min_M": float(rec.M.min()),
            "threshold_margin": _finite_or_none(margin),
            "first_threshold_crossing": crossing,
            "threshold_clear_time": t_star,
            "teps_eps_floor": _finite_or_none(floor["min_product"]),
            "energy_drift_rate": rec.energy_drift_rate,
            "energy_error_amplitude": rec.energy_error_amplitude,
            "norm_drift": rec.norm_drift,
            "final_window": [int(rec.window_lo[-1]), int(rec.window_hi[-1])]}


def cmd_simulate(cfg: RunConfig) -> int:
    payloads = [(_resolved_config_dict(cfg), seed) for seed in cfg.ensemble_seeds]
    if cfg.workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_simulate_one, payloads))
    else:
        results = [_simulate_one(p) for p in payloads]
    results.sort(key=lambda r: r["seed"])
    summary = {"config": _resolved_config_dict(cfg), "per_seed": results}
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    n_fail = sum(1 for r in results if not r["ok"])
    for r in results:
        status = "ok" if r["ok"] else f"FAILED ({r['error']})"
        print(f"seed {r['seed']}: {status}")
    print(f"summary: {path}")
    if n_fail == len(results):
        return EXIT_RUNTIME_FAILURE
    return EXIT_OK


def cmd_expand(cfg: RunConfig) -> int:
    section = cfg.expansion or {}
    xs = section.get("x", [0])
    if isinstance(xs, int):
        xs = [xs]
    n = int(section.get("n", 1))
    do_explicit = bool(section.get("explicit_check", False))
    dis = sample_disorder(cfg.model.disorder, (min(xs) - n - 2, max(xs) + n + 2))
    os.makedirs(cfg.out_dir, exist_ok=True)
    for x in xs:
        result = exp_.build_recursive(int(x), n, dis, cfg.model)
        resid = exp_.decomposition_residual(result, dis, cfg.model)
        data = result.to_json_dict()
        data["identity_residual"] = resid.max_abs_coeff()
        data["identity_scale"] = result.f_terms[0].max_abs_coeff()
        if do_explicit and n >= 2:
            fe = exp_.build_explicit(int(x), min(n, exp_.EXPLICIT_CAP), dis, cfg.model)
            fr = result.f_terms[min(n, exp_.EXPLICIT_CAP) - 1]
            data["explicit_rel_diff"] = ((fe - fr).max_abs_coeff()
                                         / max(fr.max_abs_coeff(), 1e-300))
        path = os.path.join(cfg.out_dir, f"expansion_x{x}_n{n}.json")
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1, sort_keys=True)
        print(f"x={x}: u terms {data['term_counts']['u']}, g terms "
              f"{data['term_counts']['f'][-1]}, min|Delta| {data['min_abs_delta']:.3e}"
              f" -> {path}")
    return EXIT_OK


def cmd_resonance(cfg: RunConfig) -> int:
    section = cfg.resonance or {}
    n = int(section.get("n", 1))
    delta = float(section.get("delta", 0.05))
    window = tuple(section.get("window", (-50, 50)))
    dis = sample_disorder(cfg.model.disorder, (window[0] - n - 1, window[1] + n + 1))
    rep = res.scan_resonances(window, n, delta, dis)
    os.makedirs(cfg.out_dir, exist_ok=True)
    jpath = os.path.join(cfg.out_dir, f"resonance_n{n}.json")
    with open(jpath, "w") as fh:
        json.dump(rep.to_json_dict(), fh, indent=1, sort_keys=True)
    cpath = os.path.join(cfg.out_dir, f"resonance_n{n}.csv")
    with open(cpath, "w") as fh:
        fh.write("site,min_delta,resonant\n")
        for i, site in enumerate(range(window[0], window[1] + 1)):
            fh.write(f"{site},{_fmt(rep.min_delta_per_site[i])},"
                     f"{int(rep.resonant_flags[i])}\n")
    print(f"{int(rep.resonant_flags.sum())} resonant sites, "
          f"{len(rep.intervals)} intervals -> {jpath}")
    return EXIT_OK


def cmd_mc(cfg: RunConfig) -> int:
    section = cfg.mc or {}
    kind = section.get("kind", "small-denominator")
    samples = int(section.get("samples", 100_000))
    seed = int(section.get("seed", 0))
    os.makedirs(cfg.out_dir, exist_ok=True)
    if kind == "small-denominator":
        pat = section.get("pattern", {"sites": [0, 1], "signs": [1, -1]})
        deltas = section.get("deltas", [1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
        out = res.mc_small_denominator((tuple(pat["sites"]), tuple(pat["signs"])),
                                       deltas, samples, cfg.model.disorder,
                                       seed=seed)
        path = os.path.join(cfg.out_dir, "mc_small_denominator.csv")
        with open(path, "w") as fh:
            fh.write("delta,estimate,ci_lo,ci_hi,count,ratio\n")
            for r in out["rows"]:
                fh.write(",".join(_fmt(v) for v in
                                  (r["delta"], r["estimate"], r["ci_lo"],
                                   r["ci_hi"], r["count"], r["ratio"])) + "\n")
    elif kind == "interval-tail":
        n = int(section.get("n", 1))
        deltas = section.get("deltas", [0.05])
        lengths = section.get("lengths", [1, 2, 3, 4, 5, 6])
        out = res.mc_interval_tail(n, deltas, lengths, samples,
                                   cfg.model.disorder, seed=seed)
        path = os.path.join(cfg.out_dir, "mc_interval_tail.csv")
        with open(path, "w") as fh:
            fh.write("delta,ell,estimate,ci_lo,ci_hi,count\n")
            for r in out["rows"]:
                fh.write(",".join(_fmt(v) for v in
                                  (r["delta"], r["ell"], r["estimate"],
                                   r["ci_lo"], r["ci_hi"], r["count"])) + "\n")
    else:
        raise ConfigError(f"unknown mc kind {kind!r}")
    jpath = path.replace(".csv", ".json")
    with open(jpath, "w") as fh:
        json.dump(out, fh, indent=1, sort_keys=True)
    print(f"{kind}: {len(out['rows'])} rows -> {path}")
    return EXIT_OK


def cmd_verify(out_dir: Optional[str] = None, deep: bool = False,
               bracket=None) -> int:
    results = verify_mod.run_all(bracket=bracket, deep=deep)
    n_fail = 0
    for r in results:
        mark = "PASS" if r["passed"] else "FAIL"
        print(f"[{mark}] {r['name']}: observed {r['observed']:.3e} "
              f"tol {r['tolerance']:.3e} {r['detail']}")
        n_fail += 0 if r["passed"] else 1
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "verify.json"), "w") as fh:
            json.dump(results, fh, indent=1, sort_keys=True)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return EXIT_OK if n_fail == 0 else EXIT_CHECK_FAILURE


def cmd_schedule(eps: float, t: Optional[float], c1: Optional[float]) -> int:
    s = res.schedule(eps)
    out = {"eps": eps, "n": s.n, "delta": s.delta, "eps_prime": s.eps_prime,
           "phi": s.phi, "theta": s.theta, "eta": s.eta}
    if t is not None:
        out["threshold_eps_of_t"] = threshold_eps_of_t(t)
        out["t"] = t
    if c1 is not None:
        out["condition"] = s.condition_check(c1)
    print(json.dumps(out, indent=1, sort_keys=True))
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chainlab",
                                 description="disordered anharmonic chain toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "expand", "resonance", "mc"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--seeds", default=None, help="comma-separated seed list")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--format", default=None, choices=("csv", "json"))
        p.add_argument("--horizon", type=float, default=None)
    pv = sub.add_parser("verify")
    pv.add_argument("--out", default=None)
    pv.add_argument("--deep", action="store_true")
    ps = sub.add_parser("schedule")
    ps.add_argument("--eps", type=float, required=True)
    ps.add_argument("--t", type=float, default=None)
    ps.add_argument("--c1", type=float, default=None)
    return ap


def main(argv: Optional[list] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(out_dir=args.out, deep=args.deep)
        if args.command == "schedule":
            return cmd_schedule(args.eps, args.t, args.c1)
        data: dict = {}
        if args.config:
            with open(args.config) as fh:
                data = json.load(fh)
        if args.out is not None:
            data.setdefault("outputs", {})["dir"] = args.out
        if args.seeds is not None:
            data["ensemble_seeds"] = [int(s) for s in args.seeds.split(",")]
        if args.workers is not None:
            data["workers"] = args.workers
        if args.format is not None:
            data.setdefault("outputs", {})["formats"] = [args.format]
        if args.horizon is not None:
            data["horizon"] = args.horizon
        cfg = RunConfig.from_dict(data, args.command)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "expand":
            return cmd_expand(cfg)
        if args.command == "resonance":
            return cmd_resonance(cfg)
        if args.command == "mc":
            return cmd_mc(cfg)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigurationError, ConfigError, FileNotFoundError,
            json.JSONDecodeError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except IntegrationFailure as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME_FAILURE


if __name__ == "__main__":
    sys.exit(main())
