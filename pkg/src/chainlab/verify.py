"""Runtime verification suite: the module invariants as named, seeded checks.

Each check returns {name, passed, observed, tolerance, detail}.  The bracket
implementation is injectable so a deliberately corrupted bracket makes the
algebraic checks fail (mutation testing of the suite itself).
"""
from __future__ import annotations

import numpy as np

from . import lattice as lat
from . import algebra as alg
from . import dynamics as dyn
from . import expansion as exp_
from . import resonance as res
from .lattice import KG, DNLS, DisorderSpec, ModelSpec, InitialCondition


def _check(name, observed, tolerance, detail=""):
    return {"name": name, "passed": bool(observed <= tolerance),
            "observed": float(observed), "tolerance": float(tolerance),
            "detail": detail}


def corrupted_sign_bracket(f, g, prune_rel=1e-14):
    """Mutation-test fixture: elementary rule with the leg-sign factor dropped.

    Destroys antisymmetry and the Jacobi identity; used to prove the
    verification suite actually bites.
    """
    from .algebra import Polynomial, _nibble
    if f.n_terms == 0 or g.n_terms == 0:
        return alg.Polynomial.zero()
    lo, n = Polynomial._union_window(f, g)
    a, b = f.aligned(lo, n), g.aligned(lo, n)
    mask = np.uint64(0xF)
    chunks_k, chunks_c = [], []
    for s in range(n):
        for sf in (-1, 1):
            vf = 2 * s + (0 if sf == -1 else 1)
            vg = 2 * s + (1 if sf == -1 else 0)
            limb, shift = _nibble(vf)
            ef = ((a.keys[:, limb] >> shift) & mask).astype(np.int64)
            rf = np.flatnonzero(ef)
            if not len(rf):
                continue
            limb2, shift2 = _nibble(vg)
            eg = ((b.keys[:, limb2] >> shift2) & mask).astype(np.int64)
            rg = np.flatnonzero(eg)
            if not len(rg):
                continue
            kf = a.keys[rf].copy(); kf[:, limb] -= np.uint64(1) << shift
            kg = b.keys[rg].copy(); kg[:, limb2] -= np.uint64(1) << shift2
            keys = (kf[:, None, :] + kg[None, :, :]).reshape(-1, a.keys.shape[1])
            coeffs = (-1j) * np.multiply.outer(a.coeffs[rf] * ef[rf],
                                               b.coeffs[rg] * eg[rg]).ravel()
            chunks_k.append(keys)
            chunks_c.append(coeffs)
    if not chunks_k:
        return Polynomial.zero()
    return Polynomial(lo, n, np.vstack(chunks_k), np.concatenate(chunks_c))


def _setup(seed=0):
    spec = DisorderSpec(seed=seed)
    dis = lat.sample_disorder(spec, (-24, 24))
    model = ModelSpec(kind=KG, g=1.0, disorder=spec)
    modeld = ModelSpec(kind=DNLS, g=1.0, disorder=spec)
    return spec, dis, model, modeld


def check_bracket_antisymmetry(bracket=None, n_draws=40, seed=1):
    bracket = bracket or alg.poisson_bracket
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        f = alg.random_polynomial(rng, (-3, 3), int(rng.integers(1, 5)), 6)
        g = alg.random_polynomial(rng, (-3, 3), int(rng.integers(1, 5)), 6)
        r = (bracket(f, g) + bracket(g, f)).max_abs_coeff()
        scale = max(f.max_abs_coeff() * g.max_abs_coeff(), 1e-300)
        worst = max(worst, r / scale)
        worst = max(worst, bracket(f, f).max_abs_coeff() / max(f.max_abs_coeff() ** 2, 1e-300))
    return _check("bracket_antisymmetry", worst, 1e-12)


def check_bracket_jacobi(bracket=None, n_draws=25, seed=2):
    bracket = bracket or alg.poisson_bracket
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        f, g, h = (alg.random_polynomial(rng, (-2, 2), int(rng.integers(2, 5)), 5)
                   for _ in range(3))
        j = (bracket(f, bracket(g, h)) + bracket(g, bracket(h, f))
             + bracket(h, bracket(f, g)))
        scale = max(f.max_abs_coeff() * g.max_abs_coeff() * h.max_abs_coeff(), 1e-300)
        worst = max(worst, j.max_abs_coeff() / scale)
    return _check("bracket_jacobi", worst, 1e-12)


def check_bracket_leibniz(bracket=None, n_draws=25, seed=3):
    bracket = bracket or alg.poisson_bracket
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        f = alg.random_polynomial(rng, (-2, 2), int(rng.integers(1, 4)), 5)
        g = alg.random_polynomial(rng, (-2, 2), int(rng.integers(1, 3)), 4)
        h = alg.random_polynomial(rng, (-2, 2), int(rng.integers(1, 3)), 4)
        lhs = bracket(f, g * h)
        rhs = bracket(f, g) * h + g * bracket(f, h)
        scale = max(f.max_abs_coeff() * g.max_abs_coeff() * h.max_abs_coeff(), 1e-300)
        worst = max(worst, (lhs - rhs).max_abs_coeff() / scale)
    return _check("bracket_leibniz", worst, 1e-12)


def check_spectral_diagonal(bracket=None, n_draws=2000, seed=4):
    bracket = bracket or alg.poisson_bracket
    _, dis, model, _ = _setup()
    rng = np.random.default_rng(seed)
    H = alg.expand_h_har((-6, 6), dis)
    worst = 0.0
    for _ in range(n_draws):
        d = int(rng.integers(1, 7))
        m = alg.Monomial(tuple((int(rng.integers(-5, 6)), int(rng.choice([-1, 1])))
                               for _ in range(d)))
        pm = alg.Polynomial.from_terms({m: 1.0})
        got = bracket(H, pm)
        want = pm * (1j * alg.delta(m, dis))
        worst = max(worst, (got - want).max_abs_coeff() / max(abs(alg.delta(m, dis)), 1.0))
    return _check("spectral_diagonal", worst, 1e-14)


def check_fd_duality(bracket=None, n_states=20, seed=5):
    bracket = bracket or alg.poisson_bracket
    _, dis, model, _ = _setup()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_states):
        f = alg.random_polynomial(rng, (-2, 2), int(rng.integers(2, 5)), 5, parity="real")
        g = alg.random_polynomial(rng, (-2, 2), int(rng.integers(2, 5)), 5, parity="real")
        st = lat.ChainState(kind=KG, offset=-3, q=0.5 * rng.normal(size=7),
                            p=0.5 * rng.normal(size=7))
        pt = alg.to_normal(st, dis)
        sym = bracket(f, g).evaluate(pt)
        fd = alg.bracket_fd(f, g, st, dis)
        worst = max(worst, abs(sym - fd) / max(abs(sym), 1.0))
    return _check("bracket_fd_duality", worst, 1e-6)


def check_s_delta_equivalence(n_draws=1000, seed=6):
    spec = DisorderSpec(seed=99)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_draws):
        dis = lat.sample_disorder(DisorderSpec(seed=k), (-4, 4))
        d = int(rng.integers(1, 5)) * 2
        m = alg.Monomial(tuple((int(rng.integers(-3, 4)), int(rng.choice([-1, 1])))
                               for _ in range(d)))
        dv = abs(alg.delta(m, dis))
        if alg.in_S(m):
            worst = max(worst, dv)
        elif dv == 0.0:
            worst = max(worst, 1.0)
    return _check("s_delta_equivalence", worst, 1e-12)


def check_current_oracle(n_states=50, seed=7):
    spec, dis, model, modeld = _setup()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for kind, mdl in ((KG, model), (DNLS, modeld)):
        sym = alg.poisson_bracket(alg.local_energy_poly(-1, dis, mdl),
                                  alg.local_energy_poly(0, dis, mdl))
        for _ in range(n_states):
            if kind == KG:
                st = lat.ChainState(kind=KG, offset=-3, q=0.6 * rng.normal(size=7),
                                    p=0.6 * rng.normal(size=7))
            else:
                st = lat.ChainState(kind=DNLS, offset=-3,
                                    psi=0.6 * (rng.normal(size=7) + 1j * rng.normal(size=7)))
            jv = lat.current(st, dis, 0, mdl.g)
            sv = sym.evaluate(alg.to_normal(st, dis)).real
            worst = max(worst, abs(jv - sv) / max(abs(jv), 1e-6))
    return _check("current_bracket_oracle", worst, 1e-10)


def check_decomposition_identity(n_orders=(1, 2, 3), seeds=(0, 1, 2), xs=(0,)):
    worst = 0.0
    for seed in seeds:
        spec = DisorderSpec(seed=seed)
        dis = lat.sample_disorder(spec, (-12, 12))
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        for x in xs:
            for n in n_orders:
                r = exp_.build_recursive(x, n, dis, model)
                resid = exp_.decomposition_residual(r, dis, model)
                worst = max(worst, resid.max_abs_coeff()
                            / r.f_terms[0].max_abs_coeff())
    return _check("decomposition_identity", worst, 1e-10)


def check_explicit_route(seeds=(0,), orders=(2, 3)):
    worst = 0.0
    for seed in seeds:
        spec = DisorderSpec(seed=seed)
        dis = lat.sample_disorder(spec, (-8, 8))
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        r = exp_.build_recursive(0, max(orders), dis, model)
        for i in orders:
            fe = exp_.build_explicit(0, i, dis, model)
            fr = r.f_terms[i - 1]
            worst = max(worst, (fe - fr).max_abs_coeff() / fr.max_abs_coeff())
    return _check("explicit_vs_recursive", worst, 1e-11)


def check_parity_degree_ladder(seed=0):
    spec = DisorderSpec(seed=seed)
    dis = lat.sample_disorder(spec, (-8, 8))
    model = ModelSpec(kind=KG, g=1.0, disorder=spec)
    r = exp_.build_recursive(0, 3, dis, model)
    worst = 0.0
    for i, f in enumerate(r.f_terms, start=1):
        if f.degree() != 2 * (i + 1):
            worst = 1.0
        worst = max(worst, (f.p_image() + f).max_abs_coeff()
                    / max(f.max_abs_coeff(), 1e-300))
        sup = f.support()
        if sup and not (0 - i <= sup[0] and sup[1] <= 0 + i - 1) and i <= 3:
            worst = 1.0
    for i, u in enumerate(r.u_terms, start=1):
        worst = max(worst, (u.p_image() - u).max_abs_coeff()
                    / max(u.max_abs_coeff(), 1e-300))
    return _check("parity_degree_support_ladder", worst, 1e-9)


def check_min_delta_consistency(seeds=(0, 1, 2)):
    """Scanned class minima lower-bound the expansion's realized denominators
    (the class enumeration is coefficient-blind, hence a superset); at order 1
    the two minima coincide."""
    worst = 0.0
    for seed in seeds:
        spec = DisorderSpec(seed=seed)
        dis = lat.sample_disorder(spec, (-12, 12))
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        for n in (1, 2, 3):
            r = exp_.build_recursive(0, n, dis, model)
            md = res.min_delta_profile(np.array([0]), n, dis)[0]
            worst = max(worst, md - r.min_abs_delta)       # containment
            if n == 1:
                worst = max(worst, abs(md - r.min_abs_delta))
    return _check("min_delta_consistency", worst, 1e-12)


def check_conservation(horizon=200.0, seed=0):
    spec, dis, model, modeld = _setup(seed)
    worst = 0.0
    detail = {}
    for mdl in (model, modeld):
        st = lat.build_initial(InitialCondition(E0=1.0), dis, mdl)
        ispec = dyn.IntegratorSpec.default_for(mdl.kind)
        rec = dyn.run(st, dis, mdl, ispec, horizon=horizon, seed=seed)
        worst = max(worst, rec.energy_drift_rate / ispec.energy_drift_tol)
        detail[mdl.kind] = rec.energy_drift_rate
        if mdl.kind == DNLS:
            worst = max(worst, rec.norm_drift / 1e-12)
    return _check("conservation_drift", worst, 1.0, detail=str(detail))


def check_continuity(seed=0, bursts=6):
    spec, dis, model, modeld = _setup(seed)
    worst = 0.0
    for mdl in (model, modeld):
        st = lat.build_initial(InitialCondition(E0=1.0), dis, mdl)
        r = dyn.Runner(st, dis, mdl, dyn.IntegratorSpec.default_for(mdl.kind))
        for _ in range(bursts):
            for _ in range(200):
                r.step_once()
            before = r.state()
            r.step_once()
            after = r.state()
            out = dyn.continuity_residuals(before, after, r.disorder, mdl.g)
            worst = max(worst, float(np.max(np.abs(out["residual"])
                                            / (10 * out["h"] ** 2 * out["scale"]))))
    return _check("continuity_equation", worst, 1.0)


def check_current_bound(seed=0, horizon=100.0):
    spec, dis, model, modeld = _setup(seed)
    worst = 0.0
    for mdl in (model, modeld):
        st = lat.build_initial(InitialCondition(E0=1.0), dis, mdl)
        C = lat.current_bound_constant(mdl, dis, 1.0)
        r = dyn.Runner(st, dis, mdl, dyn.IntegratorSpec.default_for(mdl.kind))
        nst = int(horizon / r.spec.step)
        for k in range(nst):
            r.step_once()
            if k % 50 == 0:
                stt = r.state()
                prof = lat.local_energy_profile(stt, r.disorder, mdl.g)
                js = lat.current_profile(stt, r.disorder, mdl.g)
                hpad = np.concatenate([[0.0], prof, [0.0]])
                bound = C * (hpad[:-1] ** 2 + hpad[1:] ** 2 + hpad[:-1] + hpad[1:])
                worst = max(worst, float(np.max(np.abs(js) / np.maximum(bound, 1e-300))))
    return _check("current_bound", worst, 1.0)


def check_schedule_arithmetic():
    s = res.schedule(np.exp(-8.0))
    errs = [abs(s.n - 2),
            abs(s.delta - np.exp(-0.8)) / np.exp(-0.8),
            abs(s.eps_prime - np.exp(-7.2)) / np.exp(-7.2),
            abs(s.phi - np.exp(8.0)) / np.exp(8.0),
            abs(dyn.threshold_eps_of_t(np.exp(16.0)) - np.exp(-16.0)) / np.exp(-16.0)]
    return _check("schedule_arithmetic", max(errs), 1e-12)


def check_small_denominator_linearity(samples=100_000, seed=0):
    spec = DisorderSpec(seed=7)
    deltas = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
    mc = res.mc_small_denominator(((0, 1), (1, -1)), deltas, samples, spec, seed=seed)
    ratios = [r["ratio"] for r in mc["rows"]]
    spread = max(ratios) / max(min(ratios), 1e-300)
    oracle = res.difference_density_ratio_oracle(spec)
    r0 = mc["rows"][0]
    se = max((r0["ratio_ci"][1] - r0["ratio_ci"][0]) / 3.92, 1e-9)
    pull = abs(r0["ratio"] - oracle) / se
    return _check("small_denominator_linearity", max(spread / 2.0, pull / 3.0), 1.0,
                  detail=f"ratios {ratios}, oracle {oracle:.4g}, pull {pull:.2f}sigma")


def check_interval_tail(samples=50_000, seed=0):
    spec = DisorderSpec(seed=7)
    tail = res.mc_interval_tail(1, [0.05], [1, 2, 3, 4, 5, 6], samples, spec, seed=seed)
    fit = res.log_tail_fit(tail["rows"], 0.05)
    return _check("interval_tail_loglinear", 0.95 - fit["r2"], 0.0,
                  detail=f"r2 {fit['r2']:.4f} slope {fit['slope']:.3f}")


def check_keyed_rng():
    spec = DisorderSpec(seed=11)
    d1 = lat.sample_disorder(spec, (0, 9))
    d2 = lat.sample_disorder(spec, (0, 19))
    worst = float(np.max(np.abs(d1.omega_sq - d2.omega_sq[:10])))
    return _check("keyed_rng_extension", worst, 0.0)


ALL_CHECKS = [
    check_keyed_rng,
    check_bracket_antisymmetry,
    check_bracket_jacobi,
    check_bracket_leibniz,
    check_spectral_diagonal,
    check_fd_duality,
    check_s_delta_equivalence,
    check_current_oracle,
    check_decomposition_identity,
    check_explicit_route,
    check_parity_degree_ladder,
    check_min_delta_consistency,
    check_schedule_arithmetic,
    check_small_denominator_linearity,
    check_interval_tail,
    check_continuity,
    check_current_bound,
    check_conservation,
]


def run_all(bracket=None, deep: bool = False) -> list:
    results = []
    for fn in ALL_CHECKS:
        kwargs = {}
        if bracket is not None and "bracket" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
            kwargs["bracket"] = bracket
        if deep:
            if fn is check_decomposition_identity:
                kwargs["seeds"] = tuple(range(10))
                kwargs["xs"] = (-2, -1, 0, 1, 2)
            if fn is check_explicit_route:
                kwargs["seeds"] = (0, 1, 2)
        results.append(fn(**kwargs))
    if deep:
        results.append(_deep_n4_identity())
    return results


def _deep_n4_identity():
    worst = 0.0
    for seed in (0, 1):
        spec = DisorderSpec(seed=seed)
        dis = lat.sample_disorder(spec, (-12, 12))
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        r = exp_.build_recursive(0, 4, dis, model)
        resid = exp_.decomposition_residual(r, dis, model)
        scale = max(max(p.max_abs_coeff() for p in r.u_terms + r.f_terms), 1.0)
        worst = max(worst, resid.max_abs_coeff() / scale)
    return _check("decomposition_identity_n4", worst, 1e-12,
                  detail="residual relative to the largest intermediate coefficient")
