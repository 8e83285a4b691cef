"""Small-denominator machinery: resonant sites and intervals, Monte Carlo
tail estimation, and the decay-threshold parameter schedule.

A site x is (n, delta)-resonant when some contractible monomial anchored at
x, of order <= n, has |Delta| <= delta.  The anchored monomial classes are
pure combinatorics: their signed site-multiplicity vectors are enumerated
once per order by the same transition structure the explicit expansion
route uses, cached, and then scanned against any disorder realization as
integer combinations of the local frequencies.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np

from .lattice import DisorderSpec, DisorderRealization
from .rng import uniform01, uniform01_matrix
from .algebra import Monomial, in_S, MINUS, PLUS
from .dynamics import threshold_eps_of_t
from .expansion import BudgetError

THETA = 1.0 / 3.0
ETA = 1.0 / 10.0

EXACT_PATTERN_ORDER = 3
SAMPLED_TRANSITIONS = 48


@dataclass(frozen=True)
class ScheduleParams:
    """Derived parameter bundle tying order, threshold and floor together."""

    eps: float
    theta: float = THETA
    eta: float = ETA

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0):
            raise ValueError("eps must lie in (0, 1)")

    @property
    def n(self) -> int:
        return int(np.ceil(np.log(1.0 / self.eps) ** self.theta - 1e-12))

    @property
    def delta(self) -> float:
        return self.eps ** self.eta

    @property
    def eps_prime(self) -> float:
        return self.eps ** (1.0 - self.eta)

    @property
    def phi(self) -> float:
        return float(np.exp(0.5 * np.log(1.0 / self.eps) ** (1.0 + self.theta)))

    def condition_check(self, c1: float) -> dict:
        """Whether (e^{(4 + c1 ln(n+1))(n+1)} delta)^{1/(2(n+1))} <= 1/2."""
        n = self.n
        base = np.exp((4.0 + c1 * np.log(n + 1.0)) * (n + 1.0)) * self.delta
        value = base ** (1.0 / (2.0 * (n + 1.0)))
        return {"value": float(value), "satisfied": bool(value <= 0.5)}


def schedule(eps: float, theta: float = THETA, eta: float = ETA) -> ScheduleParams:
    return ScheduleParams(eps=eps, theta=theta, eta=eta)


# -- contractible pattern classes -------------------------------------------------

_PATTERN_CACHE: dict = {}


def _bond_vals(y: int):
    return ((y - 1, MINUS), (y - 1, PLUS), (y, MINUS), (y, PLUS))


def _state_net(state: tuple) -> tuple:
    net: dict = {}
    for (s, sg), c in state:
        net[s] = net.get(s, 0) + sg * c
    return tuple(sorted((s, v) for s, v in net.items() if v != 0))


def _canon_pattern(net: tuple) -> tuple:
    """Sign-symmetric representative: |Delta| is even under global flip."""
    flipped = tuple(sorted((s, -v) for s, v in net))
    return min(net, flipped)


def contractible_delta_patterns(n: int, sample_seed: int = 0) -> dict:
    """Net frequency-multiplicity vectors of contractible classes, orders <= n.

    Anchored at x = 0; every pattern lives on offsets [-n, n-1].  Orders
    above EXACT_PATTERN_ORDER enumerate a keyed-random subset of transitions
    per state and are flagged approximate.
    """
    key = (n, sample_seed if n > EXACT_PATTERN_ORDER else 0)
    if key in _PATTERN_CACHE:
        return _PATTERN_CACHE[key]
    if n < 1:
        raise BudgetError("order must be >= 1")
    if n > 5:
        raise BudgetError("pattern enumeration capped at order 5")
    level: set = set()
    for quad in combinations_with_replacement(_bond_vals(0), 4):
        state: dict = {}
        for v in quad:
            state[v] = state.get(v, 0) + 1
        st = tuple(sorted(state.items()))
        if _state_net(st):
            level.add(st)
    patterns: set = set()
    patterns.update(_canon_pattern(_state_net(st)) for st in level)
    draw = 0
    for order in range(2, n + 1):
        nxt: set = set()
        for st in level:
            transitions = []
            for (site, sign), cnt in st:
                v = (site, -sign)
                for y in (site, site + 1):
                    for triple in combinations_with_replacement(_bond_vals(y), 3):
                        transitions.append(((site, sign), v, triple))
            if order > EXACT_PATTERN_ORDER and len(transitions) > SAMPLED_TRANSITIONS:
                u = uniform01(sample_seed, np.arange(draw, draw + len(transitions)),
                              stream=order)
                draw += len(transitions)
                idx = np.argsort(u)[:SAMPLED_TRANSITIONS]
                transitions = [transitions[i] for i in idx]
            for vbar, v, triple in transitions:
                state = dict(st)
                state[vbar] -= 1
                if state[vbar] == 0:
                    del state[vbar]
                for val in triple:
                    state[val] = state.get(val, 0) + 1
                st2 = tuple(sorted(state.items()))
                net = _state_net(st2)
                if not net:
                    continue
                nxt.add(st2)
        level = nxt
        patterns.update(_canon_pattern(_state_net(st)) for st in level)
    out = {"n": n, "approximate": n > EXACT_PATTERN_ORDER,
           "patterns": sorted(patterns)}
    for net in out["patterns"]:
        for s, _ in net:
            if not (-n <= s <= n - 1):
                raise AssertionError(f"pattern {net} escapes locality window")
    _PATTERN_CACHE[key] = out
    return out


def min_delta_profile(sites: np.ndarray, n: int, disorder: DisorderRealization,
                      sample_seed: int = 0) -> np.ndarray:
    """min |Delta| over contractible classes anchored at each site."""
    pats = contractible_delta_patterns(n, sample_seed)["patterns"]
    sites = np.asarray(sites, dtype=int)
    omega = disorder.omega_at(np.arange(sites.min() - n, sites.max() + n))
    base = sites.min() - n
    best = np.full(len(sites), np.inf)
    for net in pats:
        acc = np.zeros(len(sites))
        for off, coef in net:
            acc += coef * omega[sites + off - base]
        np.minimum(best, np.abs(acc), out=best)
    return best


@dataclass
class ResonanceReport:
    n: int
    delta: float
    window: tuple
    resonant_flags: np.ndarray
    intervals: list
    min_delta_per_site: np.ndarray
    approximate: bool = False

    def validate(self):
        flagged = set(np.flatnonzero(self.resonant_flags).tolist())
        covered: set = set()
        prev_hi = None
        for lo, hi in self.intervals:
            if hi < lo:
                raise ValueError("empty interval in report")
            if prev_hi is not None and lo <= prev_hi + 1:
                raise ValueError("intervals not disjoint-maximal")
            prev_hi = hi
            covered.update(range(lo - self.window[0], hi - self.window[0] + 1))
        if covered != flagged:
            raise ValueError("intervals do not exactly cover flagged sites")

    def to_json_dict(self) -> dict:
        return {"n": self.n, "delta": self.delta, "window": list(self.window),
                "approximate": self.approximate,
                "flags": self.resonant_flags.astype(int).tolist(),
                "min_delta": self.min_delta_per_site.tolist(),
                "intervals": [list(iv) for iv in self.intervals]}


def _flags_to_intervals(flags: np.ndarray, lo: int) -> list:
    out = []
    i = 0
    n = len(flags)
    while i < n:
        if flags[i]:
            j = i
            while j + 1 < n and flags[j + 1]:
                j += 1
            out.append((lo + i, lo + j))
            i = j + 1
        else:
            i += 1
    return out


def scan_resonances(x_window: tuple, n: int, delta: float,
                    disorder: DisorderRealization,
                    sample_seed: int = 0) -> ResonanceReport:
    """Flag (n, delta)-resonant sites on the window and list maximal runs."""
    lo, hi = int(x_window[0]), int(x_window[1])
    sites = np.arange(lo, hi + 1)
    mins = min_delta_profile(sites, n, disorder, sample_seed)
    flags = mins <= delta
    report = ResonanceReport(
        n=n, delta=float(delta), window=(lo, hi), resonant_flags=flags,
        intervals=_flags_to_intervals(flags, lo), min_delta_per_site=mins,
        approximate=n > EXACT_PATTERN_ORDER)
    report.validate()
    return report


def resonant_interval_at(x: int, n: int, delta: float,
                         disorder: DisorderRealization,
                         max_radius: int = 4096) -> Optional[tuple]:
    """Largest resonant interval containing x, or None when x is not resonant."""
    if min_delta_profile(np.array([x]), n, disorder)[0] > delta:
        return None
    radius = 8
    while True:
        rep = scan_resonances((x - radius, x + radius), n, delta, disorder)
        for lo, hi in rep.intervals:
            if lo <= x <= hi:
                if lo > x - radius and hi < x + radius:
                    return (lo, hi)
        if radius >= max_radius:
            raise BudgetError(f"resonant interval at {x} exceeds radius {max_radius}")
        radius *= 2


# -- Monte Carlo ------------------------------------------------------------------

def wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple:
    if total == 0:
        return (0.0, 1.0)
    p = successes / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * np.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def _pattern_to_reduced(pattern) -> tuple:
    """Monomial or (sites, signs) -> distinct sites and their net multiplicities."""
    if isinstance(pattern, Monomial):
        factors = pattern.factors
    else:
        sites, signs = pattern
        factors = tuple(zip(sites, signs))
    m = Monomial(tuple(factors))
    if in_S(m):
        raise ValueError("pattern lies in the kernel set: Delta is identically 0")
    net: dict = {}
    for s, sg in m.factors:
        net[s] = net.get(s, 0) + sg
    items = sorted((s, v) for s, v in net.items() if v != 0)
    return tuple(s for s, _ in items), np.array([v for _, v in items], dtype=float)


def mc_small_denominator(pattern, deltas, samples: int, spec: DisorderSpec,
                         seed: int = 0) -> dict:
    """Estimate P(|Delta| <= delta) for each delta on common draws.

    Returns per-delta estimates with Wilson intervals and the ratio to delta
    (bounded, by the linear small-denominator law).
    """
    if samples < 10_000:
        raise ValueError("use at least 1e4 samples")
    sites, coefs = _pattern_to_reduced(pattern)
    m = len(sites)
    u = uniform01_matrix(seed, samples, m)
    omega = np.sqrt(spec.ppf(u))
    dvals = np.abs(omega @ coefs)
    rows = []
    for d in np.asarray(deltas, dtype=float):
        k = int(np.count_nonzero(dvals <= d))
        lo, hi = wilson_interval(k, samples)
        est = k / samples
        rows.append({"delta": float(d), "estimate": est, "ci_lo": lo,
                     "ci_hi": hi, "count": k, "ratio": est / d,
                     "ratio_ci": (lo / d, hi / d)})
    ratios = [r["ratio"] for r in rows]
    return {"pattern_sites": list(sites), "pattern_coefs": coefs.tolist(),
            "samples": samples, "rows": rows,
            "fitted_C": float(max(ratios)) if ratios else 0.0}


def difference_density_ratio_oracle(spec: DisorderSpec, grid: int = 200_001) -> float:
    """Limit of P(|omega_a - omega_b| <= delta)/delta as delta -> 0.

    Equals twice the density of the difference at zero, computed by numeric
    quadrature of the squared frequency density: 2 * int rho_omega(u)^2 du,
    with rho_omega(u) = 2 u rho_{omega^2}(u^2).
    """
    lo = np.sqrt(spec.omega_min_sq)
    hi = np.sqrt(spec.omega_max_sq)
    u = np.linspace(lo, hi, grid)
    rho = 2.0 * u * spec.density(u * u)
    return float(2.0 * np.trapezoid(rho * rho, u))


def mc_interval_tail(n: int, deltas, lengths, samples: int, spec: DisorderSpec,
                     seed: int = 0, sample_seed: int = 0) -> dict:
    """P(|R(n, delta; 0)| >= l) for each delta and length on common draws."""
    if samples < 10_000:
        raise ValueError("use at least 1e4 samples")
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    lengths = np.asarray(sorted(int(v) for v in lengths))
    K = int(lengths.max()) + 2
    pats = contractible_delta_patterns(n, sample_seed)["patterns"]
    width = 2 * (K + n) + 1
    u = uniform01_matrix(seed, samples, width)
    omega = np.sqrt(spec.ppf(u))                    # sites -K-n .. K+n
    nsites = 2 * K + 1
    mins = np.full((samples, nsites), np.inf)
    for net in pats:
        acc = np.zeros((samples, nsites))
        for off, coef in net:
            acc += coef * omega[:, n + K + np.arange(-K, K + 1) + off]
        np.minimum(mins, np.abs(acc), out=mins)
    out_rows = []
    for d in deltas:
        flags = mins <= d
        center = K
        left = np.ones(samples, dtype=int)
        run = flags[:, center].astype(bool)
        # extent of the resonant run through the center, censored at +-K
        lcount = np.zeros(samples, dtype=int)
        alive = run.copy()
        for off in range(0, K + 1):
            alive &= flags[:, center - off]
            lcount += alive
        rcount = np.zeros(samples, dtype=int)
        alive = run.copy()
        for off in range(0, K + 1):
            alive &= flags[:, center + off]
            rcount += alive
        size = np.where(run, lcount + rcount - 1, 0)
        for l in lengths:
            k = int(np.count_nonzero(size >= l))
            lo, hi = wilson_interval(k, samples)
            out_rows.append({"delta": float(d), "ell": int(l),
                             "estimate": k / samples, "ci_lo": lo, "ci_hi": hi,
                             "count": k})
    return {"n": n, "samples": samples, "lengths": lengths.tolist(),
            "deltas": deltas.tolist(), "rows": out_rows,
            "approximate": n > EXACT_PATTERN_ORDER}


def log_tail_fit(rows: list, delta: float) -> dict:
    """R^2 and slope of log P(|R| >= l) against l for one delta."""
    pts = [(r["ell"], r["estimate"]) for r in rows
           if r["delta"] == delta and r["estimate"] > 0]
    if len(pts) < 3:
        return {"r2": 0.0, "slope": 0.0, "points": len(pts)}
    ls = np.array([p[0] for p in pts], dtype=float)
    ys = np.log(np.array([p[1] for p in pts]))
    A = np.vstack([ls, np.ones_like(ls)]).T
    coef, res, _, _ = np.linalg.lstsq(A, ys, rcond=None)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    ss_res = float(res[0]) if len(res) else float(np.sum((ys - A @ coef) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"r2": float(r2), "slope": float(coef[0]), "points": len(pts)}
