"""Sparse algebra of polynomials in the oscillator normal coordinates.

A monomial is a product of factors a_x^s with site x and sign s = -1/+1;
the canonical form keeps the factors sorted by (site, sign).  Polynomials
store one complex coefficient per canonical monomial.  Internally each
monomial is an exponent vector over the variables of a site window, packed
four bits per variable into uint64 limbs, so that multiplying monomials is
integer addition and aggregation is a single lexsort/reduceat pass.  All
operations are pure; polynomials are immutable values.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from .lattice import KG, DNLS, DisorderRealization, ChainState, ModelSpec

PRUNE_REL = 1e-14
_NIBBLES_PER_LIMB = 16
_MAX_EXP = 15

MINUS = -1
PLUS = 1


class KernelObstructionError(ValueError):
    """A monomial outside the image of the harmonic bracket blocks a division."""


@dataclass(frozen=True)
class Monomial:
    """Canonical product of normal-coordinate factors."""

    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(sorted(tuple(f) for f in self.factors)))
        for site, sign in self.factors:
            if sign not in (MINUS, PLUS):
                raise ValueError(f"sign must be -1 or +1, got {sign}")

    @property
    def degree(self) -> int:
        return len(self.factors)

    @property
    def sites(self) -> tuple:
        return tuple(f[0] for f in self.factors)

    @property
    def signs(self) -> tuple:
        return tuple(f[1] for f in self.factors)

    def conj_signs(self) -> "Monomial":
        return Monomial(tuple((s, -sg) for s, sg in self.factors))


def in_S(m: Monomial) -> bool:
    """True iff the factors pair into same-site opposite-sign couples."""
    if m.degree % 2:
        return False
    net: dict = {}
    for site, sign in m.factors:
        net[site] = net.get(site, 0) + sign
    return all(v == 0 for v in net.values())


def delta(m: Monomial, disorder: DisorderRealization) -> float:
    """Signed frequency sum of the monomial."""
    if m.degree == 0:
        return 0.0
    return float(sum(sign * disorder.omega_at(site) for site, sign in m.factors))


def _n_limbs(nvars: int) -> int:
    return max(1, -(-nvars // _NIBBLES_PER_LIMB))


def _nibble(v: int):
    return v // _NIBBLES_PER_LIMB, np.uint64(4 * (v % _NIBBLES_PER_LIMB))


def _pack(exps: np.ndarray) -> np.ndarray:
    n, nvars = exps.shape
    keys = np.zeros((n, _n_limbs(nvars)), dtype=np.uint64)
    for v in range(nvars):
        limb, shift = _nibble(v)
        keys[:, limb] |= exps[:, v].astype(np.uint64) << shift
    return keys

def _unpack(keys: np.ndarray, nvars: int) -> np.ndarray:
    n = keys.shape[0]
    exps = np.empty((n, nvars), dtype=np.uint8)
    mask = np.uint64(0xF)
    for v in range(nvars):
        limb, shift = _nibble(v)
        exps[:, v] = ((keys[:, limb] >> shift) & mask).astype(np.uint8)
    return exps


def _lexsort_rows(keys: np.ndarray) -> np.ndarray:
    return np.lexsort(tuple(keys[:, c] for c in range(keys.shape[1] - 1, -1, -1)))


def _aggregate(keys: np.ndarray, coeffs: np.ndarray, prune_rel: float):
    """Sort rows, merge equal keys, drop negligible coefficients."""
    if len(coeffs) == 0:
        return keys.reshape(0, keys.shape[1] if keys.ndim == 2 else 1), coeffs
    order = _lexsort_rows(keys)
    keys = keys[order]
    coeffs = coeffs[order]
    new_group = np.empty(len(coeffs), dtype=bool)
    new_group[0] = True
    np.any(keys[1:] != keys[:-1], axis=1, out=new_group[1:])
    starts = np.flatnonzero(new_group)
    out_keys = keys[starts]
    out_coeffs = np.add.reduceat(coeffs, starts)
    mags = np.abs(out_coeffs)
    top = mags.max(initial=0.0)
    keep = mags > (prune_rel * top if top > 0 else 0.0)
    return out_keys[keep], out_coeffs[keep]


class Polynomial:
    """Immutable sparse polynomial over a site window.

    Variables are indexed 2*(site-lo) for a^- and 2*(site-lo)+1 for a^+.
    """

    __slots__ = ("lo", "nsites", "keys", "coeffs")

    def __init__(self, lo: int, nsites: int, keys: np.ndarray, coeffs: np.ndarray,
                 _canonical: bool = False, prune_rel: float = PRUNE_REL):
        if not _canonical:
            keys, coeffs = _aggregate(keys, coeffs, prune_rel)
        self.lo = int(lo)
        self.nsites = int(nsites)
        self.keys = keys
        self.coeffs = coeffs
        self.keys.setflags(write=False)
        self.coeffs.setflags(write=False)

    # -- constructors ------------------------------------------------------
    @staticmethod
    def zero() -> "Polynomial":
        return Polynomial(0, 0, np.zeros((0, 1), dtype=np.uint64),
                          np.zeros(0, dtype=complex), _canonical=True)

    @staticmethod
    def from_terms(terms: dict, prune_rel: float = 0.0) -> "Polynomial":
        """Build from {Monomial (or factor tuple): coefficient}."""
        items = []
        for m, c in terms.items():
            if not isinstance(m, Monomial):
                m = Monomial(tuple(m))
            items.append((m, complex(c)))
        if not items:
            return Polynomial.zero()
        sites = [s for m, _ in items for s in m.sites]
        lo = min(sites) if sites else 0
        hi = max(sites) if sites else 0
        nsites = hi - lo + 1
        exps = np.zeros((len(items), 2 * nsites), dtype=np.uint8)
        coeffs = np.empty(len(items), dtype=complex)
        for i, (m, c) in enumerate(items):
            for site, sign in m.factors:
                v = 2 * (site - lo) + (0 if sign == MINUS else 1)
                exps[i, v] += 1
            coeffs[i] = c
        if exps.max(initial=0) > _MAX_EXP:
            raise ValueError("exponent exceeds packed capacity (15)")
        return Polynomial(lo, nsites, _pack(exps), coeffs, prune_rel=prune_rel)

    # -- basic queries -----------------------------------------------------
    @property
    def n_terms(self) -> int:
        return len(self.coeffs)

    def is_zero(self) -> bool:
        return self.n_terms == 0

    def exponents(self) -> np.ndarray:
        return _unpack(self.keys, 2 * self.nsites)

    def term_degrees(self) -> np.ndarray:
        if self.n_terms == 0:
            return np.zeros(0, dtype=int)
        return self.exponents().sum(axis=1).astype(int)

    def degrees(self) -> set:
        return set(self.term_degrees().tolist())

    def degree(self) -> Optional[int]:
        """Homogeneous degree, or None for mixed/zero polynomials."""
        ds = self.degrees()
        return ds.pop() if len(ds) == 1 else None

    def max_abs_coeff(self) -> float:
        return float(np.abs(self.coeffs).max(initial=0.0))

    def terms(self) -> Iterator[tuple]:
        exps = self.exponents()
        for i in range(self.n_terms):
            factors = []
            for v in np.flatnonzero(exps[i]):
                site = int(self.lo + v // 2)
                sign = MINUS if v % 2 == 0 else PLUS
                factors.extend([(site, sign)] * int(exps[i, v]))
            yield Monomial(tuple(factors)), complex(self.coeffs[i])

    def coefficient(self, m: Monomial) -> complex:
        single = Polynomial.from_terms({m: 1.0})
        a = self.aligned(min(self.lo, single.lo),
                         max(self.lo + self.nsites, single.lo + single.nsites) - min(self.lo, single.lo))
        b = single.aligned(a.lo, a.nsites)
        idx = np.flatnonzero(np.all(a.keys == b.keys[0], axis=1))
        return complex(a.coeffs[idx[0]]) if len(idx) else 0.0j

    def support(self) -> Optional[tuple]:
        """Smallest site interval carrying a factor, or None for constants/zero."""
        if self.n_terms == 0:
            return None
        exps = self.exponents()
        used = np.flatnonzero(exps.any(axis=0))
        if len(used) == 0:
            return None
        return (self.lo + int(used[0]) // 2, self.lo + int(used[-1]) // 2)

    # -- window management -------------------------------------------------
    def aligned(self, lo: int, nsites: int) -> "Polynomial":
        if lo == self.lo and nsites == self.nsites:
            return self
        if self.n_terms == 0:
            return Polynomial(lo, nsites, np.zeros((0, _n_limbs(2 * nsites)), dtype=np.uint64),
                              self.coeffs, _canonical=True)
        if lo > self.lo or lo + nsites < self.lo + self.nsites:
            sup = self.support()
            if sup is not None and (sup[0] < lo or sup[1] >= lo + nsites):
                raise ValueError("alignment would truncate support")
        exps = self.exponents()
        out = np.zeros((self.n_terms, 2 * nsites), dtype=np.uint8)
        shift = 2 * (self.lo - lo)
        out[:, shift:shift + 2 * self.nsites] = exps
        return Polynomial(lo, nsites, _pack(out), self.coeffs.copy(), _canonical=False,
                          prune_rel=0.0)

    def compact(self) -> "Polynomial":
        sup = self.support()
        if sup is None:
            return Polynomial(self.lo, 1, np.zeros((self.n_terms, 1), dtype=np.uint64),
                              self.coeffs, _canonical=True) if self.n_terms else Polynomial.zero()
        return self.aligned(sup[0], sup[1] - sup[0] + 1)

    @staticmethod
    def _union_window(f: "Polynomial", g: "Polynomial") -> tuple:
        if f.n_terms == 0:
            return (g.lo, max(g.nsites, 1))
        if g.n_terms == 0:
            return (f.lo, max(f.nsites, 1))
        lo = min(f.lo, g.lo)
        hi = max(f.lo + f.nsites, g.lo + g.nsites)
        return (lo, hi - lo)

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other: "Polynomial") -> "Polynomial":
        lo, n = Polynomial._union_window(self, other)
        a = self.aligned(lo, n)
        b = other.aligned(lo, n)
        return Polynomial(lo, n, np.vstack([a.keys, b.keys]),
                          np.concatenate([a.coeffs, b.coeffs]))

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + (other * (-1.0))

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return self._poly_mul(other)
        c = complex(other)
        if c == 0:
            return Polynomial.zero()
        return Polynomial(self.lo, self.nsites, self.keys.copy(), self.coeffs * c,
                          _canonical=True)

    __rmul__ = __mul__

    def _poly_mul(self, other: "Polynomial") -> "Polynomial":
        if self.n_terms == 0 or other.n_terms == 0:
            return Polynomial.zero()
        lo, n = Polynomial._union_window(self, other)
        a = self.aligned(lo, n)
        b = other.aligned(lo, n)
        da = a.term_degrees().max(initial=0)
        db = b.term_degrees().max(initial=0)
        if da + db > _MAX_EXP:
            raise ValueError(f"product degree {da + db} exceeds packed capacity")
        keys = (a.keys[:, None, :] + b.keys[None, :, :]).reshape(-1, a.keys.shape[1])
        coeffs = np.multiply.outer(a.coeffs, b.coeffs).ravel()
        return Polynomial(lo, n, keys, coeffs)

    def power(self, k: int) -> "Polynomial":
        if k < 0:
            raise ValueError("negative power")
        result = Polynomial.from_terms({Monomial(()): 1.0})
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base if k > 1 else base
            k >>= 1
        return result

    def __neg__(self):
        return self * (-1.0)

    # -- structure maps ------------------------------------------------------
    def p_image(self) -> "Polynomial":
        """Flip every factor sign, coefficients unchanged (an involution)."""
        if self.n_terms == 0:
            return self
        exps = self.exponents()
        swapped = exps.reshape(self.n_terms, self.nsites, 2)[:, :, ::-1].reshape(exps.shape)
        return Polynomial(self.lo, self.nsites, _pack(np.ascontiguousarray(swapped)),
                          self.coeffs.copy(), prune_rel=0.0)

    def delta_values(self, disorder: DisorderRealization) -> np.ndarray:
        """Per-term signed frequency sums."""
        if self.n_terms == 0:
            return np.zeros(0)
        exps = self.exponents().astype(np.int64).reshape(self.n_terms, self.nsites, 2)
        net = exps[:, :, 1] - exps[:, :, 0]             # e+ - e-
        w = disorder.omega_at(np.arange(self.lo, self.lo + self.nsites))
        return net @ w

    def s_mask(self) -> np.ndarray:
        """Per-term flags: True where the monomial pairs off (kernel direction)."""
        if self.n_terms == 0:
            return np.zeros(0, dtype=bool)
        exps = self.exponents().reshape(self.n_terms, self.nsites, 2)
        return np.all(exps[:, :, 0] == exps[:, :, 1], axis=1)

    # -- evaluation -----------------------------------------------------------
    def evaluate(self, point: "PhasePoint") -> complex:
        return complex(self.evaluate_batch(point.aminus[None, :], point.offset)[0])

    def evaluate_batch(self, aminus_rows: np.ndarray, offset: int) -> np.ndarray:
        """Evaluate at many phase points (rows of a^- values starting at offset).

        Sites outside the supplied window evaluate as zero, matching the chain
        convention for compactly supported states.
        """
        if self.n_terms == 0:
            return np.zeros(len(aminus_rows), dtype=complex)
        t_total = len(aminus_rows)
        exps = self.exponents()
        nvars = exps.shape[1]
        vals = np.empty((t_total, nvars), dtype=complex)
        sites = self.lo + np.arange(self.nsites) - offset
        valid = (sites >= 0) & (sites < aminus_rows.shape[1])
        am = np.zeros((t_total, self.nsites), dtype=complex)
        am[:, valid] = aminus_rows[:, sites[valid]]
        vals[:, 0::2] = am
        vals[:, 1::2] = np.conj(am)
        max_e = int(exps.max())
        out = np.empty(t_total, dtype=complex)
        chunk = max(1, int(2e6 // max(self.n_terms, 1)))
        for start in range(0, t_total, chunk):
            sl = slice(start, min(start + chunk, t_total))
            tt = sl.stop - sl.start
            acc = np.broadcast_to(self.coeffs, (tt, self.n_terms)).copy()
            for e in range(1, max_e + 1):
                for v in np.flatnonzero(exps.max(axis=0) >= e):
                    rows = exps[:, v] >= e
                    acc[:, rows] *= vals[sl, v][:, None]
            out[sl] = acc.sum(axis=1)
        return out

    # -- serialization ----------------------------------------------------------
    def to_json_terms(self) -> list:
        rows = sorted(self.terms(), key=lambda mc: mc[0].factors)
        return [{"sites": list(m.sites), "signs": list(m.signs),
                 "re": float(c.real), "im": float(c.imag)} for m, c in rows]

    @staticmethod
    def from_json_terms(data: Iterable[dict]) -> "Polynomial":
        terms = {}
        for row in data:
            m = Monomial(tuple(zip(row["sites"], row["signs"])))
            terms[m] = terms.get(m, 0.0) + complex(row["re"], row["im"])
        return Polynomial.from_terms(terms)

    def __repr__(self):
        return f"Polynomial({self.n_terms} terms, window[{self.lo},{self.lo + self.nsites - 1}])"


def random_polynomial(rng: np.random.Generator, window: tuple, degree: int,
                      n_terms: int, homogeneous: bool = True,
                      parity: Optional[str] = None) -> Polynomial:
    """Random sparse polynomial for property tests.

    parity 'sym'/'skew' symmetrizes under the sign-flip map; 'real' makes
    coefficients satisfy conj(F(m)) = F(flip m) so KG evaluations are real.
    """
    lo, hi = window
    sites = rng.integers(lo, hi + 1, size=(n_terms, degree))
    signs = rng.choice([-1, 1], size=(n_terms, degree))
    terms: dict = {}
    for i in range(n_terms):
        d = degree if homogeneous else int(rng.integers(1, degree + 1))
        m = Monomial(tuple((int(sites[i, k]), int(signs[i, k])) for k in range(d)))
        terms[m] = terms.get(m, 0.0) + complex(rng.normal(), rng.normal())
    p = Polynomial.from_terms(terms)
    if parity == "sym":
        p = (p + p.p_image()) * 0.5
    elif parity == "skew":
        p = (p - p.p_image()) * 0.5
    elif parity == "real":
        flipped = Polynomial(p.lo, p.nsites, p.p_image().keys.copy(),
                             np.conj(p.p_image().coeffs), _canonical=True)
        p = (p + flipped) * 0.5
    return p


def poisson_bracket(f: Polynomial, g: Polynomial, prune_rel: float = PRUNE_REL) -> Polynomial:
    """Bilinear bracket built from the elementary contraction rule and Leibniz."""
    if f.n_terms == 0 or g.n_terms == 0:
        return Polynomial.zero()
    lo, n = Polynomial._union_window(f, g)
    a = f.aligned(lo, n)
    b = g.aligned(lo, n)
    nvars = 2 * n
    limbs = a.keys.shape[1]
    mask = np.uint64(0xF)

    def dvar(p: Polynomial, v: int):
        limb, shift = _nibble(v)
        e = ((p.keys[:, limb] >> shift) & mask).astype(np.int64)
        rows = np.flatnonzero(e)
        if len(rows) == 0:
            return None
        keys = p.keys[rows].copy()
        keys[:, limb] -= np.uint64(1) << shift
        return keys, p.coeffs[rows] * e[rows]

    acc_keys = [np.zeros((0, limbs), dtype=np.uint64)]
    acc_coeffs = [np.zeros(0, dtype=complex)]
    pending = 0
    out_keys, out_coeffs = acc_keys[0], acc_coeffs[0]

    def flush():
        nonlocal out_keys, out_coeffs, acc_keys, acc_coeffs, pending
        keys = np.vstack([out_keys] + acc_keys[1:])
        coeffs = np.concatenate([out_coeffs] + acc_coeffs[1:])
        out_keys, out_coeffs = _aggregate(keys, coeffs, 0.0)
        acc_keys, acc_coeffs = [out_keys], [out_coeffs]
        pending = 0

    for s in range(n):
        for sigma_f in (MINUS, PLUS):
            vf = 2 * s + (0 if sigma_f == MINUS else 1)
            vg = 2 * s + (1 if sigma_f == MINUS else 0)
            df = dvar(a, vf)
            if df is None:
                continue
            dg = dvar(b, vg)
            if dg is None:
                continue
            kf, cf = df
            kg, cg = dg
            keys = (kf[:, None, :] + kg[None, :, :]).reshape(-1, limbs)
            coeffs = (-1j * sigma_f) * np.multiply.outer(cf, cg).ravel()
            acc_keys.append(keys)
            acc_coeffs.append(coeffs)
            pending += len(coeffs)
            if pending > 4_000_000:
                flush()
    flush()
    top = np.abs(out_coeffs).max(initial=0.0)
    keep = np.abs(out_coeffs) > prune_rel * top
    return Polynomial(lo, n, out_keys[keep], out_coeffs[keep], _canonical=True)


# -- change of variables -------------------------------------------------------

@dataclass(frozen=True)
class PhasePoint:
    """Complex a^- values on a window; a^+ is the conjugate."""

    offset: int
    aminus: np.ndarray
    kind: str = KG

    @property
    def aplus(self) -> np.ndarray:
        return np.conj(self.aminus)

    def value(self, site: int, sign: int) -> complex:
        i = site - self.offset
        if i < 0 or i >= len(self.aminus):
            return 0.0j
        return complex(self.aminus[i]) if sign == MINUS else complex(np.conj(self.aminus[i]))


def to_normal(state: ChainState, disorder: DisorderRealization) -> PhasePoint:
    """Map a chain state to normal coordinates (identity on psi for DNLS)."""
    if state.kind == DNLS:
        return PhasePoint(offset=state.offset, aminus=state.psi.copy(), kind=DNLS)
    lo, hi = state.window
    w = disorder.omega_at(np.arange(lo, hi + 1))
    aminus = np.sqrt(w / 2.0) * (state.q + 1j * state.p / w)
    return PhasePoint(offset=lo, aminus=aminus, kind=KG)


def from_normal(point: PhasePoint, disorder: DisorderRealization) -> ChainState:
    if point.kind == DNLS:
        return ChainState(kind=DNLS, offset=point.offset, psi=point.aminus.copy())
    lo = point.offset
    w = disorder.omega_at(np.arange(lo, lo + len(point.aminus)))
    ap = np.conj(point.aminus)
    q = ((ap + point.aminus) / np.sqrt(2.0 * w)).real
    p = (1j * np.sqrt(w / 2.0) * (ap - point.aminus)).real
    return ChainState(kind=KG, offset=lo, q=q, p=p)


# -- expansions of the Hamiltonian pieces and the current ------------------------

def _site_var_poly(site: int, sign: int, coeff: complex) -> Polynomial:
    return Polynomial.from_terms({Monomial(((site, sign),)): coeff})


def _q_poly(site: int, disorder: DisorderRealization) -> Polynomial:
    c = 1.0 / np.sqrt(2.0 * float(disorder.omega_at(site)))
    return Polynomial.from_terms({Monomial(((site, PLUS),)): c,
                                  Monomial(((site, MINUS),)): c})


def _p_poly(site: int, disorder: DisorderRealization) -> Polynomial:
    c = 1j * np.sqrt(float(disorder.omega_at(site)) / 2.0)
    return Polynomial.from_terms({Monomial(((site, PLUS),)): c,
                                  Monomial(((site, MINUS),)): -c})


def expand_h_har(window: tuple, disorder: DisorderRealization) -> Polynomial:
    """Diagonal harmonic part: sum of omega_x a_x^+ a_x^- over the window."""
    lo, hi = window
    terms = {}
    for x in range(lo, hi + 1):
        terms[Monomial(((x, MINUS), (x, PLUS)))] = float(disorder.omega_at(x))
    return Polynomial.from_terms(terms)


def _bond_poly(y: int, disorder: DisorderRealization, model: ModelSpec) -> Polynomial:
    """Anharmonic bond energy between sites y-1 and y as a polynomial."""
    if model.g == 0:
        return Polynomial.zero()
    if model.kind == KG:
        L = _q_poly(y - 1, disorder) - _q_poly(y, disorder)
        return L.power(4) * (model.g / 4.0)
    bm = _site_var_poly(y - 1, MINUS, 1.0) - _site_var_poly(y, MINUS, 1.0)
    bp = _site_var_poly(y - 1, PLUS, 1.0) - _site_var_poly(y, PLUS, 1.0)
    return (bp * bm).power(2) * (model.g / 4.0)


def expand_h_an(window: tuple, disorder: DisorderRealization,
                model: ModelSpec) -> Polynomial:
    """Anharmonic part: every bond whose support intersects the window."""
    lo, hi = window
    total = Polynomial.zero()
    for y in range(lo, hi + 2):
        total = total + _bond_poly(y, disorder, model)
    return total


def local_energy_poly(x: int, disorder: DisorderRealization,
                      model: ModelSpec) -> Polynomial:
    """H_x as a polynomial (onsite harmonic plus the bond toward x+1)."""
    har = Polynomial.from_terms({Monomial(((x, MINUS), (x, PLUS))): float(disorder.omega_at(x))})
    return har + _bond_poly(x + 1, disorder, model)


def expand_current(x: int, disorder: DisorderRealization,
                   model: ModelSpec) -> Polynomial:
    """Current j_x in normal coordinates.

    KG: the direct product g p_x (q_{x-1} - q_x)^3, degree 4 on sites {x-1, x}.
    DNLS: the bracket of neighboring local energies (degree 4 + 6 mix).
    """
    if model.g == 0:
        return Polynomial.zero()
    if model.kind == KG:
        L = _q_poly(x - 1, disorder) - _q_poly(x, disorder)
        return _p_poly(x, disorder) * L.power(3) * model.g
    return poisson_bracket(local_energy_poly(x - 1, disorder, model),
                           local_energy_poly(x, disorder, model))


# -- finite-difference bracket oracle ---------------------------------------------

def bracket_fd(f: Polynomial, g: Polynomial, state: ChainState,
               disorder: DisorderRealization, step: float = 1e-5) -> complex:
    """Central-difference evaluation of grad_p f . grad_q g - grad_q f . grad_p g.

    Independent of the symbolic bracket; works on KG states through the change
    of variables.  Used as the bracket-duality oracle.
    """
    if state.kind != KG:
        raise ValueError("finite-difference oracle is defined on KG states")
    lo = state.offset
    n = state.n_sites
    w = disorder.omega_at(np.arange(lo, lo + n))

    def aminus_of(q, p):
        return np.sqrt(w / 2.0) * (q + 1j * p / w)

    # rows: for each site i, +q, -q, +p, -p perturbations
    rows = np.empty((4 * n, n), dtype=complex)
    base_q, base_p = state.q, state.p
    for i in range(n):
        for k, (dq, dp) in enumerate(((step, 0.0), (-step, 0.0),
                                      (0.0, step), (0.0, -step))):
            q = base_q.copy(); p = base_p.copy()
            q[i] += dq; p[i] += dp
            rows[4 * i + k] = aminus_of(q, p)
    fv = f.evaluate_batch(rows, lo)
    gv = g.evaluate_batch(rows, lo)
    dfdq = (fv[0::4] - fv[1::4]) / (2 * step)
    dfdp = (fv[2::4] - fv[3::4]) / (2 * step)
    dgdq = (gv[0::4] - gv[1::4]) / (2 * step)
    dgdp = (gv[2::4] - gv[3::4]) / (2 * step)
    return complex(np.sum(dfdp * dgdq - dfdq * dgdp))
