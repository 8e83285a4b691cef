"""Chain models: disorder, local energies, currents, initial conditions.

Two models share one interface.  The KG chain carries real (q, p) with
onsite frequencies omega_x^2 and quartic bond potential (g/4)(q_x - q_{x+1})^4.
The DNLS chain carries complex psi with energy
omega_x |psi_x|^2 + (g/4)|psi_x - psi_{x+1}|^4.  Sites outside the stored
window are exactly zero, consistent with compactly supported initial data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rng import uniform01

KG = "KG"
DNLS = "DNLS"

_BUMP_GRID = 4097


class ConfigurationError(ValueError):
    """Invalid model / disorder / initial-condition specification."""


class ValidationError(ValueError):
    """Constructed data violates a declared invariant."""


@dataclass(frozen=True)
class DisorderSpec:
    """I.i.d. law of the squared frequencies omega_x^2.

    density_kind 'uniform' is the computational default; 'smooth-bump' is the
    C-infinity compactly supported option (normalized bump on the support).
    """

    omega_min_sq: float = 0.5
    omega_max_sq: float = 1.5
    density_kind: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.omega_min_sq < self.omega_max_sq < np.inf):
            raise ConfigurationError(
                f"need 0 < omega_min_sq < omega_max_sq, got "
                f"[{self.omega_min_sq}, {self.omega_max_sq}]")
        if self.density_kind not in ("uniform", "smooth-bump"):
            raise ConfigurationError(f"unknown density_kind {self.density_kind!r}")

    def density(self, w2: np.ndarray) -> np.ndarray:
        """Probability density of omega^2 evaluated at w2."""
        lo, hi = self.omega_min_sq, self.omega_max_sq
        w2 = np.asarray(w2, dtype=float)
        if self.density_kind == "uniform":
            out = np.where((w2 >= lo) & (w2 <= hi), 1.0 / (hi - lo), 0.0)
            return out
        u = 2.0 * (w2 - lo) / (hi - lo) - 1.0
        inside = np.abs(u) < 1.0
        out = np.zeros_like(w2)
        out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
        norm = _bump_normalization() * (hi - lo) / 2.0
        return out / norm

    def ppf(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF, used by the keyed sampler."""
        lo, hi = self.omega_min_sq, self.omega_max_sq
        if self.density_kind == "uniform":
            return lo + (hi - lo) * u
        grid, cdf = _bump_cdf()
        x = np.interp(u, cdf, grid)
        return lo + (hi - lo) * (x + 1.0) / 2.0


_bump_cache: dict = {}


def _bump_normalization() -> float:
    grid, cdf = _bump_cdf()
    return _bump_cache["norm"]


def _bump_cdf():
    if "grid" not in _bump_cache:
        x = np.linspace(-1.0, 1.0, _BUMP_GRID)
        f = np.zeros_like(x)
        inner = np.abs(x) < 1.0
        f[inner] = np.exp(-1.0 / (1.0 - x[inner] ** 2))
        c = np.concatenate([[0.0], np.cumsum((f[1:] + f[:-1]) * np.diff(x) / 2.0)])
        _bump_cache["norm"] = c[-1]
        _bump_cache["grid"] = x
        _bump_cache["cdf"] = c / c[-1]
    return _bump_cache["grid"], _bump_cache["cdf"]


@dataclass(frozen=True)
class DisorderRealization:
    """Frozen omega_x^2 values on an integer window [left, right]."""

    left: int
    right: int
    omega_sq: np.ndarray
    seed: int
    spec: DisorderSpec

    def __post_init__(self):
        if len(self.omega_sq) != self.right - self.left + 1:
            raise ValidationError("omega_sq length does not match window")

    @property
    def window(self) -> tuple[int, int]:
        return (self.left, self.right)

    def omega_sq_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=int)
        if np.any(x < self.left) or np.any(x > self.right):
            raise IndexError(f"site outside disorder window [{self.left},{self.right}]")
        return self.omega_sq[x - self.left]

    def omega_at(self, x) -> np.ndarray:
        return np.sqrt(self.omega_sq_at(x))

    def extended(self, left: int, right: int) -> "DisorderRealization":
        """Same realization on an enlarged window (keyed sampling keeps old values).

        Refuses to extend hand-built realizations whose values do not match
        the keyed stream for their seed.
        """
        left = min(left, self.left)
        right = max(right, self.right)
        out = sample_disorder(self.spec, (left, right))
        overlap = out.omega_sq[self.left - left: self.right - left + 1]
        if not np.array_equal(overlap, self.omega_sq):
            raise ValidationError(
                "realization values are not reproducible from the seed; "
                "construct it on a window large enough for the run")
        return out


def sample_disorder(spec: DisorderSpec, window: tuple[int, int]) -> DisorderRealization:
    """Draw i.i.d. omega_x^2 on the window; value at x depends only on (seed, x)."""
    left, right = int(window[0]), int(window[1])
    if right < left:
        raise ConfigurationError(f"empty window {window}")
    sites = np.arange(left, right + 1, dtype=np.int64)
    u = uniform01(spec.seed, sites)
    return DisorderRealization(left=left, right=right, omega_sq=spec.ppf(u),
                               seed=spec.seed, spec=spec)


@dataclass(frozen=True)
class ModelSpec:
    kind: str = KG
    g: float = 1.0
    disorder: DisorderSpec = field(default_factory=DisorderSpec)

    def __post_init__(self):
        if self.kind not in (KG, DNLS):
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.g < 0:
            raise ConfigurationError(f"quartic coupling must be >= 0, got {self.g}")


@dataclass
class ChainState:
    """Phase-space configuration on a finite window starting at `offset`.

    KG states hold (q, p); DNLS states hold psi.  Owned by a single runner;
    everything else treats it as a value.
    """

    kind: str
    offset: int
    q: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    time: float = 0.0

    def __post_init__(self):
        if self.kind == KG:
            if self.q is None or self.p is None or len(self.q) != len(self.p):
                raise ValidationError("KG state needs q,p of equal length")
            if self.psi is not None:
                raise ValidationError("KG state must not carry psi")
        elif self.kind == DNLS:
            if self.psi is None:
                raise ValidationError("DNLS state needs psi")
            if self.q is not None or self.p is not None:
                raise ValidationError("DNLS state must not carry q,p")
        else:
            raise ValidationError(f"unknown state kind {self.kind!r}")

    @property
    def n_sites(self) -> int:
        return len(self.q) if self.kind == KG else len(self.psi)

    @property
    def window(self) -> tuple[int, int]:
        return (self.offset, self.offset + self.n_sites - 1)

    def copy(self) -> "ChainState":
        return ChainState(
            kind=self.kind, offset=self.offset,
            q=None if self.q is None else self.q.copy(),
            p=None if self.p is None else self.p.copy(),
            psi=None if self.psi is None else self.psi.copy(),
            time=self.time)


@dataclass(frozen=True)
class InitialCondition:
    """Data supported on an interval containing 0 with its maximum at site 0."""

    support: tuple[int, int] = (0, 0)
    mode: str = "momentum-kick"
    E0: float = 1.0
    custom_values: Optional[dict] = None

    def __post_init__(self):
        lo, hi = self.support
        if not (lo <= 0 <= hi):
            raise ConfigurationError(f"support {self.support} must contain 0")
        if self.E0 <= 0:
            raise ConfigurationError("E0 must be positive")
        if self.mode not in ("momentum-kick", "custom"):
            raise ConfigurationError(f"unknown initial mode {self.mode!r}")
        if self.mode == "custom" and not self.custom_values:
            raise ConfigurationError("custom mode needs custom_values")


def local_energy_profile(state: ChainState, disorder: DisorderRealization,
                         g: float) -> np.ndarray:
    """H_x for every stored site; bond x is the one between x and x+1."""
    lo, hi = state.window
    w2 = disorder.omega_sq_at(np.arange(lo, hi + 1))
    if state.kind == KG:
        q, p = state.q, state.p
        dq = np.empty(len(q))
        dq[:-1] = q[:-1] - q[1:]
        dq[-1] = q[-1]                       # neighbor outside window is 0
        return 0.5 * p * p + 0.5 * w2 * q * q + 0.25 * g * dq ** 4
    psi = state.psi
    B = np.empty(len(psi), dtype=complex)
    B[:-1] = psi[:-1] - psi[1:]
    B[-1] = psi[-1]
    absB2 = B.real * B.real + B.imag * B.imag
    return np.sqrt(w2) * (psi.real ** 2 + psi.imag ** 2) + 0.25 * g * absB2 ** 2


def local_energy(state: ChainState, disorder: DisorderRealization, x: int,
                 g: float) -> float:
    """H_x; sites outside the stored window report 0."""
    lo, hi = state.window
    if x < lo or x > hi:
        # only a bond from x = lo-1 into the window could contribute
        if state.kind == KG and x == lo - 1:
            return float(0.25 * g * state.q[0] ** 4)
        if state.kind == DNLS and x == lo - 1:
            return float(0.25 * g * abs(state.psi[0]) ** 4)
        return 0.0
    return float(local_energy_profile(state, disorder, g)[x - lo])


def total_energy(state: ChainState, disorder: DisorderRealization, g: float) -> float:
    lo, hi = state.window
    w2 = disorder.omega_sq_at(np.arange(lo, hi + 1))
    if state.kind == KG:
        q, p = state.q, state.p
        qe = np.concatenate([[0.0], q, [0.0]])
        dq = qe[:-1] - qe[1:]
        return float(0.5 * np.dot(p, p) + 0.5 * np.dot(w2 * q, q)
                     + 0.25 * g * np.sum(dq ** 4))
    psi = state.psi
    pe = np.concatenate([[0.0 + 0j], psi, [0.0 + 0j]])
    B = pe[:-1] - pe[1:]
    absB2 = B.real * B.real + B.imag * B.imag
    n2 = psi.real ** 2 + psi.imag ** 2
    return float(np.dot(np.sqrt(w2), n2) + 0.25 * g * np.sum(absB2 ** 2))


def current(state: ChainState, disorder: DisorderRealization, x: int,
            g: float) -> float:
    """Energy current j_x between sites x-1 and x.

    KG: j_x = g p_x (q_{x-1} - q_x)^3.
    DNLS: the bracket of neighboring local energies, whose closed form
    (derived once symbolically, cached here) is
      j_x = g w_x |B1|^2 Im(conj(B1) psi_x) + (g^2/2)|B1|^2|B2|^2 Im(conj(B1) B2)
    with B1 = psi_{x-1} - psi_x, B2 = psi_x - psi_{x+1}.
    """
    lo, hi = state.window
    if state.kind == KG:
        if x <= lo or x > hi:                # needs q_{x-1}, p_x inside
            if x == lo:                       # q_{x-1} = 0 outside
                return float(g * state.p[0] * (-state.q[0]) ** 3)
            return 0.0
        q, p = state.q, state.p
        i = x - lo
        return float(g * p[i] * (q[i - 1] - q[i]) ** 3)
    psi = state.psi
    if x < lo or x > hi:
        return 0.0                            # psi_x = 0 kills both terms

    def at(y):
        return psi[y - lo] if lo <= y <= hi else 0.0 + 0.0j

    b1 = at(x - 1) - at(x)
    b2 = at(x) - at(x + 1)
    wx = float(disorder.omega_at(x))
    j4 = g * wx * abs(b1) ** 2 * (np.conj(b1) * at(x)).imag
    j6 = 0.5 * g * g * abs(b1) ** 2 * abs(b2) ** 2 * (np.conj(b1) * b2).imag
    return float(j4 + j6)


def current_profile(state: ChainState, disorder: DisorderRealization,
                    g: float) -> np.ndarray:
    """j_x for x = offset .. offset + n_sites (length n_sites + 1)."""
    lo, hi = state.window
    if state.kind == KG:
        q, p = state.q, state.p
        qe = np.concatenate([[0.0], q])
        pe = np.concatenate([p, [0.0]])
        return g * pe * (qe - np.concatenate([q, [0.0]])) ** 3
    psi = state.psi
    pe = np.concatenate([[0.0 + 0j], psi, [0.0 + 0j]])
    B = pe[:-1] - pe[1:]                     # B[i] = psi_{lo+i-1} - psi_{lo+i}
    absB2 = B.real * B.real + B.imag * B.imag
    w = disorder.omega_at(np.arange(lo, hi + 1))
    j = np.zeros(len(psi) + 1)
    j4 = g * w * absB2[:-1] * (np.conj(B[:-1]) * psi).imag
    j6 = 0.5 * g * g * absB2[:-1] * absB2[1:] * (np.conj(B[:-1]) * B[1:]).imag
    j[:-1] = j4 + j6
    # current at hi+1 only involves B at the right edge and psi_{hi+1} = 0
    return j


def current_bound_constant(model: ModelSpec, disorder: DisorderRealization,
                           E0: float) -> float:
    """C such that |j_x| <= C (H_{x-1}^2 + H_x^2 + H_{x-1} + H_x) holds.

    KG chain of inequalities: |p| <= sqrt(2 H), |q| <= sqrt(2 H)/omega_-, so
    |j| <= g sqrt(2 H_x) (sqrt(2H_{x-1}) + sqrt(2H_x))^3 / omega_-^3
        <= (4 g/omega_-^3)(sqrt(H_{x-1}) + sqrt(H_x))^4 <= (32 g/omega_-^3)(H_{x-1}^2+H_x^2+H_{x-1}+H_x)
    using (a+b)^4 <= 8(a^2+b^2)^2 and s^2 <= s^2 + s.
    DNLS adds |psi| <= sqrt(H/omega_-) and a degree-6 term bounded through the
    conserved total energy, so C also carries E0 (constants may depend on it).
    """
    wmin = np.sqrt(model.disorder.omega_min_sq)
    wmax = np.sqrt(model.disorder.omega_max_sq)
    g = model.g
    if model.kind == KG:
        return 32.0 * g / wmin ** 3
    c4 = 32.0 * g * wmax / wmin ** 2
    c6 = 128.0 * g * g / wmin ** 3 * max(E0, 1.0)
    return c4 + c6


def build_initial(ic: InitialCondition, disorder: DisorderRealization,
                  model: ModelSpec, pad: int = 24) -> ChainState:
    """Construct the t=0 state, checking the max-at-0 assumption."""
    lo = min(ic.support[0], 0) - pad
    hi = max(ic.support[1], 0) + pad
    n = hi - lo + 1
    if lo < disorder.left or hi > disorder.right:
        disorder = disorder.extended(lo, hi)
    if ic.mode == "momentum-kick":
        if model.kind == KG:
            q = np.zeros(n)
            p = np.zeros(n)
            p[-lo] = np.sqrt(2.0 * ic.E0)
            state = ChainState(kind=KG, offset=lo, q=q, p=p)
        else:
            w0 = float(disorder.omega_at(0))
            if model.g > 0:
                r2 = (-w0 + np.sqrt(w0 * w0 + model.g * ic.E0)) / (model.g / 2.0)
            else:
                r2 = ic.E0 / w0
            psi = np.zeros(n, dtype=complex)
            psi[-lo] = np.sqrt(r2)
            state = ChainState(kind=DNLS, offset=lo, psi=psi)
    else:
        vals = ic.custom_values
        if model.kind == KG:
            q = np.zeros(n)
            p = np.zeros(n)
            for site, qq in vals.get("q", {}).items():
                q[int(site) - lo] = qq
            for site, pp in vals.get("p", {}).items():
                p[int(site) - lo] = pp
            state = ChainState(kind=KG, offset=lo, q=q, p=p)
        else:
            psi = np.zeros(n, dtype=complex)
            for site, v in vals.get("psi", {}).items():
                psi[int(site) - lo] = complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)
            state = ChainState(kind=DNLS, offset=lo, psi=psi)

    prof = local_energy_profile(state, disorder, model.g)
    h0 = prof[-lo]
    worst = int(np.argmax(prof))
    if prof[worst] > h0 * (1 + 1e-12):
        raise ValidationError(
            f"initial condition has H_{worst + lo} = {prof[worst]:.6g} exceeding "
            f"H_0 = {h0:.6g} (maximum must sit at site 0)")
    if ic.mode == "momentum-kick" and abs(h0 - ic.E0) > 1e-12 * ic.E0:
        raise ValidationError(f"constructed H_0 = {h0!r} != E0 = {ic.E0!r}")
    return state


def norm2(state: ChainState) -> float:
    """Conserved DNLS norm sum |psi_x|^2 (gauge symmetry)."""
    if state.kind != DNLS:
        raise ValidationError("norm2 is a DNLS observable")
    return float(np.sum(state.psi.real ** 2 + state.psi.imag ** 2))
