"""Time integration on a growing window, with observables and stopping times.

KG uses velocity Verlet (or a Yoshida 4th-order composition); DNLS uses
Strang splitting with the rotation carried in the interaction picture: the
stored array is phi = e^{+i w t} psi and phases are computed fresh from t
every step, which keeps the conserved norm free of the linearly accumulating
rounding bias that repeated multiplication by e^{-i w h/2} produces.

Energy drift is reported as a rate: the least-squares slope of Htot(t)/Htot(0)
per unit time.  Symplectic schemes bound the oscillation of H (amplitude
O(h^2), recorded separately as energy_error_amplitude) but have no secular
trend, so the rate is the meaningful conservation gate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lattice import (KG, DNLS, ChainState, DisorderRealization, ModelSpec,
                      ConfigurationError, ValidationError,
                      local_energy_profile, total_energy, current_profile, norm2)

KG_SCHEMES = ("velocity-verlet", "yoshida4")
DNLS_SCHEMES = ("strang-split", "implicit-midpoint")

TIE_TOL = 1e-12


class IntegrationFailure(RuntimeError):
    """Raised when the integrator leaves its declared conservation envelope."""

    def __init__(self, message: str, suggested_step: Optional[float] = None):
        super().__init__(message)
        self.suggested_step = suggested_step


@dataclass(frozen=True)
class IntegratorSpec:
    scheme: str = "velocity-verlet"
    step: float = 0.01
    energy_drift_tol: float = 1e-8        # |slope of H/H0| per unit time
    growth_margin: int = 16
    growth_trigger: float = 1e-14         # relative to E0
    fp_tol: float = 1e-13                 # ceiling; iteration runs to stall
    fp_max_iter: int = 50

    def __post_init__(self):
        if self.step <= 0:
            raise ConfigurationError("step must be positive")
        if self.energy_drift_tol <= 0:
            raise ConfigurationError("energy_drift_tol must be positive")
        if self.scheme not in KG_SCHEMES + DNLS_SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")

    @staticmethod
    def default_for(kind: str) -> "IntegratorSpec":
        if kind == KG:
            return IntegratorSpec(scheme="velocity-verlet", step=0.01,
                                  energy_drift_tol=1e-8)
        return IntegratorSpec(scheme="strang-split", step=0.005,
                              energy_drift_tol=1e-6)


@dataclass(frozen=True)
class SamplingSpec:
    kind: str = "geometric"     # geometric | linear | times
    t_first: float = 1.0
    factor: float = 1.05
    dt: float = 1.0
    times: Optional[tuple] = None

    def grid(self, horizon: float) -> np.ndarray:
        if self.kind == "times":
            ts = np.asarray(self.times, dtype=float)
        elif self.kind == "linear":
            ts = np.arange(0.0, horizon + 1e-12, self.dt)
        else:
            ts = [0.0]
            t = self.t_first
            while t < horizon * (1 - 1e-12):
                ts.append(t)
                t *= self.factor
            ts = np.asarray(ts + [horizon])
        ts = np.unique(np.clip(ts, 0.0, horizon))
        return ts


@dataclass
class TrajectoryRecord:
    """Sampled observables of one trajectory plus conservation diagnostics."""

    sample_times: np.ndarray
    M: np.ndarray
    xmax: np.ndarray
    q2: np.ndarray
    r2: np.ndarray
    Htot: np.ndarray
    window_lo: np.ndarray
    window_hi: np.ndarray
    threshold: np.ndarray
    E0: float
    model_kind: str
    seed: Optional[int] = None
    energy_drift_rate: float = 0.0
    energy_error_amplitude: float = 0.0
    norm_drift: float = 0.0
    meta: dict = field(default_factory=dict)

    def validate(self):
        ok_m = self.M <= self.Htot * (1 + 1e-9) + 1e-300
        if not np.all(ok_m):
            k = int(np.argmin(ok_m))
            raise ValidationError(f"M > Htot at sample {k} (t={self.sample_times[k]})")
        lower = 1.0 / (self.Htot * self.M)
        upper = 1.0 / self.M ** 2
        if not np.all(self.r2 >= lower * (1 - 1e-9)):
            raise ValidationError("participation ratio below 1/(Htot*M)")
        if not np.all(self.r2 <= upper * (1 + 1e-9)):
            raise ValidationError("participation ratio above 1/M^2")

    CSV_COLUMNS = ("t", "M", "xmax", "q2", "r2", "Htot", "win_lo", "win_hi",
                   "eps_threshold")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.CSV_COLUMNS) + "\n")
            for i in range(len(self.sample_times)):
                row = (self.sample_times[i], self.M[i], int(self.xmax[i]),
                       self.q2[i], self.r2[i], self.Htot[i],
                       int(self.window_lo[i]), int(self.window_hi[i]),
                       self.threshold[i])
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    def to_json_dict(self) -> dict:
        def num(v):
            v = float(v)
            return v if np.isfinite(v) else None    # strict-JSON consumers

        return {
            "meta": {"E0": self.E0, "model_kind": self.model_kind,
                     "seed": self.seed,
                     "energy_drift_rate": self.energy_drift_rate,
                     "energy_error_amplitude": self.energy_error_amplitude,
                     "norm_drift": self.norm_drift, **self.meta},
            "columns": list(self.CSV_COLUMNS),
            "rows": [[num(self.sample_times[i]), num(self.M[i]),
                      int(self.xmax[i]), num(self.q2[i]), num(self.r2[i]),
                      num(self.Htot[i]), int(self.window_lo[i]),
                      int(self.window_hi[i]), num(self.threshold[i])]
                     for i in range(len(self.sample_times))],
        }


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def maximizer(profile: np.ndarray, offset: int = 0,
              tie_tol: float = TIE_TOL) -> tuple:
    """(site, value) of the largest local energy; ties go to the largest site."""
    profile = np.asarray(profile, dtype=float)
    if profile.size == 0:
        raise ValueError("empty profile")
    top = profile.max()
    if top <= 0:
        return offset + len(profile) - 1, float(top)
    near = np.flatnonzero(profile >= top * (1 - tie_tol))
    return offset + int(near[-1]), float(top)


def threshold_eps_of_t(t, theta: float = 1.0 / 3.0):
    """Decay threshold e^{-2 (ln t)^{1/(1+theta)}}, defined for t >= 1."""
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.where(t >= 1.0,
                       np.exp(-2.0 * np.log(np.maximum(t, 1.0)) ** (1.0 / (1.0 + theta))),
                       np.nan)
    return out if out.ndim else float(out)


class Runner:
    """Owns one trajectory: state arrays, window growth, step loop."""

    def __init__(self, state: ChainState, disorder: DisorderRealization,
                 model: ModelSpec, spec: Optional[IntegratorSpec] = None):
        if spec is None:
            spec = IntegratorSpec.default_for(state.kind)
        if state.kind == KG and spec.scheme not in KG_SCHEMES:
            raise ConfigurationError(f"scheme {spec.scheme} is not a KG scheme")
        if state.kind == DNLS and spec.scheme not in DNLS_SCHEMES:
            raise ConfigurationError(f"scheme {spec.scheme} is not a DNLS scheme")
        self.model = model
        self.spec = spec
        self.kind = state.kind
        self.g = model.g
        self.offset = state.offset
        self.time = state.time
        self.disorder = disorder.extended(state.offset - 1,
                                          state.offset + state.n_sites)
        if self.kind == KG:
            self.q = state.q.astype(float).copy()
            self.p = state.p.astype(float).copy()
            self._refresh_omega()
            self._force = self._kg_force()
        else:
            # interaction-picture storage: phi = e^{+i w t} psi
            self.phi = state.psi.astype(complex).copy()
            self._refresh_omega()
            self.phi = np.exp(1j * self.w * state.time) * self.phi
        self.E0 = total_energy(state, self.disorder, self.g)
        self.H0 = self.E0
        self._drift_ts = [self.time]
        self._drift_hs = [self.E0]
        self._norm0 = norm2(state) if self.kind == DNLS else 0.0
        self._norm_drift = 0.0
        self._n_steps = 0

    # -- plumbing -----------------------------------------------------------
    def _refresh_omega(self):
        n = self.n_sites
        sites = np.arange(self.offset, self.offset + n)
        self.w2 = self.disorder.omega_sq_at(sites)
        self.w = np.sqrt(self.w2)
        if self.kind == DNLS:
            self._rot_h = np.exp(-1j * self.w * self.spec.step)
            self._kick_delta = None

    @property
    def n_sites(self) -> int:
        return len(self.q) if self.kind == KG else len(self.phi)

    @property
    def window(self) -> tuple:
        return (self.offset, self.offset + self.n_sites - 1)

    def state(self) -> ChainState:
        if self.kind == KG:
            return ChainState(kind=KG, offset=self.offset, q=self.q.copy(),
                              p=self.p.copy(), time=self.time)
        psi = np.exp(-1j * self.w * self.time) * self.phi
        return ChainState(kind=DNLS, offset=self.offset, psi=psi, time=self.time)

    # -- KG -----------------------------------------------------------------
    def _kg_force(self, q: Optional[np.ndarray] = None) -> np.ndarray:
        q = self.q if q is None else q
        qp = np.empty(len(q) + 2)
        qp[0] = qp[-1] = 0.0
        qp[1:-1] = q
        d = qp[:-1] - qp[1:]
        d3 = d * d * d
        return -self.w2 * q - self.g * d3[1:] + self.g * d3[:-1]

    def _kg_vv_step(self, h: float):
        self.p += (0.5 * h) * self._force
        self.q += h * self.p
        self._force = self._kg_force()
        self.p += (0.5 * h) * self._force

    _Y4_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
    _Y4_W0 = 1.0 - 2.0 * _Y4_W1

    def _kg_step(self):
        h = self.spec.step
        if self.spec.scheme == "velocity-verlet":
            self._kg_vv_step(h)
        else:
            self._kg_vv_step(h * self._Y4_W1)
            self._kg_vv_step(h * self._Y4_W0)
            self._kg_vv_step(h * self._Y4_W1)

    # -- DNLS ----------------------------------------------------------------
    def _dnls_scratch(self):
        n = self.n_sites
        buf = getattr(self, "_scratch", None)
        if buf is None or len(buf["pe"]) != n + 2:
            self._scratch = buf = {
                "pe": np.zeros(n + 2, dtype=complex),
                "B": np.empty(n + 1, dtype=complex),
                "F": np.empty(n + 1, dtype=complex),
                "a2": np.empty(n + 1, dtype=float),
                "out": np.empty(n, dtype=complex),
                "mid": np.empty(n, dtype=complex),
                "cur": np.empty(n, dtype=complex),
                "new": np.empty(n, dtype=complex),
            }
        return buf

    def _anh_rhs(self, psi: np.ndarray, out: Optional[np.ndarray] = None,
                 scale: Optional[float] = None) -> np.ndarray:
        """-i * (scaled) anharmonic gradient; scale defaults to the bare force."""
        buf = self._dnls_scratch()
        pe, B, F, a2 = buf["pe"], buf["B"], buf["F"], buf["a2"]
        pe[1:-1] = psi
        np.subtract(pe[:-1], pe[1:], out=B)
        np.multiply(B.real, B.real, out=a2)
        a2 += B.imag * B.imag
        a2 *= (0.5 * self.g) if scale is None else (0.5 * self.g * scale)
        np.multiply(a2, B, out=F)
        if out is None:
            out = np.empty(len(psi), dtype=complex)
        np.subtract(F[1:], F[:-1], out=out)
        out *= -1j
        return out

    def _midpoint_kick(self, psi: np.ndarray, h: float) -> np.ndarray:
        """Implicit midpoint for the anharmonic flow.

        Iterated to the roundoff stall: the declared fp_tol is only a
        ceiling, and stopping above the stall lets per-step norm residuals
        random-walk past the norm-conservation budget over ~1e6 steps.
        The midpoint force uses cubic homogeneity, F((a+b)/2) = F(a+b)/8,
        and the initial guess is the previous step's converged increment
        rotated into the current frame.
        """
        if self.g == 0:
            return psi
        buf = self._dnls_scratch()
        mid, cur, new, delta = buf["mid"], buf["cur"], buf["new"], buf["out"]
        prev_delta = getattr(self, "_kick_delta", None)
        if prev_delta is not None and len(prev_delta) == len(psi):
            np.multiply(self._rot_h, prev_delta, out=cur)
            cur += psi
        else:
            self._anh_rhs(psi, out=mid, scale=h)
            mid *= 0.5
            mid += psi
            self._anh_rhs(mid, out=cur, scale=h)
            cur += psi
        prev_err = np.inf
        floor = 1e-16 * float(np.max(np.abs(psi.view(float)), initial=0.0))
        tol = min(self.spec.fp_tol, floor) ** 2
        for _ in range(self.spec.fp_max_iter):
            np.add(psi, cur, out=mid)
            self._anh_rhs(mid, out=new, scale=h / 8.0)
            new += psi
            np.subtract(new, cur, out=delta)
            fv = delta.view(float)
            err = float(np.dot(fv, fv))
            cur, new = new, cur
            if err <= tol or err >= prev_err:
                break
            prev_err = err
        self._kick_delta = np.subtract(cur, psi)
        return cur.copy()

    def _dnls_step(self):
        h = self.spec.step
        if self.spec.scheme == "strang-split":
            tmid = self.time + 0.5 * h
            P = np.exp(-1j * self.w * tmid)
            psi = P * self.phi
            psi = self._midpoint_kick(psi, h)
            self.phi = np.conj(P) * psi
        else:
            # implicit midpoint on the full flow, plain frame
            psi = np.exp(-1j * self.w * self.time) * self.phi

            def rhs(v):
                return -1j * self.w * v + self._anh_rhs(v)

            cur = psi + h * rhs(psi + 0.5 * h * rhs(psi))
            prev_err = np.inf
            for _ in range(self.spec.fp_max_iter):
                new = psi + h * rhs(0.5 * (psi + cur))
                err = np.max(np.abs(new - cur))
                cur = new
                if err >= prev_err or err == 0.0:
                    break
                prev_err = err
            self.phi = np.exp(1j * self.w * (self.time + h)) * cur

    # -- window growth ---------------------------------------------------------
    def _margin_energy(self) -> float:
        """Cheap upper bound on max H_x over the two guard margins.

        Uses onsite terms plus a coarse bond bound; only has to decide whether
        anything in the margin rises above the (tiny) growth trigger.
        """
        m = min(self.spec.growth_margin, self.n_sites)
        n = self.n_sites
        if self.kind == KG:
            def band(sl):
                q = self.q[sl]; p = self.p[sl]
                top = float(max(q.max(), -q.min(), p.max(), -p.min()))
                return 0.5 * (1.0 + float(self.w2[sl].max())) * top * top \
                    + 4.0 * self.g * top ** 4
            return max(band(slice(0, m + 1 if m < n else m)),
                       band(slice(n - m - 1 if m < n else n - m, n)))
        def band(sl):
            fv = self.phi[sl].view(float)
            top = float(max(fv.max(), -fv.min()))
            n2 = 2.0 * top * top
            return float(self.w[sl].max()) * n2 + 4.0 * self.g * n2 * n2
        return max(band(slice(0, m + 1 if m < n else m)),
                   band(slice(n - m - 1 if m < n else n - m, n)))

    def _maybe_grow(self):
        trigger = self.spec.growth_trigger * self.E0
        margin = self._margin_energy()
        if not np.isfinite(margin):
            raise IntegrationFailure("state diverged (non-finite values)",
                                     suggested_step=self.spec.step / 4)
        if margin <= trigger:
            return
        if margin > 100.0 * self.E0 or self.n_sites > 200_000:
            raise IntegrationFailure(
                f"margin energy {margin:.3e} at the window edge indicates a "
                f"runaway front at t={self.time:.6g}",
                suggested_step=self.spec.step / 2)
        grow = 64
        new_lo = self.offset - grow
        n_new = self.n_sites + 2 * grow
        self.disorder = self.disorder.extended(new_lo - 1, new_lo + n_new)
        if self.kind == KG:
            q = np.zeros(n_new); p = np.zeros(n_new)
            q[grow:grow + self.n_sites] = self.q
            p[grow:grow + self.n_sites] = self.p
            self.q, self.p = q, p
            self.offset = new_lo
            self._refresh_omega()
            self._force = self._kg_force()
        else:
            phi = np.zeros(n_new, dtype=complex)
            phi[grow:grow + self.n_sites] = self.phi
            self.phi = phi
            self.offset = new_lo
            self._refresh_omega()

    # -- loop --------------------------------------------------------------------
    def step_once(self):
        # overflow during divergence is expected noise; finiteness is checked
        with np.errstate(over="ignore", invalid="ignore"):
            if self.kind == KG:
                self._kg_step()
            else:
                self._dnls_step()
            self.time += self.spec.step
            self._n_steps += 1
            self._maybe_grow()
        if self._n_steps % 512 == 0:
            self._health_check()

    def _health_check(self):
        arr = self.q if self.kind == KG else self.phi
        if not np.all(np.isfinite(arr.view(float) if arr.dtype == complex else arr)):
            raise IntegrationFailure("state diverged (non-finite values)",
                                     suggested_step=self.spec.step / 4)
        with np.errstate(over="ignore", invalid="ignore"):
            H = total_energy(self.state(), self.disorder, self.g)
        if abs(H - self.H0) > 0.01 * max(self.H0, 1e-300):
            raise IntegrationFailure(
                f"energy deviation {abs(H - self.H0) / self.H0:.3e} exceeds 1% "
                f"safety cap at t={self.time:.6g}",
                suggested_step=self.spec.step / 2)
        if self.kind == DNLS:
            nrm = float(np.sum(self.phi.real ** 2 + self.phi.imag ** 2))
            self._norm_drift = max(self._norm_drift,
                                   abs(nrm - self._norm0) / self._norm0)

    def _record_drift_sample(self):
        self._drift_ts.append(self.time)
        with np.errstate(over="ignore", invalid="ignore"):
            self._drift_hs.append(total_energy(self.state(), self.disorder, self.g))

    def drift_stats(self) -> tuple:
        ts = np.asarray(self._drift_ts)
        hs = np.asarray(self._drift_hs) / self.H0
        amp = float(np.abs(hs - hs[0]).max())
        if len(ts) < 3 or ts[-1] == ts[0]:
            return 0.0, amp
        rate = float(abs(np.polyfit(ts, hs, 1)[0]))
        return rate, amp

    def run(self, horizon: float, sampling: SamplingSpec = SamplingSpec(),
            seed: Optional[int] = None, drift_samples: int = 4096,
            check_drift: bool = True) -> TrajectoryRecord:
        if horizon < 0:
            raise ConfigurationError("horizon must be >= 0")
        h = self.spec.step
        n_steps = int(np.ceil(horizon / h - 1e-9)) if horizon > 0 else 0
        grid = sampling.grid(horizon)
        grid_steps = np.unique(np.round(grid / h).astype(int))
        grid_steps = grid_steps[grid_steps <= n_steps]
        drift_every = max(1, n_steps // drift_samples)
        samples = []
        take = set(grid_steps.tolist())
        if self._n_steps == 0 and 0 in take:
            samples.append(self._observe())
        for n in range(1, n_steps + 1):
            self.step_once()
            if n % drift_every == 0:
                self._record_drift_sample()
            if n in take:
                samples.append(self._observe())
        self._health_check()
        rate, amp = self.drift_stats()
        # a slope fit cannot resolve secular drift below the oscillation
        # leakage floor ~ amplitude/horizon; gate against the larger of the two
        floor = 8.0 * amp / max(horizon, 1e-300) if horizon > 0 else np.inf
        gate = max(self.spec.energy_drift_tol, floor)
        if check_drift and horizon > 0 and rate > gate:
            raise IntegrationFailure(
                f"energy drift rate {rate:.3e} exceeds tolerance "
                f"{self.spec.energy_drift_tol:.3e}",
                suggested_step=h * np.sqrt(self.spec.energy_drift_tol / rate))
        rec = TrajectoryRecord(
            sample_times=np.array([s[0] for s in samples]),
            M=np.array([s[1] for s in samples]),
            xmax=np.array([s[2] for s in samples], dtype=int),
            q2=np.array([s[3] for s in samples]),
            r2=np.array([s[4] for s in samples]),
            Htot=np.array([s[5] for s in samples]),
            window_lo=np.array([s[6] for s in samples], dtype=int),
            window_hi=np.array([s[7] for s in samples], dtype=int),
            threshold=np.array([s[8] for s in samples]),
            E0=self.E0, model_kind=self.kind, seed=seed,
            energy_drift_rate=rate, energy_error_amplitude=amp,
            norm_drift=self._norm_drift,
            meta={"scheme": self.spec.scheme, "step": h, "horizon": horizon})
        rec.validate()
        return rec

    def _observe(self) -> tuple:
        state = self.state()
        with np.errstate(over="ignore", invalid="ignore"):
            prof = local_energy_profile(state, self.disorder, self.g)
        if not np.all(np.isfinite(prof)):
            raise IntegrationFailure(
                f"state diverged (non-finite energies) at t={self.time:.6g}",
                suggested_step=self.spec.step / 4)
        site, M = maximizer(prof, offset=self.offset)
        xs = np.arange(self.offset, self.offset + len(prof), dtype=float)
        q2 = float(np.dot(xs * xs, prof))
        r2 = float(1.0 / np.dot(prof, prof))
        Htot = total_energy(state, self.disorder, self.g)
        thr = threshold_eps_of_t(self.time) if self.time >= 1.0 else np.nan
        if self.kind == DNLS:
            nrm = float(np.sum(self.phi.real ** 2 + self.phi.imag ** 2))
            self._norm_drift = max(self._norm_drift,
                                   abs(nrm - self._norm0) / self._norm0)
        return (self.time, M, site, q2, r2, Htot, self.offset,
                self.offset + self.n_sites - 1, thr)


def step(state: ChainState, disorder: DisorderRealization, model: ModelSpec,
         spec: Optional[IntegratorSpec] = None) -> ChainState:
    """Advance one step of size spec.step (value-in, value-out convenience)."""
    runner = Runner(state, disorder, model, spec)
    runner.step_once()
    return runner.state()


def run(state: ChainState, disorder: DisorderRealization, model: ModelSpec,
        spec: Optional[IntegratorSpec] = None, horizon: float = 1.0,
        sampling: SamplingSpec = SamplingSpec(), seed: Optional[int] = None,
        check_drift: bool = True) -> TrajectoryRecord:
    return Runner(state, disorder, model, spec).run(
        horizon, sampling, seed=seed, check_drift=check_drift)


# -- stopping times -------------------------------------------------------------

@dataclass(frozen=True)
class StoppingTimes:
    eps: float
    eps_prime: float
    t_eps: float
    t_eps_epsprime: float

    def __post_init__(self):
        if np.isfinite(self.t_eps) and np.isfinite(self.t_eps_epsprime):
            if self.t_eps_epsprime > self.t_eps * (1 + 1e-12):
                raise ValidationError("t_eps_epsprime must not exceed t_eps")


def _log_interp_crossing(t0, m0, t1, m1, level):
    """Time where the log-linear interpolation of M crosses `level`."""
    if m0 == level:
        return t0
    if m1 == m0:
        return t1
    lam = (np.log(m0) - np.log(level)) / (np.log(m0) - np.log(m1))
    return t0 + lam * (t1 - t0)


def stopping_times(record: TrajectoryRecord, eps: float,
                   eps_prime: float) -> StoppingTimes:
    """First time M reaches eps, and the last prior time M was >= eps_prime.

    M is interpolated linearly in log between samples (decay is
    multiplicative).  min over an empty set is +inf; if t_eps is infinite,
    t_eps_epsprime is +inf as well.
    """
    if not (0 < eps < eps_prime):
        raise ValueError("need 0 < eps < eps_prime")
    ts, ms = record.sample_times, record.M
    t_eps = np.inf
    k_eps = None
    for k in range(len(ts)):
        if ms[k] <= eps:
            if k == 0:
                t_eps = float(ts[0])
            else:
                t_eps = float(_log_interp_crossing(ts[k - 1], ms[k - 1],
                                                   ts[k], ms[k], eps))
            k_eps = k
            break
    if not np.isfinite(t_eps):
        return StoppingTimes(eps, eps_prime, np.inf, np.inf)
    t_ee = np.inf
    for k in range(k_eps, -1, -1):
        if ts[k] <= t_eps + 1e-300 and ms[k] >= eps_prime:
            if k + 1 <= k_eps and ms[min(k + 1, len(ms) - 1)] < eps_prime:
                t_ee = float(_log_interp_crossing(ts[k], ms[k], ts[k + 1],
                                                  ms[k + 1], eps_prime))
            else:
                t_ee = float(ts[k])
            break
    if not np.isfinite(t_ee):
        t_ee = 0.0      # M never reached eps_prime before decaying: degenerate
    return StoppingTimes(eps, eps_prime, t_eps, min(t_ee, t_eps))


@dataclass(frozen=True)
class LightConeReport:
    sup_ratio: float
    argmax_time: float
    n_samples: int
    stable: Optional[bool] = None
    growth: Optional[float] = None


def light_cone_check(record: TrajectoryRecord,
                     doubled: Optional[TrajectoryRecord] = None,
                     growth_cap: float = 2.0) -> LightConeReport:
    """Supremum of M(t)|x(t)|/t over samples with t >= 1.

    With a doubled-horizon record, also reports the growth factor of the
    supremum and whether it stays under `growth_cap`.
    """
    mask = record.sample_times >= 1.0
    if not mask.any():
        raise ValueError("record has no samples with t >= 1")
    ratios = (record.M[mask] * np.abs(record.xmax[mask])
              / record.sample_times[mask])
    k = int(np.argmax(ratios))
    sup = float(ratios[k])
    t_arg = float(record.sample_times[mask][k])
    if doubled is None:
        return LightConeReport(sup, t_arg, int(mask.sum()))
    rep2 = light_cone_check(doubled)
    if sup <= 0:
        grow = 1.0 if rep2.sup_ratio <= 0 else np.inf
    else:
        grow = rep2.sup_ratio / sup
    return LightConeReport(sup, t_arg, int(mask.sum()),
                           stable=bool(grow <= growth_cap), growth=float(grow))


def decay_floor_report(record: TrajectoryRecord, n_levels: int = 12) -> dict:
    """t_eps * eps over a grid of eps levels actually crossed by M(t).

    Monitors the a-priori lower-bound structure: the product should stay
    bounded below by a positive, seed-stable constant.
    """
    ms = record.M
    lo = ms.min() * 1.001
    hi = record.E0 * 0.5
    if lo >= hi:
        return {"levels": [], "products": [], "min_product": np.inf}
    levels = np.exp(np.linspace(np.log(hi), np.log(lo), n_levels))
    prods = []
    used = []
    for eps in levels:
        st = stopping_times(record, eps, min(2 * eps, record.E0 * 0.999))
        if np.isfinite(st.t_eps) and st.t_eps > 0:
            used.append(float(eps))
            prods.append(float(st.t_eps * eps))
    out = {"levels": used, "products": prods,
           "min_product": float(min(prods)) if prods else np.inf}
    return out


def continuity_residuals(before: ChainState, after: ChainState,
                         disorder: DisorderRealization, g: float) -> dict:
    """Discrete continuity check between two states one step apart.

    Compares (H_x(t+h)-H_x(t))/h with the trapezoid average of j_x - j_{x+1};
    the mismatch is O(h^2) per the continuity equation.  Returns per-site
    residuals and the local scale used for tolerances.
    """
    h = after.time - before.time
    if h <= 0:
        raise ValueError("states must be one positive step apart")
    lo = max(before.offset, after.offset)
    hi = min(before.window[1], after.window[1])
    n = hi - lo + 1
    pb = local_energy_profile(before, disorder, g)
    pa = local_energy_profile(after, disorder, g)
    pb = pb[lo - before.offset: lo - before.offset + n]
    pa = pa[lo - after.offset: lo - after.offset + n]
    jb = current_profile(before, disorder, g)
    ja = current_profile(after, disorder, g)
    jb = jb[lo - before.offset: lo - before.offset + n + 1]
    ja = ja[lo - after.offset: lo - after.offset + n + 1]
    jbar = 0.5 * (jb + ja)
    dH = (pa - pb) / h
    div = jbar[:-1] - jbar[1:]
    resid = dH - div
    wmax3 = float(np.max(disorder.omega_sq_at(np.arange(lo, hi + 1))) ** 1.5)
    # d^3 H_x/dt^3 couples out to sites x-2..x+2 through the current
    # derivatives, so the local scale is a stencil maximum; the additive floor
    # discounts denormal-range tail sites that carry no signal.
    point = np.maximum.reduce([np.abs(pa), np.abs(pb), np.abs(jbar[:-1]),
                               np.abs(jbar[1:]), np.abs(dH), np.abs(div)])
    scale = point.copy()
    for shift in (-2, -1, 1, 2):
        sl_dst = slice(max(0, -shift), n - max(0, shift))
        sl_src = slice(max(0, shift), n - max(0, -shift))
        np.maximum(scale[sl_dst], point[sl_src], out=scale[sl_dst])
    scale = scale * max(1.0, wmax3) + 1e-30 * float(pa.max(initial=0.0))
    return {"sites": np.arange(lo, hi + 1), "residual": resid, "scale": scale,
            "h": h}
