import json

import numpy as np
import pytest

from chainlab import (KG, DNLS, DisorderSpec, ModelSpec, ChainState,
                      InitialCondition, ConfigurationError,
                      sample_disorder, build_initial)
from chainlab.dynamics import (IntegratorSpec, Runner,
                               TrajectoryRecord, IntegrationFailure,
                               step, run, maximizer, stopping_times,
                               light_cone_check, decay_floor_report,
                               continuity_residuals, threshold_eps_of_t)


@pytest.fixture(scope="module")
def setup():
    spec = DisorderSpec(seed=3)
    dis = sample_disorder(spec, (-40, 40))
    return spec, dis


def synthetic_record(ts, M, E0=1.0):
    ts = np.asarray(ts, dtype=float)
    M = np.asarray(M, dtype=float)
    return TrajectoryRecord(
        sample_times=ts, M=M, xmax=np.zeros(len(ts), dtype=int),
        q2=np.zeros(len(ts)), r2=1.0 / M ** 2, Htot=np.full(len(ts), E0),
        window_lo=np.zeros(len(ts), dtype=int),
        window_hi=np.zeros(len(ts), dtype=int),
        threshold=np.full(len(ts), np.nan), E0=E0, model_kind=KG)


class TestStep:
    def test_harmonic_oracle(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=KG, g=0.0, disorder=spec)
        w = float(dis.omega_at(0))
        p0 = np.sqrt(2.0)
        T = 10.0
        errs = []
        for h in (2e-3, 1e-3):
            st = build_initial(InitialCondition(E0=1.0), dis, model)
            r = Runner(st, dis, model, IntegratorSpec(step=h))
            for _ in range(int(round(T / h))):
                r.step_once()
            s = r.state()
            i0 = -s.offset
            q_exact = (p0 / w) * np.sin(w * T)
            errs.append(abs(s.q[i0] - q_exact))
        assert errs[1] < 5e-6                      # second-order accurate
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.25)

    def test_dnls_rotation_exact(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=DNLS, g=0.0, disorder=spec)
        st = build_initial(InitialCondition(E0=0.5), dis, model)
        psi0 = st.psi[-st.offset]
        r = Runner(st, dis, model, IntegratorSpec.default_for(DNLS))
        for _ in range(1000):
            r.step_once()
        s = r.state()
        w = float(dis.omega_at(0))
        expect = psi0 * np.exp(-1j * w * r.time)
        assert abs(s.psi[-s.offset] - expect) < 1e-13

    def test_zero_state_fixed_point(self, setup):
        spec, dis = setup
        for kind in (KG, DNLS):
            model = ModelSpec(kind=kind, g=1.0, disorder=spec)
            if kind == KG:
                st = ChainState(kind=KG, offset=-5, q=np.zeros(11), p=np.zeros(11))
            else:
                st = ChainState(kind=DNLS, offset=-5, psi=np.zeros(11, dtype=complex))
            out = step(st, dis, model)
            arr = out.q if kind == KG else out.psi
            assert np.all(arr == 0)

    def test_scheme_model_mismatch(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        with pytest.raises(ConfigurationError):
            Runner(st, dis, model, IntegratorSpec(scheme="strang-split"))

    def test_implicit_midpoint_scheme(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=DNLS, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        spec_im = IntegratorSpec(scheme="implicit-midpoint", step=0.005,
                                 energy_drift_tol=1e-6)
        rec = run(st, dis, model, spec_im, horizon=30.0)
        assert rec.norm_drift < 1e-12
        st2 = build_initial(InitialCondition(E0=1.0), dis, model)
        rec2 = run(st2, dis, model, IntegratorSpec.default_for(DNLS), horizon=30.0)
        assert rec.M[-1] == pytest.approx(rec2.M[-1], abs=5e-3)

    def test_yoshida4_more_accurate(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        amps = {}
        for scheme in ("velocity-verlet", "yoshida4"):
            st = build_initial(InitialCondition(E0=1.0), dis, model)
            rec = run(st, dis, model, IntegratorSpec(scheme=scheme, step=0.01),
                      horizon=50.0)
            amps[scheme] = rec.energy_error_amplitude
        assert amps["yoshida4"] < amps["velocity-verlet"] / 50


class TestRun:
    def test_horizon_zero_single_sample(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=2.0), dis, model)
        rec = run(st, dis, model, horizon=0.0)
        assert len(rec.sample_times) == 1
        assert rec.M[0] == pytest.approx(2.0, rel=1e-12)

    def test_g0_M_constant(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=KG, g=0.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        rec = run(st, dis, model, horizon=100.0)
        # constant up to the O(h^2) Verlet envelope and a negligible trend
        assert np.max(np.abs(rec.M - rec.M[0])) < 5e-5
        assert rec.energy_drift_rate < 1e-8
        assert np.all(rec.xmax == 0)

    def test_record_invariants_enforced(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        rec = run(st, dis, model, horizon=100.0)
        rec.validate()
        assert np.all(rec.M <= rec.Htot * (1 + 1e-9))
        assert np.all(rec.r2 >= 1.0 / (rec.Htot * rec.M) * (1 - 1e-9))
        assert np.all(rec.r2 <= 1.0 / rec.M ** 2 * (1 + 1e-9))

    def test_dnls_norm_conserved(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=DNLS, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        rec = run(st, dis, model, horizon=50.0)
        assert rec.norm_drift < 1e-13

    def test_window_growth_tracks_spread(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=4.0), dis, model)
        rec = run(st, dis, model, horizon=300.0)
        assert rec.window_lo[-1] < rec.window_lo[0]
        assert rec.window_hi[-1] > rec.window_hi[0]

    def test_blowup_detected(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=4.0), dis, model)
        with pytest.raises(IntegrationFailure):
            run(st, dis, model, IntegratorSpec(step=0.8), horizon=200.0)


class TestMaximizer:
    def test_tie_goes_to_largest_site(self):
        prof = np.array([1.0, 0, 0, 0, 0, 1.0])
        assert maximizer(prof) == (5, 1.0)

    def test_unique_max(self):
        assert maximizer(np.array([2.0, 1.0])) == (0, 2.0)

    def test_tie_tolerance(self):
        prof = np.array([1.0, 1.0 - 1e-15])
        site, _ = maximizer(prof, tie_tol=1e-12)
        assert site == 1

    def test_offset(self):
        assert maximizer(np.array([0.0, 3.0]), offset=-7) == (-6, 3.0)


class TestStoppingTimes:
    def test_never_reached_infinite(self):
        rec = synthetic_record([0, 1, 2], [1.0, 0.9, 0.8])
        st = stopping_times(rec, 0.1, 0.5)
        assert st.t_eps == np.inf and st.t_eps_epsprime == np.inf

    def test_exponential_synthetic(self):
        ts = np.arange(0, 5.5, 0.5)
        rec = synthetic_record(ts, np.exp(-ts))
        st = stopping_times(rec, np.exp(-2.0), np.exp(-1.0))
        assert st.t_eps == pytest.approx(2.0, abs=1e-12)
        assert st.t_eps_epsprime == pytest.approx(1.0, abs=1e-12)

    def test_bad_arguments(self):
        rec = synthetic_record([0, 1], [1.0, 0.5])
        with pytest.raises(ValueError):
            stopping_times(rec, 0.5, 0.5)

    def test_ordering_invariant(self):
        ts = np.arange(0, 8.0, 0.25)
        M = np.exp(-0.7 * ts) * (1 + 0.3 * np.sin(3 * ts))
        rec = synthetic_record(ts, M)
        st = stopping_times(rec, 2e-2, 2e-1)
        assert st.t_eps_epsprime <= st.t_eps


class TestLightCone:
    def test_no_spreading_zero_ratio(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=KG, g=0.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        rec = run(st, dis, model, horizon=50.0)
        rep = light_cone_check(rec)
        assert rep.sup_ratio == 0.0

    def test_front_inside_initial_support(self):
        ts = np.array([0.0, 1.0, 2.0])
        rec = synthetic_record(ts, np.array([1.0, 0.9, 0.8]))
        rep = light_cone_check(rec)
        assert rep.sup_ratio <= 1.0 * 0 / 1 + 1e-12   # x(t) = 0 inside support

    def test_stability_flag(self, setup):
        spec, dis = setup
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        rec1 = run(st.copy(), dis, model, horizon=100.0)
        rec2 = run(st.copy(), dis, model, horizon=200.0)
        rep = light_cone_check(rec1, doubled=rec2)
        assert rep.stable is not None and rep.growth is not None


def test_decay_floor_report(setup):
    spec, dis = setup
    model = ModelSpec(kind=KG, g=1.0, disorder=spec)
    st = build_initial(InitialCondition(E0=1.0), dis, model)
    rec = run(st, dis, model, horizon=300.0)
    rep = decay_floor_report(rec)
    if rep["levels"]:
        assert rep["min_product"] > 0


def test_continuity_equation_probes(setup):
    spec, dis = setup
    for kind in (KG, DNLS):
        model = ModelSpec(kind=kind, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        r = Runner(st, dis, model, IntegratorSpec.default_for(kind))
        for _ in range(5):
            for _ in range(150):
                r.step_once()
            before = r.state()
            r.step_once()
            after = r.state()
            out = continuity_residuals(before, after, r.disorder, model.g)
            assert np.all(np.abs(out["residual"])
                          <= 10 * out["h"] ** 2 * out["scale"])


def test_threshold_function():
    assert threshold_eps_of_t(1.0) == pytest.approx(1.0)
    assert threshold_eps_of_t(np.exp(16.0)) == pytest.approx(np.exp(-16.0), rel=1e-12)
    assert np.isnan(threshold_eps_of_t(0.5))


def test_csv_and_json_serialization(tmp_path, setup):
    spec, dis = setup
    model = ModelSpec(kind=KG, g=1.0, disorder=spec)
    st = build_initial(InitialCondition(E0=1.0), dis, model)
    rec = run(st, dis, model, horizon=20.0, seed=5)
    path = tmp_path / "traj.csv"
    rec.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,M,xmax,q2,r2,Htot,win_lo,win_hi,eps_threshold"
    assert len(lines) == len(rec.sample_times) + 1
    parsed = np.array([float(v) for v in lines[1].split(",")])
    assert parsed[0] == 0.0 and parsed[1] == pytest.approx(1.0, rel=1e-12)
    d = rec.to_json_dict()
    json.dumps(d)
    assert d["meta"]["seed"] == 5
    assert d["columns"] == list(rec.CSV_COLUMNS)
