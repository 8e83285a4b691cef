import numpy as np
import pytest

from chainlab import (
    KG, DNLS, DisorderSpec, DisorderRealization, ModelSpec, ChainState,
    InitialCondition, ConfigurationError, ValidationError,
    sample_disorder, local_energy, local_energy_profile, total_energy,
    current, current_profile, build_initial, current_bound_constant,
)
from chainlab.dynamics import Runner, IntegratorSpec


def custom_disorder(omega_sq, left=0):
    omega_sq = np.asarray(omega_sq, dtype=float)
    spec = DisorderSpec(omega_min_sq=min(0.1, omega_sq.min() / 2),
                        omega_max_sq=max(4.0, omega_sq.max() * 2))
    return DisorderRealization(left=left, right=left + len(omega_sq) - 1,
                               omega_sq=omega_sq, seed=0, spec=spec)


class TestDisorder:
    def test_uniform_support(self):
        dis = sample_disorder(DisorderSpec(seed=3), (-100, 100))
        assert np.all(dis.omega_sq >= 0.5) and np.all(dis.omega_sq <= 1.5)

    def test_window_extension_reproduces(self):
        spec = DisorderSpec(seed=42)
        d1 = sample_disorder(spec, (0, 9))
        d2 = sample_disorder(spec, (0, 19))
        assert np.array_equal(d1.omega_sq, d2.omega_sq[:10])
        d3 = d1.extended(-5, 25)
        assert np.array_equal(d3.omega_sq_at(np.arange(0, 10)), d1.omega_sq)

    def test_mc_mean(self):
        dis = sample_disorder(DisorderSpec(seed=7), (0, 10 ** 6 - 1))
        assert abs(dis.omega_sq.mean() - 1.0) < 0.005

    def test_seeds_differ(self):
        a = sample_disorder(DisorderSpec(seed=1), (0, 99)).omega_sq
        b = sample_disorder(DisorderSpec(seed=2), (0, 99)).omega_sq
        assert np.max(np.abs(a - b)) > 1e-3

    def test_bump_density_normalized(self):
        spec = DisorderSpec(density_kind="smooth-bump")
        x = np.linspace(0.5, 1.5, 400001)
        total = np.trapezoid(spec.density(x), x)
        assert abs(total - 1.0) < 1e-10

    def test_bump_sampling_in_support(self):
        dis = sample_disorder(DisorderSpec(density_kind="smooth-bump", seed=5),
                              (0, 9999))
        assert np.all(dis.omega_sq > 0.5) and np.all(dis.omega_sq < 1.5)

    def test_invalid_bounds_rejected(self):
        with pytest.raises(ConfigurationError):
            DisorderSpec(omega_min_sq=1.5, omega_max_sq=0.5)
        with pytest.raises(ConfigurationError):
            DisorderSpec(omega_min_sq=0.0, omega_max_sq=1.0)


class TestLocalEnergy:
    def test_kinetic_only(self):
        dis = custom_disorder([1.0, 1.0], left=0)
        st = ChainState(kind=KG, offset=0, q=np.array([0.0, 0.0]),
                        p=np.array([2.0, 0.0]))
        assert local_energy(st, dis, 0, g=1.0) == pytest.approx(2.0, abs=0)

    def test_zero_bond_stretch(self):
        dis = custom_disorder([2.0, 2.0], left=0)
        st = ChainState(kind=KG, offset=0, q=np.array([1.0, 1.0]),
                        p=np.array([0.0, 0.0]))
        assert local_energy(st, dis, 0, g=1.0) == pytest.approx(1.0, abs=0)

    def test_dnls_direct(self):
        dis = custom_disorder([1.0, 1.0], left=0)
        st = ChainState(kind=DNLS, offset=0,
                        psi=np.array([1.0 + 0j, 0.0 + 0j]))
        assert local_energy(st, dis, 0, g=4.0) == pytest.approx(2.0, abs=0)

    def test_outside_window_zero(self):
        dis = custom_disorder([1.0, 1.0], left=0)
        st = ChainState(kind=KG, offset=0, q=np.zeros(2), p=np.zeros(2))
        assert local_energy(st, dis, 5, g=1.0) == 0.0

    def test_profile_plus_edge_bond_matches_total(self):
        rng = np.random.default_rng(0)
        dis = sample_disorder(DisorderSpec(seed=1), (-5, 5))
        for kind in (KG, DNLS):
            if kind == KG:
                st = ChainState(kind=KG, offset=-5, q=rng.normal(size=11),
                                p=rng.normal(size=11))
            else:
                st = ChainState(kind=DNLS, offset=-5,
                                psi=rng.normal(size=11) + 1j * rng.normal(size=11))
            tot = total_energy(st, dis, 1.3)
            prof = local_energy_profile(st, dis, 1.3).sum()
            edge = local_energy(st, dis, -6, g=1.3)
            assert tot == pytest.approx(prof + edge, rel=1e-13)


class TestCurrent:
    def test_direct_substitution(self):
        dis = custom_disorder([1.0, 1.0, 1.0], left=0)
        st = ChainState(kind=KG, offset=0, q=np.array([1.0, 0.0, 0.0]),
                        p=np.array([0.0, 2.0, 0.0]))
        assert current(st, dis, 1, g=1.0) == pytest.approx(2.0, abs=0)

    def test_zero_momentum_zero_current(self):
        dis = custom_disorder([1.0, 1.0], left=0)
        st = ChainState(kind=KG, offset=0, q=np.array([0.7, -0.3]),
                        p=np.array([0.5, 0.0]))
        assert current(st, dis, 1, g=1.0) == 0.0

    def test_profile_matches_scalar(self):
        rng = np.random.default_rng(3)
        dis = sample_disorder(DisorderSpec(seed=9), (-4, 4))
        for kind in (KG, DNLS):
            if kind == KG:
                st = ChainState(kind=KG, offset=-4, q=rng.normal(size=9),
                                p=rng.normal(size=9))
            else:
                st = ChainState(kind=DNLS, offset=-4,
                                psi=rng.normal(size=9) + 1j * rng.normal(size=9))
            prof = current_profile(st, dis, 0.8)
            for i, x in enumerate(range(-4, 6)):
                assert prof[i] == pytest.approx(current(st, dis, x, g=0.8),
                                                abs=1e-14)


class TestInitialCondition:
    def test_momentum_kick_kg(self):
        spec = DisorderSpec(seed=0)
        dis = sample_disorder(spec, (-30, 30))
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        i0 = -st.offset
        assert st.p[i0] == pytest.approx(np.sqrt(2.0), abs=0)
        assert np.all(st.q == 0)
        assert np.count_nonzero(st.p) == 1

    def test_momentum_kick_dnls_g0(self):
        dis = custom_disorder(np.ones(61), left=-30)
        model = ModelSpec(kind=DNLS, g=0.0, disorder=dis.spec)
        st = build_initial(InitialCondition(E0=0.5), dis, model)
        assert st.psi[-st.offset] == pytest.approx(np.sqrt(0.5), abs=1e-15)

    def test_momentum_kick_dnls_quartic_correction(self):
        spec = DisorderSpec(seed=2)
        dis = sample_disorder(spec, (-30, 30))
        model = ModelSpec(kind=DNLS, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        prof = local_energy_profile(st, dis, 1.0)
        assert prof[-st.offset] == pytest.approx(1.0, rel=1e-12)

    def test_custom_violation_names_site(self):
        spec = DisorderSpec(seed=0)
        dis = sample_disorder(spec, (-30, 30))
        model = ModelSpec(kind=KG, g=1.0, disorder=spec)
        ic = InitialCondition(support=(0, 3), mode="custom", E0=1.0,
                              custom_values={"p": {0: 1.0, 3: 2.0}})
        with pytest.raises(ValidationError, match="H_3"):
            build_initial(ic, dis, model)

    def test_support_must_contain_zero(self):
        with pytest.raises(ConfigurationError):
            InitialCondition(support=(1, 3))


def test_current_bound_along_trajectory():
    spec = DisorderSpec(seed=4)
    dis = sample_disorder(spec, (-30, 30))
    for kind in (KG, DNLS):
        model = ModelSpec(kind=kind, g=1.0, disorder=spec)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        C = current_bound_constant(model, dis, 1.0)
        r = Runner(st, dis, model, IntegratorSpec.default_for(kind))
        for k in range(600):
            r.step_once()
            if k % 60 == 0:
                s = r.state()
                prof = local_energy_profile(s, r.disorder, 1.0)
                js = current_profile(s, r.disorder, 1.0)
                hp = np.concatenate([[0.0], prof, [0.0]])
                bound = C * (hp[:-1] ** 2 + hp[1:] ** 2 + hp[:-1] + hp[1:])
                assert np.all(np.abs(js) <= np.maximum(bound, 1e-300))
