import numpy as np
import pytest

from chainlab import (KG, DNLS, DisorderSpec, ModelSpec, ChainState,
                      InitialCondition, sample_disorder, build_initial,
                      Monomial, Polynomial, poisson_bracket, to_normal,
                      expand_current, expand_h_an, KernelObstructionError)
from chainlab.algebra import MINUS, PLUS
from chainlab.dynamics import Runner, IntegratorSpec
from chainlab.expansion import (Contraction, BudgetError,
                                ExplicitPathUnavailable, enumerate_contractions,
                                solve_homological, build_recursive, build_explicit,
                                decomposition_residual, evaluate_decomposition,
                                time_integrated_check, term_growth_fit,
                                simpson_integrate)


@pytest.fixture(scope="module")
def dis():
    return sample_disorder(DisorderSpec(seed=5), (-12, 12))


@pytest.fixture(scope="module")
def model():
    return ModelSpec(kind=KG, g=1.0, disorder=DisorderSpec(seed=5))


@pytest.fixture(scope="module")
def res3(dis, model):
    return build_recursive(0, 3, dis, model)


class TestContractions:
    def test_count_i2(self):
        cs = enumerate_contractions(2)
        assert len(cs) == 16

    def test_labels_distinct(self):
        for c in enumerate_contractions(3):
            couples = [(j, l) for j, l, _, _ in c.entries]
            couples += [(k, lp) for _, _, k, lp in c.entries]
            assert len(set(couples)) == len(couples)

    def test_count_i3_vs_brute_force(self):
        # brute force over all candidate label tuples
        count = 0
        for l2 in range(1, 5):
            for lp2 in range(1, 5):
                for l3 in range(1, 5):
                    for k3 in (1, 2):
                        for lp3 in range(1, 5):
                            couples = [(2, l2), (1, lp2), (3, l3), (k3, lp3)]
                            if len(set(couples)) == 4:
                                count += 1
        assert count == 384
        assert len(enumerate_contractions(3)) == count

    def test_bad_entry_rejected(self):
        with pytest.raises(ValueError):
            Contraction(((2, 5, 1, 1),))
        with pytest.raises(ValueError):
            Contraction(((2, 1, 2, 1),))   # k must be < j


class TestSolveHomological:
    def test_single_term(self, dis):
        m = Monomial(((0, PLUS), (1, PLUS)))
        d = float(dis.omega_at(0) + dis.omega_at(1))
        f = Polynomial.from_terms({m: 0.5})
        u, mind = solve_homological(f, dis)
        assert dict(u.terms()) == {m: pytest.approx(1j * 0.5 / d, rel=1e-15)}
        assert mind == pytest.approx(d)

    def test_zero_in_zero_out(self, dis):
        u, mind = solve_homological(Polynomial.zero(), dis)
        assert u.is_zero() and mind == np.inf

    def test_kernel_obstruction(self, dis):
        f = Polynomial.from_terms({
            Monomial(((0, PLUS), (0, MINUS), (1, PLUS), (1, MINUS))): 1.0})
        with pytest.raises(KernelObstructionError):
            solve_homological(f, dis)

    def test_roundoff_kernel_projected(self, dis):
        f = Polynomial.from_terms({
            Monomial(((0, PLUS), (1, PLUS))): 1.0,
            Monomial(((0, PLUS), (0, MINUS))): 1e-15}, prune_rel=0.0)
        u, _ = solve_homological(f, dis)
        assert u.n_terms == 1

    def test_harmonic_equation_is_solved(self, dis, model):
        j = expand_current(0, dis, model)
        u, _ = solve_homological(j, dis)
        from chainlab.algebra import expand_h_har
        H = expand_h_har((-2, 1), dis)
        resid = poisson_bracket(H, u) + j
        assert resid.max_abs_coeff() < 1e-12 * j.max_abs_coeff()


class TestRecursive:
    def test_first_order_structure(self, dis, model):
        r = build_recursive(0, 1, dis, model)
        j = expand_current(0, dis, model)
        u1, _ = solve_homological(j, dis)
        assert (r.u - u1).max_abs_coeff() == 0.0
        han = expand_h_an(u1.support(), dis, model)
        g = poisson_bracket(han, u1)
        assert (r.g - g).max_abs_coeff() == 0.0

    def test_zero_coupling(self, dis):
        m0 = ModelSpec(kind=KG, g=0.0, disorder=DisorderSpec(seed=5))
        r = build_recursive(0, 2, dis, m0)
        assert r.u.is_zero() and r.g.is_zero()

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_identity(self, dis, model, n):
        r = build_recursive(0, n, dis, model)
        resid = decomposition_residual(r, dis, model)
        assert resid.max_abs_coeff() < 1e-10 * r.f_terms[0].max_abs_coeff()

    def test_identity_n4_relative_to_intermediates(self, dis, model):
        r = build_recursive(0, 4, dis, model)
        resid = decomposition_residual(r, dis, model)
        scale = max(p.max_abs_coeff() for p in r.u_terms + r.f_terms)
        assert resid.max_abs_coeff() < 1e-12 * max(scale, 1.0)

    def test_scheme_equations(self, dis, model, res3):
        from chainlab.algebra import expand_h_har
        for i, u_i in enumerate(res3.u_terms, start=1):
            H = expand_h_har((u_i.support()[0] - 1, u_i.support()[1] + 1), dis)
            left = poisson_bracket(H, u_i) + res3.f_terms[i - 1]
            assert left.max_abs_coeff() < 1e-12 * res3.f_terms[i - 1].max_abs_coeff()
            han = expand_h_an(u_i.support(), dis, model)
            fn = poisson_bracket(han, u_i)
            assert (fn - res3.f_terms[i]).max_abs_coeff() == 0.0

    def test_degree_ladder(self, res3):
        assert [f.degree() for f in res3.f_terms] == [4, 6, 8, 10]
        assert [u.degree() for u in res3.u_terms] == [4, 6, 8]
        assert res3.g.degree() == 2 * (3 + 2)

    def test_parity_alternation(self, res3):
        for f in res3.f_terms:
            assert (f.p_image() + f).max_abs_coeff() < 1e-9 * f.max_abs_coeff()
        for u in res3.u_terms:
            assert (u.p_image() - u).max_abs_coeff() < 1e-9 * u.max_abs_coeff()

    def test_support_ladder(self, res3):
        for i, f in enumerate(res3.f_terms, start=1):
            lo, hi = f.support()
            assert lo >= -i and hi <= i - 1
        assert res3.support == (-4, 3)

    def test_order_budget(self, dis, model):
        with pytest.raises(BudgetError):
            build_recursive(0, 6, dis, model)
        with pytest.raises(BudgetError):
            build_recursive(0, 0, dis, model)

    def test_dnls_mixed_degrees(self, dis):
        md = ModelSpec(kind=DNLS, g=1.0, disorder=DisorderSpec(seed=5))
        r = build_recursive(0, 2, dis, md)
        assert r.f_terms[0].degrees() == {4, 6}
        assert r.f_terms[1].degrees() == {6, 8}
        resid = decomposition_residual(r, dis, md)
        assert resid.max_abs_coeff() < 1e-10 * r.f_terms[0].max_abs_coeff()

    def test_term_growth_fit(self, dis, model):
        rep = term_growth_fit(0, [1, 2, 3, 4], dis, model)
        assert rep["counts"][1] < rep["counts"][2] < rep["counts"][3]
        assert 0 < rep["fitted_C"] < 10.0


class TestExplicit:
    def test_i1_reduces_to_current(self, dis, model):
        f1 = build_explicit(0, 1, dis, model)
        j = expand_current(0, dis, model)
        assert (f1 - j).max_abs_coeff() < 1e-14 * j.max_abs_coeff()

    @pytest.mark.parametrize("i", [2, 3])
    def test_matches_recursive(self, dis, model, res3, i):
        fe = build_explicit(0, i, dis, model)
        fr = res3.f_terms[i - 1]
        assert (fe - fr).max_abs_coeff() < 1e-11 * fr.max_abs_coeff()

    def test_u_route_matches(self, dis, model, res3):
        ue = build_explicit(0, 2, dis, model, want_u=True)
        assert (ue - res3.u_terms[1]).max_abs_coeff() < 1e-11 * res3.u_terms[1].max_abs_coeff()

    def test_support_within_locality_interval(self, dis, model):
        for i in (2, 3):
            fe = build_explicit(0, i, dis, model)
            lo, hi = fe.support()
            assert lo >= -i and hi <= i - 1

    def test_cap_enforced(self, dis, model):
        with pytest.raises(ExplicitPathUnavailable):
            build_explicit(0, 4, dis, model)

    def test_dnls_explicit(self, dis):
        md = ModelSpec(kind=DNLS, g=1.0, disorder=DisorderSpec(seed=5))
        r = build_recursive(0, 2, dis, md)
        fe = build_explicit(0, 2, dis, md)
        assert (fe - r.f_terms[1]).max_abs_coeff() < 1e-11 * r.f_terms[1].max_abs_coeff()


class TestEvaluation:
    def test_zero_point(self, dis, model, res3):
        pt = to_normal(ChainState(kind=KG, offset=-4, q=np.zeros(9),
                                  p=np.zeros(9)), dis)
        j, b, g, r = evaluate_decomposition(res3, pt, dis, model)
        assert j == 0 and b == 0 and g == 0 and r == 0

    def test_residual_small_at_random_points(self, dis, model):
        rng = np.random.default_rng(1)
        r2 = build_recursive(0, 2, dis, model)
        for _ in range(10):
            st = ChainState(kind=KG, offset=-5, q=0.4 * rng.normal(size=11),
                            p=0.4 * rng.normal(size=11))
            pt = to_normal(st, dis)
            j, b, g, resid = evaluate_decomposition(r2, pt, dis, model)
            assert abs(resid) < 1e-9 * max(abs(j), abs(g), 1e-30)

    def test_g_scaling(self, dis, model):
        rng = np.random.default_rng(2)
        r2 = build_recursive(0, 2, dis, model)
        st = ChainState(kind=KG, offset=-5, q=0.5 * rng.normal(size=11),
                        p=0.5 * rng.normal(size=11))
        pt = to_normal(st, dis)
        lam = 0.6
        pt2 = type(pt)(offset=pt.offset, aminus=lam * pt.aminus, kind=pt.kind)
        g1 = r2.g.evaluate(pt).real
        g2 = r2.g.evaluate(pt2).real
        assert g2 / g1 == pytest.approx(lam ** (2 * (2 + 2)), rel=1e-10)

    def test_u_real_at_kg_points(self, dis, model):
        rng = np.random.default_rng(3)
        r2 = build_recursive(0, 2, dis, model)
        for _ in range(5):
            st = ChainState(kind=KG, offset=-5, q=rng.normal(size=11),
                            p=rng.normal(size=11))
            v = r2.u.evaluate(to_normal(st, dis))
            assert abs(v.imag) < 1e-12 * max(abs(v), 1e-30)


class TestTimeIntegrated:
    def test_zero_coupling_all_vanish(self, dis):
        m0 = ModelSpec(kind=KG, g=0.0, disorder=DisorderSpec(seed=5))
        r = build_recursive(0, 1, dis, m0)
        pts = [to_normal(ChainState(kind=KG, offset=-3,
                                    q=np.full(7, 0.1 * k), p=np.zeros(7)), dis)
               for k in range(5)]
        out = time_integrated_check(pts, 0.01, r, dis, m0)
        assert out["residual"] == 0.0 and out["int_j"] == 0.0

    def test_trajectory_identity(self, dis, model):
        r2 = build_recursive(0, 2, dis, model)
        st = build_initial(InitialCondition(E0=1.0), dis, model)
        h = 1e-3
        every = 10
        runner = Runner(st, dis, model, IntegratorSpec(step=h))
        pts = []
        lo, hi = runner.window
        segment_steps = int(round(10.0 / h))
        pts.append(to_normal(runner.state(), runner.disorder))
        for k in range(segment_steps):
            runner.step_once()
            if (k + 1) % every == 0:
                pts.append(to_normal(runner.state(), runner.disorder))
        offs = {p.offset for p in pts}
        assert len(offs) == 1
        out = time_integrated_check(pts, h * every, r2, dis, model)
        assert abs(out["residual"]) < 1e-6 * out["scale"]

    def test_simpson_exactness(self):
        xs = np.linspace(0, 1, 21)
        vals = xs ** 3
        assert simpson_integrate(vals, xs[1] - xs[0]) == pytest.approx(0.25, abs=1e-14)


def test_min_delta_containment(dis, model):
    from chainlab.resonance import min_delta_profile
    for n in (1, 2, 3):
        r = build_recursive(0, n, dis, model)
        scan = min_delta_profile(np.array([0]), n, dis)[0]
        assert r.min_abs_delta >= scan - 1e-12
        if n == 1:
            assert r.min_abs_delta == pytest.approx(scan, abs=1e-12)


def test_expansion_json(dis, model):
    r = build_recursive(0, 2, dis, model)
    d = r.to_json_dict()
    import json as _json
    _json.dumps(d)
    assert d["term_counts"]["f"] == [p.n_terms for p in r.f_terms]
    back = Polynomial.from_json_terms(d["g"])
    assert (back - r.g).max_abs_coeff() == 0.0
