import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad
from scipy.special import gamma as Gamma
from scipy.special import kv

from fraclab.capacity import (CapacityProblem, bessel_ball_integral, bessel_kernel, capacity, capacity_trend,
                              graded_polar_grid, grid_search_capacity, point_capacity_regime)
from fraclab.domain import MeasureData, ball_domain, box_domain, uniform_ball_density
from fraclab.kernel import KernelSpec
from fraclab.potential import (UniformBall, WolffQuery, cell_power_integral, check_ball_condition,
                               check_wolff_composition, growth_threshold, measure_growth_exponent,
                               wolff_field, wolff_potential)

# -- Wolff potential --------------------------------------------------------


def test_wolff_dirac_closed_form():
    q = WolffQuery(0.5, 2.0, 4.0)
    dom = ball_domain([0.0, 0.0], 1.0, 1 / 16)
    val = wolff_potential(MeasureData.dirac(dom, [0, 0]), [0.25, 0.0], q)
    assert val == pytest.approx(3.75, rel=1e-6)


def test_wolff_uniform_ball_closed_form():
    q = WolffQuery(0.5, 2.0, 4.0)
    assert wolff_potential(UniformBall((0.0, 0.0), 1.0), [0.0, 0.0], q) == pytest.approx(1.75, rel=1e-6)


def test_wolff_dirac_closed_form_p_not_two():
    # θ=1/(p−1)=2, γ=(2−0.5·1.5)/0.5=2.5: W = (r^{-γ} − R^{-γ})/γ
    q = WolffQuery(0.5, 1.5, 4.0)
    dom = ball_domain([0.0, 0.0], 1.0, 1 / 16)
    val = wolff_potential(MeasureData.dirac(dom, [0, 0]), [0.5, 0.0], q)
    assert val == pytest.approx((0.5 ** -2.5 - 4 ** -2.5) / 2.5, rel=1e-12)


def test_wolff_infinite_on_atom():
    q = WolffQuery(0.5, 2.0, 4.0)
    dom = ball_domain([0.0, 0.0], 1.0, 1 / 8)
    mu = MeasureData.dirac(dom, [0, 0])
    W = wolff_field(mu, q)
    assert np.isinf(W[dom.nearest_node([0, 0])]) and np.isfinite(W).sum() == dom.n_interior - 1


DOM = box_domain([[0, 1], [0, 1]], 1 / 8)
dens = arrays(float, DOM.n_interior, elements=st.floats(0, 5))
exps = st.sampled_from([1.5, 2.0, 3.0])


@given(dens, dens, exps)
def test_wolff_monotone_in_measure(a, b, p):
    q = WolffQuery(0.5, p, 2 * DOM.diam) if p < 4 else None
    lo = wolff_field(MeasureData.from_density(DOM, a), q)
    hi = wolff_field(MeasureData.from_density(DOM, a + b), q)
    assert np.all(lo <= hi * (1 + 1e-12))


@given(dens, dens, exps)
def test_wolff_quasi_additive(a, b, p):
    q = WolffQuery(0.5, p, 2 * DOM.diam)
    Wa = wolff_field(MeasureData.from_density(DOM, a), q)
    Wb = wolff_field(MeasureData.from_density(DOM, b), q)
    Wab = wolff_field(MeasureData.from_density(DOM, a + b), q)
    assert np.all(Wab <= 2 ** (1 / (p - 1)) * (Wa + Wb) * (1 + 1e-12) + 1e-300)


def test_atom_cell_integral_matches_direct_quadrature():
    dom = ball_domain([0.0, 0.0], 1.0, 1 / 8)
    q = WolffQuery(0.5, 2.0, 4.0)
    mu = MeasureData.dirac(dom, [0, 0], 0.7)
    j = dom.nearest_node([0, 0])
    rc = math.sqrt(dom.weights[j] / math.pi)
    gam = q.gamma(2)
    for E in (0.5, 1.2, 1.9):
        got = cell_power_integral(mu, q, E)[j]
        ref, _ = quad(lambda r: (0.7 * (r ** -gam - 4 ** -gam) / gam) ** E * 2 * math.pi * r, 0, rc,
                      epsabs=0, epsrel=1e-12, limit=200)
        assert got == pytest.approx(ref, rel=1e-8)
    assert np.isinf(cell_power_integral(mu, q, 2.0)[j])  # γE = N


def test_composition_scaling_exponent():
    tau = uniform_ball_density(DOM, [0.5, 0.5], 0.3)
    for p, kappa in ((2.0, 1.5), (1.5, 1.2), (3.0, 2.5)):
        q = WolffQuery(0.5, p, 2 * DOM.diam) if 0.5 * p < 2 else None
        base = check_wolff_composition(tau, kappa, q).ratio
        for t in (0.5, 2.0, 4.0):
            r = check_wolff_composition(tau.scaled(t), kappa, q).ratio
            assert r == pytest.approx(base * t ** ((kappa - p + 1) / (p - 1) ** 2), rel=1e-9)


def test_ball_condition_variants_and_growth():
    tau = uniform_ball_density(DOM, [0.5, 0.5], 0.3)
    q = WolffQuery(0.5, 2.0, 2 * DOM.diam)
    a = check_ball_condition(tau, 1.5, q, [([0.5, 0.5], 0.2), ([0.1, 0.1], 0.05)])
    b = check_ball_condition(tau, 1.5, q, [([0.5, 0.5], 0.2)], exponent="kappa_over_p_minus_1")
    assert a.ratios[1] is None and np.isfinite(a.max_ratio) and a.exponent == 1.5 and b.exponent == 1.5
    fine = box_domain([[0, 1], [0, 1]], 1 / 32)
    flat = MeasureData.from_density(fine, np.ones(fine.n_interior))
    fit = measure_growth_exponent(flat, 1.5, KernelSpec(0.5, 2.0), [[0.5, 0.5]])
    assert fit.slopes[0] == pytest.approx(2.0, abs=0.1)
    assert fit.threshold == pytest.approx(growth_threshold(1.5, 2, 0.5, 2.0)) and fit.passed


# -- Bessel kernel and capacity ---------------------------------------------


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_bessel_kernel_matches_closed_form(alpha):
    # G_α(r) = (4π)^{-N/2}/Γ(α/2) · 2 (r/2)^ν K_ν(r), ν = (α−N)/2, N = 2
    r = np.geomspace(1e-3, 20, 40)
    nu = 0.5 * (alpha - 2)
    ref = 2 * (r / 2) ** nu * kv(abs(nu), r) / (4 * math.pi) / Gamma(alpha / 2)
    assert np.allclose(bessel_kernel(alpha, r), ref, rtol=1e-10)


def test_bessel_ball_integral_positive_and_increasing():
    a, b = bessel_ball_integral(1.0, 0.01), bessel_ball_integral(1.0, 0.1)
    assert 0 < a < b


def _cvxpy_capacity(P):
    cp = pytest.importorskip("cvxpy")
    A = P.rows(list(P.target))
    g = cp.Variable(len(P.weights), nonneg=True)
    prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(P.weights, cp.power(g, P.beta)))), [A @ g >= 1])
    prob.solve()
    return prob.value


def test_capacity_matches_cvxpy_on_eight_nodes():
    rng = np.random.default_rng(7)
    prob = CapacityProblem(0.8, 1.7, rng.uniform(0, 1, (8, 2)), rng.uniform(0.01, 0.05, 8))
    for E in [(0,), (1, 4), (0, 2, 5, 7), tuple(range(8))]:
        P = prob.with_target(E)
        res = capacity(P, tol=1e-8)
        assert res.lower <= res.value and res.gap <= 1e-8
        assert res.value == pytest.approx(_cvxpy_capacity(P), rel=1e-5)


def test_capacity_matches_grid_search_on_tiny_sets():
    rng = np.random.default_rng(3)
    for m in (1, 2, 3, 8):
        prob = CapacityProblem(1.2, 2.5, rng.uniform(0, 1, (m, 2)), rng.uniform(0.01, 0.05, m))
        for k in range(1, min(m, 3) + 1):
            P = prob.with_target(range(k))
            assert capacity(P, tol=1e-8).value == pytest.approx(grid_search_capacity(P), rel=1e-3)


def test_capacity_returned_g_is_feasible():
    rng = np.random.default_rng(11)
    P = CapacityProblem(0.8, 1.7, rng.uniform(0, 1, (6, 2)), rng.uniform(0.01, 0.05, 6), [0, 3])
    res = capacity(P)
    assert np.all(P.rows([0, 3]) @ res.g >= 1 - 1e-12)
    assert res.value == pytest.approx(float((res.g ** 1.7 * P.weights).sum()))


def test_empty_target_has_zero_capacity():
    P = CapacityProblem(0.8, 1.7, np.zeros((1, 2)), np.ones(1))
    assert capacity(P).value == 0.0 and grid_search_capacity(P) == 0.0


PROB6 = CapacityProblem(0.8, 2.0, np.random.default_rng(5).uniform(0, 1, (6, 2)),
                        np.random.default_rng(6).uniform(0.01, 0.05, 6))
subsets = st.sets(st.integers(0, 5), min_size=1)


@given(subsets, subsets)
def test_capacity_monotone_and_subadditive_certified(E1, E2):
    c1 = capacity(PROB6.with_target(E1), tol=1e-6)
    c2 = capacity(PROB6.with_target(E2), tol=1e-6)
    cu = capacity(PROB6.with_target(E1 | E2), tol=1e-6)
    assert cu.lower <= c1.value + c2.value
    assert c1.lower <= cu.value and c2.lower <= cu.value


def test_point_capacity_regime():
    assert point_capacity_regime(0.5, 5.0, 2) == "positive"
    assert point_capacity_regime(0.5, 1.2, 2) == "null"
    assert point_capacity_regime(1.0, 2.0, 2) == "null"


def test_graded_polar_grid_area():
    pts, w, tgt = graded_polar_grid(0.1)
    assert w.sum() == pytest.approx(math.pi * 12 ** 2, rel=1e-12)
    assert w[tgt].sum() == pytest.approx(math.pi * 0.01, rel=1e-12)
    assert np.all(np.linalg.norm(pts[tgt], axis=1) < 0.1)


@pytest.mark.slow
@pytest.mark.parametrize("alpha,beta", [(0.5, 1.2), (0.5, 5.0)])
def test_ball_shrinkage_trend_matches_regime(alpha, beta):
    tr = capacity_trend(alpha, beta)
    assert tr.verdict == tr.expected
