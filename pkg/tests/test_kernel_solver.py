import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fraclab.domain import MeasureData, box_domain, interval_domain, uniform_ball_density
from fraclab.kernel import (KernelSpec, apply_operator, assemble_kernel, energy, phi, tail,
                            truncation_energy, weak_form)
from fraclab.nonlinearity import Nonlinearity
from fraclab.solver import (absorption_l1_bound, check_comparison, minimize_J, objective, solve_linear)

DOM = interval_domain(0, 1, 1 / 16)
TABLES = {p: assemble_kernel(DOM, KernelSpec(0.25, p)) for p in (1.5, 2.0, 3.0)}
fields = arrays(float, DOM.n_interior, elements=st.floats(-5, 5))


def test_exterior_row_sums_match_explicit_collar_sum():
    t = TABLES[2.0]
    K = t.full_block()
    n = DOM.n_interior
    assert np.allclose(K[:n, n:].sum(axis=1), t.s_ext, rtol=1e-12)
    assert np.allclose(K[:n, :n], t.dense, rtol=1e-14)


def test_fft_block_matches_dense():
    dom = box_domain([[0, 1], [0, 1]], 1 / 12)
    spec = KernelSpec(0.5, 2.0)
    dense = assemble_kernel(dom, spec)
    fft = assemble_kernel(dom, spec, dense=False)
    u = np.random.default_rng(0).standard_normal(dom.n_interior)
    assert np.allclose(dense.block_matvec(u), fft.block_matvec(u), rtol=1e-11, atol=1e-13)
    assert np.allclose(weak_form(dense, u), weak_form(fft, u), rtol=1e-11, atol=1e-13)


def test_full_length_operator_agrees_with_interior_form():
    t = TABLES[3.0]
    u = np.cos(np.arange(DOM.n_interior))
    full = np.zeros(DOM.n_total)
    full[: DOM.n_interior] = u
    assert np.allclose(apply_operator(t, full)[: DOM.n_interior], apply_operator(t, u), rtol=1e-12)
    assert energy(t, full) == pytest.approx(energy(t, u), rel=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_energy_gradient_finite_differences(p):
    t = TABLES[p]
    rng = np.random.default_rng(int(p * 10))
    w = DOM.weights
    for _ in range(3):
        u = rng.standard_normal(DOM.n_interior)
        grad = 2 * w * apply_operator(t, u)
        eps = 1e-6
        fd = np.array([(energy(t, u + eps * e) - energy(t, u - eps * e)) / (2 * eps)
                       for e in np.eye(DOM.n_interior)])
        assert np.max(np.abs(fd - grad)) <= 1e-5 * np.max(np.abs(grad))


@given(fields, st.floats(-4, 4), st.sampled_from([1.5, 2.0, 3.0]))
def test_energy_scaling(u, t, p):
    assert energy(TABLES[p], t * u) == pytest.approx(abs(t) ** p * energy(TABLES[p], u), rel=1e-10, abs=1e-300)


@given(fields, fields, st.sampled_from([1.5, 2.0, 3.0]))
def test_difference_form_monotone(u, v, p):
    a = u[:, None] - u[None, :]
    b = v[:, None] - v[None, :]
    assert np.all((phi(a, p) - phi(b, p)) * (a - b) >= 0)


def test_strict_convexity_of_J(rng):
    g = Nonlinearity.power(1.5)
    b = np.zeros(DOM.n_interior)
    for p, t in TABLES.items():
        for _ in range(5):
            u, v = rng.standard_normal((2, DOM.n_interior))
            mid = objective(t, g, b, 0.5 * (u + v))
            assert mid < 0.5 * (objective(t, g, b, u) + objective(t, g, b, v)) - 1e-8


def test_linear_solve_matches_dense_system():
    t = TABLES[2.0]
    K = t.full_block()
    n = DOM.n_interior
    A = 2.0 * (np.diag(K[:n].sum(axis=1)) - K[:n, :n])
    mu = MeasureData.dirac(DOM, [0.3]) + MeasureData.from_density(DOM, np.linspace(-1, 1, n))
    ref = np.linalg.solve(A, mu.node_masses)
    rep = solve_linear(DOM, t, mu, tol=1e-12)
    assert rep.converged
    assert np.allclose(rep.field, ref, rtol=1e-10, atol=1e-12)


def test_zero_measure_gives_zero_field():
    rep = solve_linear(DOM, TABLES[1.5], MeasureData.zero(DOM))
    assert rep.converged and not np.any(rep.field)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_nonlinear_solve_residual(p):
    mu = MeasureData.dirac(DOM, [0.5])
    rep = minimize_J(DOM, TABLES[p], Nonlinearity.power(2.0), mu, 1e-10)
    assert rep.converged and rep.residual <= 1e-10
    assert np.all(rep.field >= 0)


def test_two_dimensional_p15_dirac_converges():
    dom = box_domain([[0, 1], [0, 1]], 1 / 16)
    t = assemble_kernel(dom, KernelSpec(0.5, 1.5))
    rep = solve_linear(dom, t, MeasureData.dirac(dom, [0.5, 0.5]))
    assert rep.converged


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1.5, 2.0, 3.0]))
def test_comparison_principle(seed, p):
    rng = np.random.default_rng(seed)
    dens = rng.standard_normal(DOM.n_interior)
    bump = np.abs(rng.standard_normal(DOM.n_interior))
    g = Nonlinearity.power(1.5)
    lo = minimize_J(DOM, TABLES[p], g, MeasureData.from_density(DOM, dens), 1e-11, diagnostics=False)
    hi = minimize_J(DOM, TABLES[p], g, MeasureData.from_density(DOM, dens + bump), 1e-11, diagnostics=False)
    ok, viol = check_comparison(hi, lo)
    assert ok, viol


@pytest.mark.parametrize("g", [Nonlinearity.power(1.5), Nonlinearity.power(3.0), Nonlinearity.linear(),
                               Nonlinearity.table([-1, 0, 1], [-4, 0, 4])])
def test_absorption_l1_contraction(g):
    mu = MeasureData.dirac(DOM, [0.5], 2.0) - MeasureData.dirac(DOM, [0.2])
    rep = minimize_J(DOM, TABLES[2.0], g, mu, 1e-10)
    ok, lhs, rhs = absorption_l1_bound(rep)
    assert ok and lhs <= rhs


def test_jordan_sandwich_of_solutions():
    g = Nonlinearity.power(2.0)
    t = TABLES[2.0]
    lam1 = MeasureData.dirac(DOM, [0.3])
    lam2 = MeasureData.dirac(DOM, [0.7], 0.5)
    u = minimize_J(DOM, t, g, lam1 - lam2, 1e-11).field
    u1 = minimize_J(DOM, t, g, lam1, 1e-11).field
    u2 = minimize_J(DOM, t, g.reflected(), lam2, 1e-11).field
    assert np.all(u <= u1 + 1e-9) and np.all(-u2 <= u + 1e-9)


def test_truncated_scheme_monotone_in_level():
    g = Nonlinearity.power(3.0)
    mu = MeasureData.dirac(DOM, [0.5], 3.0)
    prev = None
    for n in (0.5, 1, 2, 4, 8, 1e6):
        u = minimize_J(DOM, TABLES[2.0], g.truncated(n), mu, 1e-11, diagnostics=False).field
        if prev is not None:
            assert np.all(u <= prev + 1e-9)
        prev = u
    full = minimize_J(DOM, TABLES[2.0], g, mu, 1e-11, diagnostics=False).field
    assert np.allclose(prev, full, atol=1e-9)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_truncation_energy_bound(p):
    mu = MeasureData.dirac(DOM, [0.5]) - uniform_ball_density(DOM, [0.2], 0.1, 0.5)
    rep = solve_linear(DOM, TABLES[p], mu, tol=1e-11)
    for k in (1, 2, 4, 8):
        assert truncation_energy(DOM, rep.field, k, TABLES[p].spec) <= k * mu.total_variation * (1 + 1e-9)


def test_tail_and_collar_bound():
    u = np.ones(DOM.n_interior)
    spec = KernelSpec(0.25, 2.0)
    r = tail(DOM, u, [0.5], 0.25, spec)
    assert r.value > 0 and not r.truncated
    assert tail(DOM, u, [0.5], 10.0, spec).truncated
    assert r.collar_bound > 0


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(0.5, 2.0).validate(1)  # sp = N
    with pytest.raises(ValueError):
        KernelSpec(0.5, 2.0, lambda_K=0.5).validate(2)
    lo, hi = KernelSpec(0.5, 2.0, 3.0, "cosine").factor_range()
    assert lo == pytest.approx(1 / 3) and hi == pytest.approx(3.0)
