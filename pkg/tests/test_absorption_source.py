import numpy as np
import pytest

from fraclab.absorption import (AbsorptionRun, critical_exponent, radial_slope, run_absorption,
                                run_power_absorption, sandwich_constants, subcritical_check)
from fraclab.domain import MeasureData, box_domain, uniform_ball_density
from fraclab.kernel import KernelSpec, assemble_kernel
from fraclab.nonlinearity import Nonlinearity
from fraclab.potential import WolffQuery
from fraclab.source import (FixedPointConfig, fixed_point_iterate, measure_ball_constant,
                            monotone_source_iterate, solve_ball_constants)

# -- subcritical test ---------------------------------------------------------


def test_lambda_g_closed_form():
    # q = N(p−1)/(N−sp) = 2; ∫_1^∞ 2 t^{1.5} t^{−3} dt = 4
    v = subcritical_check(Nonlinearity.power(1.5), 2, 0.5, 2.0)
    assert v.verdict == "subcritical" and v.threshold == 2.0
    assert v.lambda_g == pytest.approx(4.0, rel=1e-6)


@pytest.mark.parametrize("kappa", [2.0, 3.0])
def test_power_at_or_above_threshold_is_supercritical(kappa):
    v = subcritical_check(Nonlinearity.power(kappa), 2, 0.5, 2.0)
    assert v.verdict == "supercritical" and np.isinf(v.lambda_g)


def test_bounded_nonlinearity_is_subcritical():
    g = Nonlinearity.table([-1, 0, 1], [-1, 0, 1]).truncated(1.0)
    assert subcritical_check(g, 1, 0.25, 2.0).verdict == "subcritical"


def test_critical_exponent_values():
    assert critical_exponent(2, 0.5, 2.0) == 2.0
    assert critical_exponent(1, 0.25, 3.0) == pytest.approx(2 / 0.25)


# -- sandwich and slope helpers -----------------------------------------------


def test_radial_slope_recovers_exact_power():
    dom = box_domain([[0, 1], [0, 1]], 1 / 64)
    r = np.linalg.norm(dom.interior_points - 0.5, axis=1)
    u = np.where(r > 0, r, 1.0) ** -0.75
    assert radial_slope(dom, u, [0.5, 0.5], 0.05, 0.4) == pytest.approx(-0.75, abs=1e-10)


def test_sandwich_constants_small_cases():
    u = np.array([1.0, -2.0, 3.0, 0.0])
    wp = np.array([2.0, 1.0, np.inf, 1.0])
    wm = np.array([1.0, 4.0, 1.0, 1.0])
    assert sandwich_constants(u, wp, wm) == (0.5, 0.5)
    assert sandwich_constants(np.array([1.0]), np.array([0.0]), np.array([1.0]))[0] == np.inf
    assert sandwich_constants(np.array([1.0]), np.ones(1), np.ones(1))[1] is None


# -- absorption runs -------------------------------------------------------------


def _dirac_run(h, kappa, point=0.5, mass=1.0):
    dom = box_domain([[0, 1]], h)
    return AbsorptionRun(dom, KernelSpec(0.25, 2.0), Nonlinearity.power(kappa), MeasureData.dirac(dom, [point], mass))


def test_absorption_l1_bound_and_sign():
    dom = box_domain([[0, 1]], 1 / 64)
    mu = MeasureData.dirac(dom, [0.3], 2.0) + MeasureData.dirac(dom, [0.7], -1.0)
    run = run_absorption(AbsorptionRun(dom, KernelSpec(0.25, 2.0), Nonlinearity.power(1.5), mu))
    assert run.checks["converged"] and run.checks["l1_bound"] and run.checks["sandwich_finite"]
    assert run.results["g_l1"] <= run.results["total_variation"] * (1 + 1e-8)
    assert run.c_plus is not None and run.c_minus is not None


def test_sandwich_constants_stable_under_refinement():
    cs = [run_absorption(_dirac_run(h, 1.5)).c_plus for h in (1 / 32, 1 / 64, 1 / 128)]
    assert max(cs) / min(cs) < 2.0


def test_truncated_scheme_reaches_inactive_level():
    run = run_absorption(_dirac_run(1 / 64, 3.0, mass=5.0))
    tr = run.results["truncation"]
    assert tr["stabilized_at"] is not None and tr["history"][-1]["max_g"] < tr["history"][-1]["level"]


def test_supercritical_dirac_signature_diverges():
    run = run_power_absorption(_dirac_run(1 / 32, 3.0))
    assert run.results["point_capacity_regime"] == "null" and not run.results["admissible"]
    assert run.checks["nonexistence_signature"]


def test_subcritical_dirac_signature_stable():
    run = run_power_absorption(_dirac_run(1 / 32, 1.5))
    assert run.results["point_capacity_regime"] == "positive" and run.checks["refinement_stable"]


def test_power_absorption_rejects_small_kappa():
    with pytest.raises(ValueError):
        run_power_absorption(_dirac_run(1 / 16, 0.9))


# -- ball constants ----------------------------------------------------------------


def test_ball_constants_fixed_t():
    bc = solve_ball_constants(0.5, 2.0, 1.5, t=0.1)
    assert bc.rho0 == pytest.approx(0.2 - 0.01 - 0.1 ** 1.5, rel=1e-12)
    assert bc.rho0 <= 0.1584 and bc.holds()
    assert 0.5 * (0.1 ** 2 + 0.1 ** 1.5 + bc.rho0) <= 0.1


@pytest.mark.parametrize("C", [0.01, 0.3, 2.0, 7.5])
def test_ball_constants_scan_holds_exactly(C):
    bc = solve_ball_constants(C, 2.0, 1.5)
    assert bc.rho0 > 0 and bc.holds() and not bc.holds(np.nextafter(bc.rho0, np.inf) * 1.01)


def test_ball_constants_infeasible_raises():
    with pytest.raises(ArithmeticError):
        solve_ball_constants(1e3, 2.0, 3.0)


# -- source problems -----------------------------------------------------------------


@pytest.fixture(scope="module")
def source_1d():
    dom = box_domain([[0, 1]], 1 / 64)
    table = assemble_kernel(dom, KernelSpec(0.25, 2.0))
    g = Nonlinearity.power(1.5)
    mc = measure_ball_constant(dom, table, g, 1.5)
    return dom, table, g, solve_ball_constants(mc["C"], mc["a"], 1.5)


def test_fixed_point_converges_inside_ball(source_1d):
    dom, table, g, bc = source_1d
    res = fixed_point_iterate(dom, table, g, MeasureData.dirac(dom, [0.5]),
                              FixedPointConfig(0.5 * bc.rho0, bc.t0, bc.C, bc.a, 1.5))
    assert res.converged and not res.escaped and res.ball_invariance
    assert res.fixed_point_residual < 1e-6
    assert max(o["norm_out"] for o in res.orbit) <= bc.t0
    assert np.all(res.field >= 0)


def test_fixed_point_escape_flag(source_1d):
    dom, table, _, bc = source_1d
    res = fixed_point_iterate(dom, table, Nonlinearity.power(3.0), MeasureData.dirac(dom, [0.5]),
                              FixedPointConfig(10 * bc.rho0, bc.t0, bc.C, bc.a, 1.5))
    assert res.escaped and not res.converged and "left the ball" in res.message


def test_fixed_point_zero_data(source_1d):
    dom, table, g, bc = source_1d
    res = fixed_point_iterate(dom, table, g, MeasureData.zero(dom), FixedPointConfig(0.1, bc.t0, bc.C, bc.a, 1.5))
    assert res.converged and not np.any(res.field)


@pytest.fixture(scope="module")
def monotone_2d():
    dom = box_domain([[0, 1], [0, 1]], 1 / 12)
    table = assemble_kernel(dom, KernelSpec(0.5, 2.0))
    tau = uniform_ball_density(dom, [0.5, 0.5], 0.25)
    q = WolffQuery.for_domain(dom, 0.5, 2.0)
    return dom, table, tau, q, monotone_source_iterate(dom, table, 1.5, tau, 0.05, q)


def test_monotone_iteration_stabilizes(monotone_2d):
    *_, res = monotone_2d
    assert res.status == "stabilized" and res.barrier_ok and res.admissible
    assert res.min_increment >= -1e-12 and res.stabilized_1pct_at is not None
    assert np.all(res.field <= res.barrier)


def test_monotone_iteration_aborts_on_barrier(monotone_2d):
    dom, table, tau, q, res = monotone_2d
    big = monotone_source_iterate(dom, table, 1.5, tau, 0.05 * 1e6, q, M=res.M, C=res.C)
    assert big.status == "barrier_exceeded" and not big.barrier_ok and not big.admissible


def test_monotone_rejects_signed_data(monotone_2d):
    dom, table, tau, q, _ = monotone_2d
    with pytest.raises(ValueError):
        monotone_source_iterate(dom, table, 1.5, tau.scaled(-1.0), 0.05, q)
