import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fraclab.domain import (MeasureData, ball_domain, box_domain, domain_from_descriptor, interval_domain,
                            mollify, uniform_ball_density)
from fraclab.norms import (SeminormSpec, distribution_function, gagliardo_seminorm, lebesgue_norm,
                           weak_norm_star, weak_norm_sup)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_box_grid_counts_and_volume():
    dom = box_domain([[0, 1], [0, 2]], 0.25)
    assert dom.n_interior == 4 * 8
    assert dom.volume == pytest.approx(2.0, rel=1e-14)
    assert dom.r_ext == pytest.approx(4 * math.sqrt(5))


def test_box_rejects_incommensurate_spacing():
    with pytest.raises(ValueError):
        box_domain([[0, 1]], 0.3)


def test_ball_domain_contains_center_node():
    dom = ball_domain([0.0, 0.0], 0.5, 1 / 8)
    i = dom.nearest_node([0.0, 0.0])
    assert np.allclose(dom.interior_points[i], 0.0)
    assert np.all(np.linalg.norm(dom.interior_points, axis=1) < 0.5)


def test_descriptor_roundtrip():
    dom = box_domain([[0, 1], [0, 1]], 1 / 8)
    again = domain_from_descriptor(dom.descriptor())
    assert np.array_equal(again.interior_points, dom.interior_points)


def test_dirac_goes_to_nearest_node_lowest_index_on_ties():
    dom = interval_domain(0, 1, 0.25)  # nodes 0.125, 0.375, ...
    mu = MeasureData.dirac(dom, [0.25])
    assert list(mu.atoms) == [0]
    assert mu.total_mass == 1.0


@given(arrays(float, 16, elements=finite), st.dictionaries(st.integers(0, 15), finite, max_size=4))
def test_jordan_reconstruction_exact(dens, atoms):
    dom = interval_domain(0, 1, 1 / 16)
    mu = MeasureData(dom, atoms, dens)
    rec = mu.positive() - mu.negative()
    assert np.array_equal(rec.node_masses, mu.node_masses)
    assert mu.total_variation == pytest.approx(mu.positive().total_mass + mu.negative().total_mass)


def test_uniform_ball_density_mass_exact():
    dom = box_domain([[0, 1], [0, 1]], 1 / 16)
    mu = uniform_ball_density(dom, [0.5, 0.5], 0.2, 0.7)
    assert mu.total_mass == pytest.approx(0.7, rel=1e-14)


def test_mollify_preserves_mass_and_not_tv():
    dom = box_domain([[0, 1], [0, 1]], 1 / 16)
    mu = MeasureData.dirac(dom, [0.5, 0.5]) - MeasureData.dirac(dom, [0.2, 0.7], 0.5)
    out, applied = mollify(mu, 4)
    assert applied
    assert out.total_mass == pytest.approx(mu.total_mass, abs=1e-14)
    assert out.total_variation <= mu.total_variation + 1e-14


def test_mollify_below_grid_returns_input():
    dom = interval_domain(0, 1, 1 / 8)
    mu = MeasureData.dirac(dom, [0.5])
    with pytest.warns(RuntimeWarning):
        out, applied = mollify(mu, 100)
    assert not applied and out is mu


# -- norms ------------------------------------------------------------------


def test_constant_field_weak_norms_closed_form():
    w = np.full(10, 0.1)
    f = np.full(10, 3.0)
    for q in (1.5, 2.0, 3.0):
        assert weak_norm_star(f, q, w) == pytest.approx(3.0 * 1.0 ** (1 / q))
        assert weak_norm_sup(f, q, w) == pytest.approx(3.0)


def test_two_level_field_weak_star_by_hand():
    # |f| = 2 on weight 0.25, 1 on weight 0.75: sup_a a λ(a)^{1/2} = max(2·0.5, 1·1) = 1
    f = np.array([2.0, 1.0, 1.0, 1.0])
    w = np.full(4, 0.25)
    assert weak_norm_star(f, 2.0, w) == pytest.approx(1.0)
    assert distribution_function(f, 1.5, w) == 0.25
    assert lebesgue_norm(f, 2, w) == pytest.approx(math.sqrt(4 * 0.25 + 3 * 0.25))


def _brute_sup(f, q, w):
    best = 0.0
    n = len(f)
    for mask in range(1, 2 ** n):
        idx = [i for i in range(n) if mask >> i & 1]
        best = max(best, np.abs(f[idx]).dot(w[idx]) / w[idx].sum() ** (1 - 1 / q))
    return best


@given(arrays(float, 8, elements=st.floats(-10, 10)), st.sampled_from([1.5, 2.0, 3.0]))
def test_superlevel_sup_matches_all_subsets_equal_weights(f, q):
    w = np.full(8, 0.125)
    assert weak_norm_sup(f, q, w) == pytest.approx(_brute_sup(f, q, w), rel=1e-12, abs=1e-300)


@given(arrays(float, 40, elements=finite), arrays(float, 40, elements=st.floats(1e-3, 1.0)),
       st.sampled_from([1.5, 2.0, 3.0]))
def test_equinorm_sandwich_exact(f, w, q):
    star = weak_norm_star(f, q, w)
    sup = weak_norm_sup(f, q, w)
    assert star <= sup <= q / (q - 1) * star


@given(arrays(float, 30, elements=finite), st.floats(0.01, 100), st.sampled_from([1.5, 2.0, 3.0]))
def test_chebyshev_bound(u, s, q):
    w = np.full(30, 1 / 30)
    lhs = w[np.abs(u) >= s].sum()
    assert lhs <= s ** (-q) * weak_norm_sup(u, q, w) ** q * (1 + 1e-12)


def test_gagliardo_homogeneous_and_zero_on_constants():
    dom = interval_domain(0, 1, 1 / 16)
    spec = SeminormSpec(0.1, 1.5)
    f = np.sin(np.linspace(0, 3, dom.n_interior))
    base = gagliardo_seminorm(dom, f, spec)
    assert base > 0
    for t in (-2.5, 0.5, 3.0):
        assert gagliardo_seminorm(dom, t * f, spec) == pytest.approx(abs(t) * base, rel=1e-12)
    const = np.full(dom.n_total, 1.7)
    assert gagliardo_seminorm(dom, const, spec) == 0.0
