import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from enkf_rare.lsf import (AffineLSF, LimitState, auxiliary_lsf, eval_lsf, form_probability,
                           get_problem, mlfp)

BENCHMARKS = ("convex", "parabolic", "series")


@pytest.mark.parametrize("name, u, expected", [
    ("convex", (0.0, 0.0), 2.5),
    ("parabolic", (0.1, 0.0), 5.0),
    ("series", (0.0, 0.0), 3.0),
])
def test_benchmark_values(name, u, expected):
    assert eval_lsf(get_problem(name), np.array(u)) == pytest.approx(expected, abs=1e-14)


def test_convex_formula_off_origin():
    u = np.array([0.7, -1.3])
    expected = 0.1 * (u[0] - u[1]) ** 2 - (u[0] + u[1]) / np.sqrt(2) + 2.5
    assert get_problem("convex")(u) == pytest.approx(expected, rel=1e-14)


def test_batch_matches_pointwise(rng):
    for name in BENCHMARKS:
        lsf = get_problem(name)
        u = rng.standard_normal((7, 2))
        batch = lsf(u)
        assert batch.shape == (7,)
        np.testing.assert_array_equal(batch, [lsf(x) for x in u])


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        get_problem("convex")(np.zeros(3))
    with pytest.raises(ValueError):
        get_problem("series")(np.zeros((4, 5)))


@pytest.mark.parametrize("g, expected", [(-1.0, 0.0), (0.0, 0.0), (2.5, 2.5)])
def test_auxiliary_lsf(g, expected):
    assert auxiliary_lsf(g) == expected


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(BENCHMARKS),
       st.lists(st.floats(-8, 8), min_size=2, max_size=2))
def test_auxiliary_nonnegative_and_zero_iff_failure(name, u):
    g = eval_lsf(get_problem(name), np.array(u))
    gt = auxiliary_lsf(g)
    assert gt >= 0.0
    assert (gt == 0.0) == (g <= 0.0)


def test_limit_state_validation():
    with pytest.raises(ValueError):
        LimitState("bad", 0, lambda u: u[:, 0])
    with pytest.raises(ValueError):
        LimitState("bad", 1, lambda u: u[:, 0], reference_pf=1.5)
    with pytest.raises(ValueError):
        LimitState("bad", 1, lambda u: u[:, 0], recommended_localization="everywhere")


@pytest.mark.parametrize("a, b, expected", [
    ((1.0, 0.0), -2.0, (-2.0, 0.0)),
    ((0.0, 1.0), 3.0, (0.0, 3.0)),
    ((1.0, 1.0), 2.0, (1.0, 1.0)),
])
def test_mlfp(a, b, expected):
    lsf = AffineLSF(np.array(a), b)
    u = mlfp(lsf)
    np.testing.assert_allclose(u, expected, atol=1e-15)
    assert lsf(u) == pytest.approx(0.0, abs=1e-14)


def test_form_probability_values():
    assert form_probability(AffineLSF(np.array([1.0, 0.0, 0.0]), -2.0)) == pytest.approx(0.0227501, abs=5e-8)
    # |u*| = sqrt(2); the origin is safe for b = -2 and failed for b = 2
    assert form_probability(AffineLSF(np.array([1.0, 1.0]), -2.0)) == pytest.approx(0.0786496, abs=5e-8)
    assert form_probability(AffineLSF(np.array([1.0, 1.0]), 2.0)) == pytest.approx(1 - 0.0786496, abs=5e-8)
    # b -> 0 from below approaches a half space through the origin
    assert form_probability(AffineLSF(np.array([1.0, 0.0]), -1e-12)) == pytest.approx(0.5, abs=1e-11)
    # origin inside the failure domain
    assert form_probability(AffineLSF(np.array([1.0]), 2.0)) == pytest.approx(1 - norm.cdf(-2.0))


def test_form_probability_degenerate():
    with pytest.raises(ValueError):
        form_probability(AffineLSF(np.array([1.0, 0.0]), 0.0))


def test_affine_rejects_zero_vector():
    with pytest.raises(ValueError):
        AffineLSF(np.zeros(2), 1.0)


def test_affine_form_matches_crude_mc(rng):
    lsf = AffineLSF(np.array([0.6, -0.8, 0.5]), -2.2)
    pf = form_probability(lsf)
    n = 1_000_000
    p_hat = np.mean(lsf(rng.standard_normal((n, 3))) < 0)
    assert abs(p_hat - pf) <= 3 * np.sqrt(pf * (1 - pf) / n)


def test_registry_names():
    assert get_problem("convex").reference_pf == 4.21e-3
    assert get_problem("parabolic").recommended_mixtures == 2
    assert get_problem("series").recommended_alpha == 0.25
    lsf = get_problem("affine(1,0,-2)")
    assert lsf.dim == 2
    assert lsf.reference_pf == pytest.approx(norm.cdf(-2.0))
    assert lsf(np.array([-2.0, 5.0])) == 0.0
    with pytest.raises(KeyError):
        get_problem("unknown")
    with pytest.raises(ValueError):
        get_problem("affine(1)")


def test_deterministic_evaluation(rng):
    u = rng.standard_normal((50, 2))
    for name in BENCHMARKS:
        lsf = get_problem(name)
        np.testing.assert_array_equal(lsf(u), lsf(u.copy()))
