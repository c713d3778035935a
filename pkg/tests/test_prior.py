import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakdis.prior import (
    DEFAULT_VARIANCE_FLOOR,
    GMPrior,
    classify,
    classify_batch,
    estimate_prior,
    log_component_densities,
    mixture_log_density,
    responsibilities,
    sample_component,
    sample_mixture,
    warmup_sample,
)


def _brute_force_log_density(prior, z):
    """Independent oracle: direct per-component normal pdf product, summed."""
    total = 0.0
    for mu, var in zip(prior.means, prior.variances):
        comp = np.prod(
            np.exp(-0.5 * (z - mu) ** 2 / var) / np.sqrt(2 * np.pi * var)
        )
        total += comp / len(prior.means)
    return np.log(total)


@pytest.fixture
def two_component_prior():
    means = np.array([[0.0, 0.0], [4.0, 0.0]])
    variances = np.array([[1.0, 1.0], [1.0, 1.0]])
    return GMPrior(means, variances)


def test_estimate_hand_computation():
    # codes for one combination: (0,0) and (2,0) -> mean (1,0),
    # sample variance (ddof=1) -> (2, 0) floored to (2, eps)
    codes = [np.array([[0.0, 0.0], [2.0, 0.0]])]
    prior = estimate_prior(codes)
    np.testing.assert_allclose(prior.means[0], [1.0, 0.0])
    np.testing.assert_allclose(prior.variances[0], [2.0, DEFAULT_VARIANCE_FLOOR])


def test_estimate_single_sample_floors_variance():
    codes = [np.array([[3.0, -1.0]])]
    prior = estimate_prior(codes)
    np.testing.assert_allclose(prior.means[0], [3.0, -1.0])
    np.testing.assert_allclose(prior.variances[0], [DEFAULT_VARIANCE_FLOOR] * 2)


def test_estimate_requires_all_components():
    with pytest.raises(ValueError):
        estimate_prior([np.zeros((2, 2)), np.zeros((0, 2))])


def test_prior_rejects_unfloored_variance():
    with pytest.raises(ValueError):
        GMPrior(np.zeros((1, 2)), np.full((1, 2), 1e-9))


def test_density_matches_brute_force():
    rng = np.random.default_rng(0)
    means = rng.normal(0, 2, (5, 3))
    variances = rng.uniform(0.01, 2.0, (5, 3))
    prior = GMPrior(means, variances)
    for z in rng.normal(0, 3, (20, 3)):
        fast = mixture_log_density(prior, z[None])
        slow = _brute_force_log_density(prior, z)
        assert abs(fast - slow) < 1e-9


def test_log_component_densities_shape(two_component_prior):
    z = np.zeros((4, 2))
    out = log_component_densities(two_component_prior, z)
    assert out.shape == (4, 2)
    # standard normal at its mean in 2D: -log(2*pi)
    assert abs(out[0, 0] - (-np.log(2 * np.pi))) < 1e-12


def test_responsibilities_sum_to_one(two_component_prior):
    rng = np.random.default_rng(1)
    z = rng.normal(2, 3, (50, 2))
    r = responsibilities(two_component_prior, z)
    np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(r >= 0)


def test_classify_midpoint_rejected(two_component_prior):
    # equidistant from both components: responsibility 0.5 each
    res = classify(two_component_prior, np.array([2.0, 0.0]), alpha=0.6)
    assert not res.accepted
    assert res.component is None
    assert abs(res.responsibility - 0.5) < 1e-9


def test_classify_alpha_zero_accepts_everything(two_component_prior):
    rng = np.random.default_rng(2)
    z = rng.normal(0, 5, (100, 2))
    _, _, accepted = classify_batch(two_component_prior, z, alpha=0.0)
    assert accepted.all()


def test_classify_confident_point(two_component_prior):
    res = classify(two_component_prior, np.array([0.0, 0.0]), alpha=0.9)
    assert res.accepted
    assert res.component == 0
    res = classify(two_component_prior, np.array([4.0, 0.0]), alpha=0.9)
    assert res.accepted
    assert res.component == 1


def test_classify_batch_matches_scalar(two_component_prior):
    rng = np.random.default_rng(3)
    z = rng.normal(1, 2, (10, 2))
    comps, best, accepted = classify_batch(two_component_prior, z, alpha=0.5)
    for i in range(10):
        res = classify(two_component_prior, z[i], alpha=0.5)
        assert res.component == comps[i]
        assert res.accepted == accepted[i]
        assert abs(res.responsibility - best[i]) < 1e-12


def test_sample_component_statistics():
    prior = GMPrior(np.array([[2.0, -1.0]]), np.array([[0.25, 4.0]]))
    rng = np.random.default_rng(4)
    z = sample_component(prior, 0, 20000, rng)
    np.testing.assert_allclose(z.mean(axis=0), [2.0, -1.0], atol=0.05)
    np.testing.assert_allclose(z.std(axis=0), [0.5, 2.0], atol=0.05)


def test_sample_mixture_statistics(two_component_prior):
    rng = np.random.default_rng(5)
    z = sample_mixture(two_component_prior, 40000, rng)
    # each component chosen about half the time
    near_second = (z[:, 0] > 2.0).mean()
    assert 0.47 <= near_second <= 0.53
    assert z.shape == (40000, 2)


def test_warmup_sample_uniform():
    rng = np.random.default_rng(6)
    z = warmup_sample(50000, 4, rng)
    assert z.shape == (50000, 4)
    assert z.min() >= -1.0 and z.max() <= 1.0
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=0.02)
    np.testing.assert_allclose(z.var(axis=0), 1.0 / 3.0, atol=0.01)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_density_permutation_equivariant(seed):
    # reordering components leaves the mixture density unchanged
    rng = np.random.default_rng(seed)
    means = rng.normal(0, 1, (4, 2))
    variances = rng.uniform(0.1, 1.0, (4, 2))
    z = rng.normal(0, 2, (8, 2))
    perm = rng.permutation(4)
    a = mixture_log_density(GMPrior(means, variances), z)
    b = mixture_log_density(GMPrior(means[perm], variances[perm]), z)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_estimate_deterministic():
    rng = np.random.default_rng(7)
    codes = [rng.normal(i, 1, (6, 3)) for i in range(4)]
    a = estimate_prior(codes)
    b = estimate_prior(codes)
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.variances, b.variances)
