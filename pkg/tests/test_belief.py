import numpy as np
import pytest

from ipp3d.belief import (
    BeliefState,
    GpHyperparams,
    MeasurementBatch,
    expected_trace_reduction,
    gp_condition,
    init_prior,
    kalman_update,
    load_covariance,
    save_belief,
    squared_exponential,
    trace_over,
)
from ipp3d.errors import DimensionError


def _random_posterior(seed, width=4, height=4, n_updates=2):
    """A belief that has already absorbed a few random measurements."""
    rng = np.random.default_rng(seed)
    hp = GpHyperparams()
    belief = init_prior(width, height, 2.5, hp)
    n = belief.n_cells
    for _ in range(n_updates):
        m = rng.integers(1, 5)
        belief = kalman_update(
            belief,
            MeasurementBatch(
                cell_indices=rng.choice(n, size=m, replace=False),
                values=rng.random(m),
                variances=rng.uniform(0.05, 0.5, m),
            ),
        )
    return belief


# ---------------------------------------------------------------- init_prior


def test_prior_single_cell_variance_is_signal_variance():
    hp = GpHyperparams(length_scale=3.67, signal_variance=1.82, noise_variance=1.42)
    belief = init_prior(1, 1, 2.5, hp)
    assert belief.cov == pytest.approx(np.array([[1.82]]))


def test_prior_mean_is_half_everywhere():
    belief = init_prior(6, 3, 2.5, GpHyperparams())
    assert np.all(belief.mu == 0.5)


def test_prior_offdiagonal_matches_scalar_kernel():
    hp = GpHyperparams(length_scale=3.67, signal_variance=1.82, noise_variance=1.42)
    belief = init_prior(2, 2, 2.5, hp)
    # Independent scalar kernel evaluation per cell pair.
    centers = np.array([[1.25, 1.25], [3.75, 1.25], [1.25, 3.75], [3.75, 3.75]])
    for i in range(4):
        for j in range(4):
            d2 = np.sum((centers[i] - centers[j]) ** 2)
            want = 1.82 * np.exp(-d2 / (2 * 3.67**2))
            assert belief.cov[i, j] == pytest.approx(want, rel=1e-12)
    side = 1.82 * np.exp(-(2.5**2) / (2 * 3.67**2))
    assert belief.cov[0, 1] == pytest.approx(side)


# ---------------------------------------------------------------- gp_condition


def test_gp_condition_interpolates_with_tiny_noise():
    hp = GpHyperparams(noise_variance=1e-12)
    prior = init_prior(3, 3, 2.5, hp)
    post = gp_condition(prior, np.array([4]), np.array([0.9]), hp)
    assert post.cov[4, 4] <= 1e-9
    assert post.mu[4] == pytest.approx(0.9, abs=1e-5)


def test_gp_condition_empty_observation_is_identity():
    hp = GpHyperparams()
    prior = init_prior(3, 3, 2.5, hp)
    post = gp_condition(prior, np.array([], dtype=int), np.array([]), hp)
    assert np.array_equal(post.mu, prior.mu)
    assert np.array_equal(post.cov, prior.cov)


def test_gp_condition_shrinks_trace():
    hp = GpHyperparams()
    prior = init_prior(3, 3, 2.5, hp)
    post = gp_condition(prior, np.array([0, 5]), np.array([1.0, 0.0]), hp)
    assert np.trace(post.cov) < np.trace(prior.cov)


# ---------------------------------------------------------------- kalman_update


def test_kalman_scalar_case_by_hand():
    # Prior variance 1, measurement variance 1, prior mean 0, z = 1:
    # gain 0.5, posterior mean 0.5, posterior variance 0.5.
    belief = BeliefState(mu=np.zeros(1), cov=np.ones((1, 1)))
    batch = MeasurementBatch(cell_indices=[0], values=[1.0], variances=[1.0])
    post = kalman_update(belief, batch)
    assert post.mu[0] == pytest.approx(0.5, abs=1e-7)
    assert post.cov[0, 0] == pytest.approx(0.5, abs=1e-7)


def test_kalman_uninformative_measurement_changes_nothing():
    belief = _random_posterior(3)
    batch = MeasurementBatch(cell_indices=[5], values=[1.0], variances=[1e12])
    post = kalman_update(belief, batch)
    assert np.allclose(post.mu, belief.mu, atol=1e-6)
    assert np.allclose(post.cov, belief.cov, atol=1e-6)


def test_kalman_matches_gp_condition_oracle():
    hp = GpHyperparams()
    prior = init_prior(4, 4, 2.5, hp)
    cells = np.array([1, 7, 12])
    z = np.array([0.8, 0.2, 0.6])
    batch = MeasurementBatch(
        cell_indices=cells, values=z, variances=np.full(3, hp.noise_variance)
    )
    via_kalman = kalman_update(prior, batch)
    via_gp = gp_condition(prior, cells, z, hp)
    assert np.allclose(via_kalman.mu, via_gp.mu, atol=1e-6)
    assert np.allclose(via_kalman.cov, via_gp.cov, atol=1e-6)


def test_sequential_equals_batch():
    belief = _random_posterior(9)
    rng = np.random.default_rng(42)
    cells = rng.choice(belief.n_cells, size=5, replace=False)
    z = rng.random(5)
    var = rng.uniform(0.1, 0.4, 5)
    batch_post = kalman_update(belief, MeasurementBatch(cells, z, var))
    seq_post = belief
    for i in range(5):
        seq_post = kalman_update(
            seq_post, MeasurementBatch(cells[i : i + 1], z[i : i + 1], var[i : i + 1])
        )
    assert np.allclose(batch_post.mu, seq_post.mu, atol=1e-6)
    assert np.allclose(batch_post.cov, seq_post.cov, atol=1e-6)


def test_order_invariance():
    belief = _random_posterior(5)
    rng = np.random.default_rng(17)
    cells = rng.choice(belief.n_cells, size=4, replace=False)
    z = rng.random(4)
    var = rng.uniform(0.1, 0.3, 4)
    perm = rng.permutation(4)
    a = kalman_update(belief, MeasurementBatch(cells, z, var))
    b = kalman_update(belief, MeasurementBatch(cells[perm], z[perm], var[perm]))
    assert np.allclose(a.mu, b.mu, atol=1e-8)
    assert np.allclose(a.cov, b.cov, atol=1e-8)


def test_symmetry_and_psd_preserved():
    belief = _random_posterior(23, n_updates=6)
    assert np.max(np.abs(belief.cov - belief.cov.T)) <= 1e-8
    assert np.min(np.linalg.eigvalsh(belief.cov)) >= -1e-8
    assert np.all(np.diag(belief.cov) >= 0)


def test_monotone_uncertainty_on_measured_sets():
    belief = _random_posterior(31)
    rng = np.random.default_rng(8)
    cells = rng.choice(belief.n_cells, size=4, replace=False)
    batch = MeasurementBatch(cells, rng.random(4), rng.uniform(0.1, 0.5, 4))
    post = kalman_update(belief, batch)
    for subset in (cells, cells[:2], np.arange(belief.n_cells)):
        assert trace_over(post, subset) <= trace_over(belief, subset) + 1e-9


def test_measurement_batch_validation():
    with pytest.raises(DimensionError):
        MeasurementBatch(cell_indices=[0, 1], values=[0.5], variances=[0.1, 0.1])
    with pytest.raises(ValueError):
        MeasurementBatch(cell_indices=[0], values=[0.5], variances=[0.0])


# ---------------------------------------------------------------- trace_over


def test_trace_over_empty_is_zero(default_gp):
    belief = init_prior(3, 3, 2.5, default_gp)
    assert trace_over(belief, np.array([], dtype=int)) == 0.0


def test_trace_over_fresh_prior_full_map(default_gp):
    belief = init_prior(4, 5, 2.5, default_gp)
    assert trace_over(belief, np.arange(20)) == pytest.approx(1.82 * 20)


def test_trace_over_matches_loop(rng):
    belief = _random_posterior(77)
    subset = rng.choice(belief.n_cells, size=7, replace=False)
    want = sum(belief.cov[i, i] for i in subset)
    assert trace_over(belief, subset) == pytest.approx(want, abs=1e-12)


def test_trace_over_rejects_out_of_range(default_gp):
    belief = init_prior(2, 2, 2.5, default_gp)
    with pytest.raises(IndexError):
        trace_over(belief, np.array([4]))


# ---------------------------------------------------------------- expected_trace_reduction


def test_expected_trace_reduction_matches_actual_update():
    belief = _random_posterior(13)
    rng = np.random.default_rng(99)
    cells = rng.choice(belief.n_cells, size=5, replace=False)
    var = rng.uniform(0.05, 0.3, 5)
    batch = MeasurementBatch(cells, belief.mu[cells], var)
    roi = rng.choice(belief.n_cells, size=9, replace=False)
    predicted = expected_trace_reduction(belief, batch, roi)
    post = kalman_update(belief, batch)
    actual = trace_over(belief, roi) - trace_over(post, roi)
    assert predicted == pytest.approx(actual, rel=1e-6, abs=1e-9)


# ---------------------------------------------------------------- serialization


def test_belief_serialization_roundtrip(default_gp):
    belief = _random_posterior(55)
    text, blob = save_belief(belief, 4, 4, 2.5)
    cov = load_covariance(blob)
    assert np.allclose(cov, belief.cov, atol=1e-15)
    assert text.splitlines()[0] == "4 4 2.5"
