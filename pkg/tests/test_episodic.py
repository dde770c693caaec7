"""Model-layer tests: index decomposition, estimation, weights, downsampling."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

import epimon as em
from epimon.errors import InsufficientDataError, InvalidDataError

from conftest import make_params, make_reference


# ---------------------------------------------------------------------------
# decompose_index
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "t,T,k,tau",
    [
        (5, 3, 1, 2),
        (3, 3, 0, 3),  # boundary step belongs to the finished episode
        (1, 1, 0, 1),
        (40, 40, 0, 40),
        (41, 40, 1, 1),
    ],
)
def test_decompose_examples(t, T, k, tau):
    dec = em.decompose_index(t, T)
    assert (dec.k, dec.tau) == (k, tau)


@given(st.integers(1, 10**6), st.integers(1, 500))
def test_decompose_roundtrip(t, T):
    dec = em.decompose_index(t, T)
    assert dec.t == dec.k * dec.T + dec.tau
    assert 1 <= dec.tau <= T
    assert (dec.tau == T) == (t % T == 0)


@pytest.mark.parametrize("t,T", [(0, 3), (-1, 3), (3, 0), (3, -2)])
def test_decompose_rejects_nonpositive(t, T):
    with pytest.raises(ValueError):
        em.decompose_index(t, T)


# ---------------------------------------------------------------------------
# downsample
# ---------------------------------------------------------------------------


def test_downsample_block_means():
    assert em.downsample([1, 3, 5, 7], 2).tolist() == [2, 6]


def test_downsample_identity():
    x = np.arange(9.0)
    assert em.downsample(x, 1).tolist() == x.tolist()


def test_downsample_arithmetic_series():
    out = em.downsample(np.arange(1.0, 1001.0), 25)
    assert out.size == 40
    assert out[0] == 13.0  # mean of 1..25


def test_downsample_rejects_nondivisor():
    with pytest.raises(ValueError):
        em.downsample([1, 2, 3], 2)


# ---------------------------------------------------------------------------
# estimate_params
# ---------------------------------------------------------------------------


def test_estimate_two_episode_toy():
    # Hand-computable 2x2: rank-deficient sample covariance triggers the ridge.
    ref = em.ReferenceDataset(np.array([[0.0, 0.0], [2.0, 2.0]]))
    params = em.estimate_params(ref)
    assert params.mu0.tolist() == [1.0, 1.0]
    assert params.regularized and params.ridge > 0
    expected = np.array([[2.0, 2.0], [2.0, 2.0]]) + params.ridge * np.eye(2)
    np.testing.assert_allclose(params.sigma0, expected, rtol=1e-12)


def test_estimate_single_episode_error():
    with pytest.raises(InsufficientDataError):
        em.estimate_params(em.ReferenceDataset(np.ones((1, 4))))


def test_estimate_rejects_nonfinite():
    with pytest.raises(InvalidDataError):
        em.ReferenceDataset(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_estimate_monte_carlo_recovers_truth():
    # N=10000 draws from a known model: estimates within 5 estimator-sigmas,
    # where the mean estimator has sd sqrt(S_jj/N) and the covariance
    # estimator has variance (S_ii S_jj + S_ij^2)/(N-1).
    params = make_params(T=5, seed=1, condition=20)
    N = 10000
    ref = make_reference(params, N, seed=42)
    est = em.estimate_params(ref)
    mu_sd = np.sqrt(np.diag(params.sigma0) / N)
    assert np.all(np.abs(est.mu0 - params.mu0) <= 5 * mu_sd)
    S = params.sigma0
    cov_sd = np.sqrt((np.outer(np.diag(S), np.diag(S)) + S**2) / (N - 1))
    assert np.all(np.abs(est.sigma0 - S) <= 5 * cov_sd)


def test_estimate_permutation_invariant():
    params = make_params(T=4, seed=2)
    ref = make_reference(params, 50, seed=9)
    perm = np.random.default_rng(0).permutation(50)
    a = em.estimate_params(ref)
    b = em.estimate_params(em.ReferenceDataset(ref.episodes[perm]))
    np.testing.assert_allclose(a.mu0, b.mu0, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.sigma0, b.sigma0, rtol=1e-10, atol=1e-12)


def test_estimate_shift_property_bitwise():
    # Dyadic data make x + c exact, so the column means shift by exactly c,
    # the deviations are bit-identical, and sigma0 is bit-identical too.
    rng = np.random.default_rng(5)
    X = rng.integers(0, 256, size=(64, 4)).astype(float) / 16.0
    c = 32.0
    a = em.estimate_params(em.ReferenceDataset(X))
    b = em.estimate_params(em.ReferenceDataset(X + c))
    assert np.array_equal(b.mu0, a.mu0 + c)
    assert np.array_equal(b.sigma0, a.sigma0)


# ---------------------------------------------------------------------------
# EpisodeParams invariants
# ---------------------------------------------------------------------------


def test_params_rejects_asymmetric():
    bad = np.array([[1.0, 0.5], [0.2, 1.0]])
    with pytest.raises(InvalidDataError):
        em.EpisodeParams(np.zeros(2), bad)


def test_params_rejects_indefinite():
    with pytest.raises(InvalidDataError):
        em.EpisodeParams(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_params_inverse_identity_bound(small_params):
    T = small_params.T
    resid = np.abs(small_params.sigma0 @ small_params.sigma0_inv - np.eye(T)).max()
    assert resid <= 1e-6
    for tau in range(1, T + 1):
        block = small_params.sigma0[:tau, :tau]
        resid = np.abs(block @ small_params.tail_inverse(tau) - np.eye(tau)).max()
        assert resid <= 1e-6


def test_params_immutable(small_params):
    with pytest.raises(ValueError):
        small_params.mu0[0] = 99.0


# ---------------------------------------------------------------------------
# window_weights
# ---------------------------------------------------------------------------


def test_weights_identity_covariance():
    params = em.EpisodeParams(np.zeros(3), np.eye(3))
    assert em.window_weights(params, 7).tolist() == [1.0] * 7


def test_weights_diagonal_by_hand():
    params = em.EpisodeParams(np.zeros(2), np.diag([1.0, 4.0]))
    np.testing.assert_allclose(
        em.window_weights(params, 4), [1.0, 0.25, 1.0, 0.25]
    )


def test_weights_single_episode_equals_full(small_params):
    np.testing.assert_array_equal(
        em.window_weights(small_params, small_params.T), small_params.full_weights
    )


@pytest.mark.parametrize("n_factor", [0.5, 1.0, 1.5, 2.0, 3.0])
def test_weights_match_explicit_block_matrix(n_factor):
    # Independent oracle: build the full block-diagonal window covariance
    # explicitly and invert it; the blockwise weights must agree to 1e-8.
    params = make_params(T=6, seed=11, condition=100)
    T = params.T
    n = max(1, int(round(n_factor * T)))
    dec = em.decompose_index(n, T)
    full = np.zeros((n, n))
    for k in range(dec.k):
        full[k * T : (k + 1) * T, k * T : (k + 1) * T] = params.sigma0
    full[dec.k * T :, dec.k * T :] = params.sigma0[: dec.tau, : dec.tau]
    oracle = np.linalg.solve(full, np.ones(n))
    np.testing.assert_allclose(em.window_weights(params, n), oracle, atol=1e-8)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def test_params_json_roundtrip(tmp_path, small_params):
    path = tmp_path / "params.json"
    import json

    path.write_text(json.dumps(em.params_to_dict(small_params)))
    loaded = em.load_params_json(path)
    np.testing.assert_array_equal(loaded.mu0, small_params.mu0)
    np.testing.assert_array_equal(loaded.sigma0, small_params.sigma0)
    assert loaded.downsample_factor == small_params.downsample_factor


def test_reference_csv_reader(tmp_path):
    path = tmp_path / "ref.csv"
    path.write_text("h1,h2\n1.0,2.0\n3.0,4.0\n")
    ref = em.load_reference_csv(path, skip_header=True)
    assert ref.episodes.tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_reference_csv_reports_line_numbers(tmp_path):
    path = tmp_path / "ref.csv"
    path.write_text("1.0,2.0\n3.0,oops\n")
    with pytest.raises(InvalidDataError, match="line 2"):
        em.load_reference_csv(path)
    path.write_text("1.0,2.0\n3.0\n")
    with pytest.raises(InvalidDataError, match="line 2"):
        em.load_reference_csv(path)
