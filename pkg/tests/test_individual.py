"""Bootstrap distribution and threshold-test behavior."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import epimon as em
from epimon.errors import NotTunedError

from conftest import make_params, make_reference

MEAN = em.StatisticKind.mean()
UDT = em.StatisticKind.udt()


def test_degenerate_single_episode_reference():
    params = make_params(T=3, seed=1)
    ref = em.ReferenceDataset(params.mu0[None, :] + 1.0)
    dist = em.bootstrap_distribution(ref, params, MEAN, n=5, B=4, seed=0)
    assert np.all(dist == dist[0])  # only one possible window


def test_bootstrap_deterministic():
    params = make_params(T=4, seed=2)
    ref = make_reference(params, 30, seed=5)
    a = em.bootstrap_distribution(ref, params, UDT, n=10, B=64, seed=9)
    b = em.bootstrap_distribution(ref, params, UDT, n=10, B=64, seed=9)
    assert np.array_equal(a, b)
    c = em.bootstrap_distribution(ref, params, UDT, n=10, B=64, seed=10)
    assert not np.array_equal(a, c)


def test_bootstrap_resampling_identity_for_mean():
    # With n = T each window is a single resampled episode, so the bootstrap
    # mean converges to the mean of per-episode means.
    params = make_params(T=5, seed=3)
    ref = make_reference(params, 80, seed=6)
    B = 10000
    dist = em.bootstrap_distribution(ref, params, MEAN, n=params.T, B=B, seed=1)
    episode_means = ref.episodes.mean(axis=1)
    se = episode_means.std(ddof=1) / np.sqrt(B)
    assert abs(dist.mean() - episode_means.mean()) <= 3 * se


def test_bootstrap_is_sorted_and_finite():
    params = make_params(T=4, seed=4)
    ref = make_reference(params, 20, seed=7)
    dist = em.bootstrap_distribution(ref, params, MEAN, n=9, B=100, seed=2)
    assert dist.size == 100
    assert np.all(np.isfinite(dist))
    assert np.all(np.diff(dist) >= 0)


def test_pvalue_floor_and_ceiling():
    params = make_params(T=3, seed=5)
    ref = make_reference(params, 40, seed=8)
    store = em.BootstrapStore(params, B=200, seed=3, reference=ref)
    low = em.SignalWindow(params.mu0 - 100 * params.step_std, params)
    reject, p = em.individual_test(low, MEAN, store, alpha=0.05)
    assert p == pytest.approx(1 / 201)
    assert reject
    high = em.SignalWindow(params.mu0 + 100 * params.step_std, params)
    reject, p = em.individual_test(high, MEAN, store, alpha=0.05)
    assert p == 1.0
    assert not reject


def test_individual_calibration_under_h0():
    # 5000 fresh null windows at alpha = 0.05 must reject at a rate in
    # [0.04, 0.06].
    params = make_params(T=6, seed=6, condition=20)
    ref = make_reference(params, 2000, seed=9)
    store = em.BootstrapStore(params, B=2000, seed=4, reference=ref)
    trials = 5000
    K = 2
    fresh = em.generate_episodes(
        em.Scenario(params=params, kind="h0", seed=123), trials * K
    ).reshape(trials, K * params.T)
    rejected = 0
    for row in fresh:
        reject, _ = em.individual_test(
            em.SignalWindow(row, params), MEAN, store, alpha=0.05
        )
        rejected += reject
    assert 0.04 <= rejected / trials <= 0.06


def test_alpha_validation():
    params = make_params(T=3, seed=7)
    ref = make_reference(params, 20, seed=10)
    store = em.BootstrapStore(params, B=50, seed=5, reference=ref)
    w = em.SignalWindow(np.zeros(3), params)
    for alpha in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            em.individual_test(w, MEAN, store, alpha=alpha)


def test_reject_monotone_in_alpha_and_rank():
    rng = np.random.default_rng(11)
    dist = np.sort(rng.standard_normal(500))
    ys = rng.standard_normal(50)
    for y in ys:
        r1, p1 = em.threshold_decision(dist, y, 0.02)
        r2, p2 = em.threshold_decision(dist, y, 0.10)
        assert p1 == p2  # p does not depend on alpha
        assert (not r1) or r2  # reject at alpha1 implies reject at alpha2 >= alpha1
    order = np.argsort(ys)
    ps = [em.threshold_decision(dist, y, 0.05)[1] for y in ys]
    assert np.all(np.diff(np.asarray(ps)[order]) >= 0)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.01, 0.5),
    st.integers(10, 400),
    st.floats(-3, 3),
)
def test_quantile_pvalue_coherence(alpha, B, y):
    # The quantile rule is authoritative; it must agree with the p-value rule
    # "p < alpha*" where alpha* is alpha rounded to the store's resolution.
    rng = np.random.default_rng(B)
    dist = np.sort(rng.standard_normal(B))
    reject, p = em.threshold_decision(dist, y, alpha)
    idx = em.empirical_quantile_index(alpha, B)
    alpha_star = (idx + 0.5) / (B + 1)
    assert reject == (p < alpha_star)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.001, 1.0), st.floats(-5, 5), st.floats(0.01, 0.4))
def test_affine_invariance(scale, shift, alpha):
    # Rescaling a statistic by a*s + b (a > 0) on both the observation and
    # the bootstrap leaves the decision and the p-value unchanged.
    rng = np.random.default_rng(17)
    dist = np.sort(rng.standard_normal(300))
    y = rng.standard_normal()
    base = em.threshold_decision(dist, y, alpha)
    scaled = em.threshold_decision(
        np.sort(scale * dist + shift), scale * y + shift, alpha
    )
    assert base == scaled


def test_quantile_index_float_artifacts():
    assert em.empirical_quantile_index(0.05, 2000) == 100
    assert em.empirical_quantile_index(0.05, 1000) == 50
    assert em.empirical_quantile_index(0.001, 100) == 1  # max(1, ...)
    assert em.empirical_quantile_index(0.999, 10) == 10


def test_store_roundtrip(tmp_path):
    params = make_params(T=4, seed=8)
    ref = make_reference(params, 25, seed=11)
    store = em.BootstrapStore(params, B=120, seed=6, reference=ref)
    store.values_for(MEAN, 6)
    store.values_for(em.MIXED_MEAN_PDT_PRESET, 6)
    path = tmp_path / "store.json"
    store.save(path)
    loaded = em.BootstrapStore.load(path, params)
    assert loaded.B == store.B and loaded.seed == store.seed
    for key, vals in store.entries.items():
        assert np.array_equal(loaded.entries[key], vals)  # exact float roundtrip
    # a loaded store has no reference: lazy fill must be refused
    with pytest.raises(NotTunedError):
        loaded.values_for(MEAN, 7)


def test_frozen_store_refuses_lazy_fill():
    params = make_params(T=3, seed=9)
    ref = make_reference(params, 20, seed=12)
    store = em.BootstrapStore(params, B=40, seed=7, reference=ref)
    store.values_for(MEAN, 3)
    store.freeze()
    with pytest.raises(NotTunedError):
        store.values_for(MEAN, 4)


def test_mixed_store_builds_components_first():
    params = make_params(T=3, seed=10)
    ref = make_reference(params, 20, seed=13)
    store = em.BootstrapStore(params, B=60, seed=8, reference=ref)
    store.values_for(em.MIXED_MEAN_PDT_PRESET, 5)
    assert ("mean", 5) in store.entries
    assert ("pdt:0.9", 5) in store.entries
    mixed = store.entries[(em.MIXED_MEAN_PDT_PRESET.spec, 5)]
    assert np.all((mixed >= 1 / 61) & (mixed <= 1.0))
