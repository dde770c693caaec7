"""BFAR: bootstrap calibration of the sequential test's p-value threshold.

A sequential monitor runs a battery of individual tests (one per statistic
and lookback horizon) at every test-point and fires when any p-value drops
below a single threshold. To make the family-wise false-alarm rate equal
alpha0 per h_tilde episodes, whole sequential runs are simulated under the
null model: each outer repetition resamples h_max + h_tilde episodes from the
reference data, replays every test-point of the h_tilde-episode stretch after
the warm-up prefix, and records the minimal p-value seen. The alpha0-quantile
of those minima is the threshold.

Cost is O(B_outer * F * h_tilde * T_stat): the inner bootstrap distributions
are shared across outer repetitions through one :class:`BootstrapStore`, so
they are built once per (statistic, window length).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .episodic import (
    EpisodeParams,
    ReferenceDataset,
    params_from_dict,
    params_to_dict,
)
from .errors import ResolutionError
from .individual import BootstrapStore, empirical_quantile_index
from .rng import substream
from .stats import BatchEvaluator, StatisticKind, parse_statistic

BUNDLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class MonitorPlan:
    """Everything needed to tune and run a sequential monitor.

    ``test_every`` is the spacing of test-points in (downsampled) steps; the
    test frequency per episode is F = T / test_every and test-points fall at
    within-episode offsets {test_every, 2*test_every, ..., T}. A horizon-h
    test at offset tau spans h whole past episodes plus the tau-step partial
    one, so the full set of window lengths the monitor will ever request is
    {h*T + j*test_every : h in horizons, j in 1..F} -- precomputed at tuning
    time so the monitor is wait-free.
    """

    statistics: tuple[StatisticKind, ...]
    horizons: tuple[int, ...]
    h_tilde: int
    alpha0: float
    B_inner: int
    B_outer: int
    seed: int
    test_every: int = 1

    def __post_init__(self):
        stats = tuple(self.statistics)
        horizons = tuple(int(h) for h in self.horizons)
        object.__setattr__(self, "statistics", stats)
        object.__setattr__(self, "horizons", horizons)
        if not stats:
            raise ValueError("plan requires at least one statistic")
        if not horizons or any(h < 1 for h in horizons):
            raise ValueError("horizons must be positive integers")
        if list(horizons) != sorted(set(horizons)):
            raise ValueError("horizons must be strictly increasing")
        if not 0.0 < self.alpha0 < 1.0:
            raise ValueError(f"alpha0 must be in (0, 1), got {self.alpha0}")
        if self.h_tilde < 1 or self.B_inner < 1 or self.B_outer < 1:
            raise ValueError("h_tilde, B_inner and B_outer must be positive")
        if self.alpha0 * self.B_outer < 1.0 - 1e-9:
            raise ValueError("alpha0 * B_outer must be at least 1")
        if self.test_every < 1:
            raise ValueError("test_every must be positive")

    @property
    def h_max(self) -> int:
        return self.horizons[-1]

    def test_offsets(self, T: int) -> range:
        """Within-episode offsets of test-points: every ``test_every`` steps."""
        if T % self.test_every != 0:
            raise ValueError(
                f"test_every={self.test_every} does not divide T={T}"
            )
        return range(self.test_every, T + 1, self.test_every)

    def window_lengths(self, T: int) -> list[int]:
        lengths = {
            h * T + tau for h in self.horizons for tau in self.test_offsets(T)
        }
        return sorted(lengths)

    def to_dict(self) -> dict:
        return {
            "statistics": [s.spec for s in self.statistics],
            "horizons": list(self.horizons),
            "h_tilde": self.h_tilde,
            "alpha0": self.alpha0,
            "B_inner": self.B_inner,
            "B_outer": self.B_outer,
            "seed": self.seed,
            "test_every": self.test_every,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MonitorPlan":
        return cls(
            statistics=tuple(parse_statistic(s) for s in data["statistics"]),
            horizons=tuple(int(h) for h in data["horizons"]),
            h_tilde=int(data["h_tilde"]),
            alpha0=float(data["alpha0"]),
            B_inner=int(data["B_inner"]),
            B_outer=int(data["B_outer"]),
            seed=int(data["seed"]),
            test_every=int(data.get("test_every", 1)),
        )


@dataclass(frozen=True)
class TunedMonitor:
    """A calibrated monitor: plan, threshold, shared store, and the
    min-p-value distribution the threshold was cut from (diagnostic)."""

    plan: MonitorPlan
    p_threshold: float
    store: BootstrapStore
    min_p_distribution: np.ndarray

    @property
    def params(self) -> EpisodeParams:
        return self.store.params

    def with_threshold(self, p_threshold: float) -> "TunedMonitor":
        """Copy with a hand-set threshold (for diagnostics/verification)."""
        return replace(self, p_threshold=float(p_threshold))


def h0_stream_indices(plan: MonitorPlan, num_episodes: int, b: int) -> np.ndarray:
    """Episode-row indices of outer repetition b's simulated stream."""
    rng = substream(plan.seed, "bfar", b)
    return rng.integers(0, num_episodes, size=plan.h_max + plan.h_tilde)


def bfar_min_p(
    ref: ReferenceDataset,
    params: EpisodeParams,
    plan: MonitorPlan,
    store: BootstrapStore,
) -> np.ndarray:
    """Minimal p-value of each simulated sequential run (unsorted, by rep).

    Repetition b resamples h_max + h_tilde whole episodes, then replays every
    (test-point, horizon, statistic) combination over the h_tilde episodes
    after the warm-up prefix. Early test-points of long horizons look back
    into the warm-up region, which is exactly what it exists for.
    """
    T = params.T
    evaluator = BatchEvaluator(ref.episodes, params)
    B_out = plan.B_outer
    streams = np.empty((B_out, plan.h_max + plan.h_tilde), dtype=np.intp)
    for b in range(B_out):
        streams[b] = h0_stream_indices(plan, ref.num_episodes, b)

    # Window at test-episode k, offset tau, horizon h = episodes
    # [h_max+k-h, h_max+k) whole + episode h_max+k cropped to tau.
    windows = np.lib.stride_tricks.sliding_window_view(
        streams, plan.h_max + 1, axis=1
    )
    min_p = np.ones(B_out)
    for h in plan.horizons:
        whole = windows[:, : plan.h_tilde, plan.h_max - h : plan.h_max]
        whole_idx = whole.reshape(-1, h)
        tail_idx = streams[:, plan.h_max :].reshape(-1)
        for tau in plan.test_offsets(T):
            n = h * T + tau
            for kind in plan.statistics:
                dist = store.values_for(kind, n)
                vals = evaluator.values(kind, whole_idx, tail_idx, tau, store)
                counts = np.searchsorted(dist, vals, side="right")
                p = (1.0 + counts) / (1.0 + dist.size)
                np.minimum(min_p, p.reshape(B_out, plan.h_tilde).min(axis=1), out=min_p)
    return min_p


def bfar_tune(
    ref: ReferenceDataset, params: EpisodeParams, plan: MonitorPlan
) -> TunedMonitor:
    """Calibrate the per-test p-value threshold for family-wise FAR alpha0.

    Raises :class:`ResolutionError` when the threshold lands on the inner
    bootstrap's resolution floor 1/(B_inner+1): such a monitor could never
    reject, so either increase B or reduce significance requirements.
    """
    T = params.T
    if ref.episode_length != T:
        raise ValueError(
            f"reference episode length {ref.episode_length} != params T {T}"
        )
    lengths = plan.window_lengths(T)
    store = BootstrapStore(params, plan.B_inner, plan.seed, reference=ref)
    store.ensure(plan.statistics, lengths)

    min_p = bfar_min_p(ref, params, plan, store)
    distribution = np.sort(min_p)
    distribution.setflags(write=False)
    threshold = float(
        distribution[empirical_quantile_index(plan.alpha0, plan.B_outer) - 1]
    )
    floor = 1.0 / (plan.B_inner + 1)
    if threshold <= floor:
        raise ResolutionError(
            f"tuned p-value threshold {threshold:.3g} hit the bootstrap "
            f"resolution floor 1/(B_inner+1) = {floor:.3g}; the monitor could "
            "never reject. Either increase B or reduce significance "
            "requirements."
        )
    store.freeze()
    return TunedMonitor(
        plan=plan,
        p_threshold=threshold,
        store=store,
        min_p_distribution=distribution,
    )


def far_verify(tuned: TunedMonitor, h0_generator, runs: int) -> float:
    """Empirical false-alarm rate of the tuned sequential monitor.

    ``h0_generator(i)`` must return the i-th independent null stream of
    (h_max + h_tilde) * T downsampled samples; the fraction of runs in which
    the monitor fires within the h_tilde post-warm-up episodes is returned.
    """
    from .sequential import Monitor

    if runs < 1:
        raise ValueError("runs must be positive")
    fired = 0
    for i in range(runs):
        monitor = Monitor(tuned)
        for sample in np.asarray(h0_generator(i), dtype=float):
            if monitor.step(float(sample)) is not None:
                fired += 1
                break
    return fired / runs


# ---------------------------------------------------------------------------
# Bundle file format
# ---------------------------------------------------------------------------


def bundle_to_dict(tuned: TunedMonitor, store_file: str) -> dict:
    return {
        "format_version": BUNDLE_FORMAT_VERSION,
        "params": params_to_dict(tuned.params),
        "plan": tuned.plan.to_dict(),
        "p_threshold": tuned.p_threshold,
        "min_p_distribution": tuned.min_p_distribution.tolist(),
        "store_file": store_file,
    }


def load_bundle(path) -> TunedMonitor:
    """Load a tuned monitor; the store file is resolved relative to the bundle."""
    import os

    with open(path) as fh:
        data = json.load(fh)
    params = params_from_dict(data["params"])
    plan = MonitorPlan.from_dict(data["plan"])
    store_path = os.path.join(os.path.dirname(os.fspath(path)), data["store_file"])
    store = BootstrapStore.load(store_path, params)
    distribution = np.asarray(data["min_p_distribution"], dtype=float)
    distribution.setflags(write=False)
    return TunedMonitor(
        plan=plan,
        p_threshold=float(data["p_threshold"]),
        store=store,
        min_p_distribution=distribution,
    )
