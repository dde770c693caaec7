"""Online sequential monitor.

The monitor consumes one downsampled sample at a time, aligned so that the
first sample is step 1 of an episode. After a warm-up of h_max episodes it
runs the full battery of (statistic, horizon) individual tests at every
test-point and fires as soon as any p-value drops below the tuned threshold.
Detection is one-shot: further samples raise until :meth:`Monitor.reset`.

A horizon-h test at global step t = k*T + tau evaluates the window of the
last h*T + tau samples (h whole past episodes plus the current partial one),
so detections can happen in the middle of an episode. The ring buffer
therefore never holds more than h_max + 1 episodes of samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bfar import TunedMonitor
from .errors import InvalidDataError, TerminalStateError
from .stats import SignalWindow, StatisticKind, statistic_value


@dataclass(frozen=True)
class TestEvaluation:
    """One individual test's result at a test-point."""

    statistic: StatisticKind
    horizon: int
    p: float


@dataclass(frozen=True)
class DetectionRecord:
    """Where and why the monitor fired.

    ``t`` counts downsampled steps from the start of the stream; ``raw_t`` is
    the same instant in raw (pre-downsampling) steps.
    """

    t: int
    raw_t: int
    episode: int
    offset: int
    horizon: int
    statistic: StatisticKind
    p: float


@dataclass(frozen=True)
class BlockReport:
    """Outcome of feeding one block of samples: the detection (if any) and
    the per-test-point p-value trace, ready for cumulative-detection plots."""

    detection: DetectionRecord | None
    trace: tuple[tuple[int, tuple[TestEvaluation, ...]], ...]


class Monitor:
    """Streaming sequential degradation test driven by a tuned bundle."""

    def __init__(self, tuned: TunedMonitor):
        self.tuned = tuned
        self.params = tuned.params
        self.plan = tuned.plan
        tuned.store.freeze()  # live monitoring never fills the store lazily
        T = self.params.T
        self.plan.test_offsets(T)  # validates test_every | T
        self._completed = np.zeros((self.plan.h_max, T))
        self._num_completed = 0
        self._partial = np.empty(T)
        self._partial_len = 0
        # Cumulative full-episode weighted sums, one entry appended per
        # completed episode. They keep the weighted-mean statistic O(1) per
        # test-point for the whole-episode part (the tau-block tail
        # correction is recomputed per test-point and costs O(tau)).
        self._udt_cum = [0.0]
        self._wants_udt = any(k.name == "udt" for k in self.plan.statistics)
        self.t = 0
        self.fired: DetectionRecord | None = None
        self.last_evaluations: tuple[TestEvaluation, ...] = ()
        self.last_test_point = 0

    @property
    def warmup_steps(self) -> int:
        return self.plan.h_max * self.params.T

    def reset(self) -> None:
        """Re-arm after a detection; a fresh warm-up is required."""
        self._completed.fill(0.0)
        self._num_completed = 0
        self._partial_len = 0
        self._udt_cum = [0.0]
        self.t = 0
        self.fired = None
        self.last_evaluations = ()
        self.last_test_point = 0

    def step(self, sample: float) -> DetectionRecord | None:
        """Ingest one downsampled sample; return a record if the monitor fires."""
        if self.fired is not None:
            raise TerminalStateError("monitor already fired; reset() to re-arm")
        if np.ndim(sample) != 0:
            raise InvalidDataError("samples must be scalars")
        sample = float(sample)
        if not math.isfinite(sample):
            raise InvalidDataError(f"non-finite sample at step {self.t + 1}")

        T = self.params.T
        self.t += 1
        self._partial[self._partial_len] = sample
        self._partial_len += 1

        record = None
        if self.t > self.warmup_steps and self.t % self.plan.test_every == 0:
            record = self._evaluate_test_point()
            self.last_test_point = self.t
        # Roll the completed-episode buffer after evaluating, so a test at an
        # episode boundary still sees the just-finished episode as the tail.
        if self._partial_len == T:
            self._completed[:-1] = self._completed[1:]
            self._completed[-1] = self._partial
            self._num_completed = min(self._num_completed + 1, self.plan.h_max)
            if self._wants_udt:
                piece = float(self.params.full_weights @ self._partial)
                self._udt_cum.append(self._udt_cum[-1] + piece)
            self._partial_len = 0
        if record is not None:
            self.fired = record
        return record

    def _evaluate_test_point(self) -> DetectionRecord | None:
        T = self.params.T
        tau = self._partial_len
        if self._wants_udt:
            udt_tail = float(
                self.params.tail_weights(tau) @ self._partial[:tau]
            )
        evaluations = []
        best = None
        for h in self.plan.horizons:
            n = h * T + tau
            window = None
            for kind in self.plan.statistics:
                dist = self.tuned.store.values_for(kind, n)
                if kind.name == "udt":
                    # O(1) whole-episode part from the cumulative pieces plus
                    # the O(tau) tail correction computed above.
                    y = self._udt_cum[-1] - self._udt_cum[-1 - h] + udt_tail
                else:
                    if window is None:
                        window = SignalWindow(
                            self._window_values(h, tau), self.params
                        )
                    y = statistic_value(kind, window, self.tuned.store)
                count = int(np.searchsorted(dist, y, side="right"))
                p = (1 + count) / (1 + dist.size)
                evaluations.append(TestEvaluation(kind, h, p))
                if best is None or p < best.p:
                    best = evaluations[-1]
        self.last_evaluations = tuple(evaluations)
        if best is not None and best.p < self.tuned.p_threshold:
            k = (self.t - tau) // T
            return DetectionRecord(
                t=self.t,
                raw_t=self.t * self.params.downsample_factor,
                episode=k,
                offset=tau,
                horizon=best.horizon,
                statistic=best.statistic,
                p=best.p,
            )
        return None

    def _window_values(self, horizon: int, tau: int) -> np.ndarray:
        past = self._completed[self.plan.h_max - horizon :]
        return np.concatenate([past.ravel(), self._partial[:tau]])

    def run_block(self, samples: np.ndarray) -> BlockReport:
        """Feed samples in order, collecting the test-point p-value trace.

        Stops at the first detection (the monitor is one-shot).
        """
        trace: list[tuple[int, tuple[TestEvaluation, ...]]] = []
        detection = None
        for sample in np.asarray(samples, dtype=float):
            record = self.step(float(sample))
            if self.last_test_point == self.t:
                trace.append((self.t, self.last_evaluations))
            if record is not None:
                detection = record
                break
        return BlockReport(detection=detection, trace=tuple(trace))
