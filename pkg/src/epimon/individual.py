"""Individual degradation test: bootstrap null distributions and the
threshold decision.

The null distribution of a statistic at window length n is estimated by
resampling: each repetition assembles a synthetic window of K whole episodes
drawn uniformly with replacement from the reference dataset plus one episode
cropped to its first tau0 samples, evaluates the statistic, and the sorted
values form the distribution. The test then compares the observed value y:

* p-value  p = (1 + #{b : S_b <= y}) / (1 + B), so p in [1/(B+1), 1];
* reject   y < kappa_alpha, with kappa_alpha the empirical alpha-quantile.

The quantile convention is the lower order statistic at 1-based index
max(1, ceil(alpha*B)), which keeps the realized false-alarm rate conservative.
The quantile rule is authoritative for `reject`; on ties it can disagree with
"p < alpha" by one rank (ties never reject).

Resample indices for repetition b derive from the (seed, b) substream --
independent of the statistic kind and window length -- so every statistic
sees the same synthetic windows and windows of different lengths are nested
within a repetition. This makes the whole decision invariant to monotone
reparameterizations of a statistic, makes statistics that differ by a
constant produce identical decisions, and couples the stored distributions
across lengths the same way a live monitor's growing windows are coupled.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .episodic import EpisodeParams, ReferenceDataset, decompose_index
from .errors import NotTunedError
from .rng import substream
from .stats import (
    BatchEvaluator,
    SignalWindow,
    StatisticKind,
    parse_statistic,
    statistic_value,
)

STORE_FORMAT_VERSION = 1


def empirical_quantile_index(alpha: float, B: int) -> int:
    """1-based index of the empirical alpha-quantile: max(1, ceil(alpha*B)).

    ceil is evaluated with a small slack so binary-float artifacts such as
    0.05*2000 = 100.00000000000001 do not shift the rank.
    """
    return max(1, min(B, int(math.ceil(alpha * B - 1e-9))))


def threshold_decision(
    sorted_values: np.ndarray, y: float, alpha: float
) -> tuple[bool, float]:
    """Decision and p-value of a threshold test given the sorted null values."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    B = sorted_values.size
    count = int(np.searchsorted(sorted_values, y, side="right"))
    p = (1 + count) / (1 + B)
    kappa = sorted_values[empirical_quantile_index(alpha, B) - 1]
    return bool(y < kappa), float(p)


def resample_indices(
    num_episodes: int, n: int, T: int, B: int, seed: int
) -> np.ndarray:
    """(B, K+1) episode-row indices for the synthetic windows of length n.

    Column layout: K whole episodes then the tail episode (cropped to tau0 by
    the caller). Repetition b draws the leading K+1 values of the
    (seed, "boot", b) substream, so windows of different lengths within the
    same repetition are nested -- shorter windows are prefixes of longer ones,
    the same way a monitor's windows grow along one stream. This couples the
    extreme tails of the stored distributions across window lengths, which
    keeps the family-wise probability of hitting the 1/(B+1) p-value floor
    governed by the number of horizons rather than the number of distinct
    lengths.
    """
    dec = decompose_index(n, T)
    idx = np.empty((B, dec.k + 1), dtype=np.intp)
    for b in range(B):
        rng = substream(seed, "boot", b)
        idx[b] = rng.integers(0, num_episodes, size=dec.k + 1)
    return idx


def bootstrap_distribution(
    ref: ReferenceDataset,
    params: EpisodeParams,
    kind: StatisticKind,
    n: int,
    B: int,
    seed: int,
    evaluator: BatchEvaluator | None = None,
    store: "BootstrapStore | None" = None,
) -> np.ndarray:
    """Sorted bootstrap distribution of ``kind`` at window length ``n``.

    Mixed statistics are evaluated against ``store`` (component distributions
    at the same length, built on demand).
    """
    if B < 1 or n < 1:
        raise ValueError("B and n must be positive")
    if evaluator is None:
        evaluator = BatchEvaluator(ref.episodes, params)
    dec = decompose_index(n, params.T)
    idx = resample_indices(ref.num_episodes, n, params.T, B, seed)
    values = evaluator.values(kind, idx[:, : dec.k], idx[:, dec.k], dec.tau, store)
    values = np.sort(values)
    values.setflags(write=False)
    return values


class BootstrapStore:
    """Cached per-window-length bootstrap distributions of each statistic.

    Keys are (statistic spec, window length); each entry is a sorted vector of
    exactly B finite values, a deterministic function of (reference data, key,
    B, seed). A store built from a reference dataset fills entries lazily on
    demand (offline mode); :meth:`freeze` forbids further fills, which is the
    contract during live monitoring where every length must be precomputed.
    """

    def __init__(
        self,
        params: EpisodeParams,
        B: int,
        seed: int,
        reference: ReferenceDataset | None = None,
        entries: dict[tuple[str, int], np.ndarray] | None = None,
        frozen: bool = False,
    ):
        if B < 1:
            raise ValueError("B must be positive")
        self.params = params
        self.B = int(B)
        self.seed = int(seed)
        self.reference = reference
        self.entries: dict[tuple[str, int], np.ndarray] = dict(entries or {})
        self.frozen = bool(frozen)
        self._evaluator: BatchEvaluator | None = None

    def freeze(self) -> None:
        self.frozen = True

    def _get_evaluator(self) -> BatchEvaluator:
        if self._evaluator is None:
            self._evaluator = BatchEvaluator(self.reference.episodes, self.params)
        return self._evaluator

    def values_for(self, kind: StatisticKind, n: int) -> np.ndarray:
        """Sorted distribution for (kind, n), building it if allowed."""
        key = (kind.spec, int(n))
        entry = self.entries.get(key)
        if entry is not None:
            return entry
        if self.frozen or self.reference is None:
            raise NotTunedError(
                f"no bootstrap distribution for {key[0]!r} at length {n}"
            )
        for comp in kind.components:
            self.values_for(comp, n)
        entry = bootstrap_distribution(
            self.reference,
            self.params,
            kind,
            int(n),
            self.B,
            self.seed,
            evaluator=self._get_evaluator(),
            store=self,
        )
        self.entries[key] = entry
        return entry

    def ensure(self, kinds, lengths) -> None:
        """Precompute all (kind, length) entries (tuning phase 1)."""
        for kind in kinds:
            for comp in kind.components:
                for n in lengths:
                    self.values_for(comp, n)
            for n in lengths:
                self.values_for(kind, n)

    def to_dict(self) -> dict:
        entries = [
            {"kind": spec, "n": n, "values": vals.tolist()}
            for (spec, n), vals in sorted(self.entries.items())
        ]
        return {
            "format_version": STORE_FORMAT_VERSION,
            "B": self.B,
            "seed": self.seed,
            "entries": entries,
        }

    @classmethod
    def from_dict(
        cls,
        data: dict,
        params: EpisodeParams,
        reference: ReferenceDataset | None = None,
    ) -> "BootstrapStore":
        entries: dict[tuple[str, int], np.ndarray] = {}
        for item in data["entries"]:
            kind = parse_statistic(item["kind"])  # validates the spelling
            vals = np.asarray(item["values"], dtype=float)
            if vals.size != int(data["B"]) or not np.all(np.isfinite(vals)):
                raise ValueError(f"store entry {item['kind']!r} is corrupt")
            vals.setflags(write=False)
            entries[(kind.spec, int(item["n"]))] = vals
        return cls(
            params,
            int(data["B"]),
            int(data["seed"]),
            reference=reference,
            entries=entries,
            frozen=reference is None,
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path, params: EpisodeParams) -> "BootstrapStore":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), params)


def individual_test(
    window: SignalWindow,
    kind: StatisticKind,
    store: BootstrapStore,
    alpha: float,
) -> tuple[bool, float]:
    """Run one threshold test: returns (reject, p-value)."""
    dist = store.values_for(kind, window.n)
    y = statistic_value(kind, window, store)
    return threshold_decision(dist, y, alpha)
