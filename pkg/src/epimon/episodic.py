"""Episodic-signal data model.

An episodic signal is a scalar time-series whose consecutive length-T blocks
(episodes) are independent and identically distributed, while the samples
inside an episode may be arbitrarily correlated and non-stationary. Under the
null model the signal is fully described by the per-episode mean vector mu0
and covariance matrix sigma0, estimated from a reference dataset of recorded
episodes. The covariance of a longer stretch of signal is block-diagonal with
sigma0 blocks, the last block cropped when the stretch ends mid-episode, so
everything the tests need reduces to sigma0, its inverse, and the inverses of
its upper-left tau x tau blocks.

This module provides:

* ``decompose_index`` -- split a 1-based global step into (episode, offset).
* ``downsample`` -- replace each block of d raw samples by its mean.
* ``ReferenceDataset`` / ``estimate_params`` -- recorded episodes and the
  (mu0, sigma0) estimate with ridge regularization when the sample covariance
  is not positive definite.
* ``EpisodeParams`` -- the null model, with cached Cholesky factor, inverse,
  and lazily-built tau-block inverses.
* ``window_weights`` -- the covariance weights 1' Sigma^-1 of an n-step
  window, built blockwise without materializing the n x n matrix.
* CSV / JSON readers and writers for the two file formats this module owns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import InsufficientDataError, InvalidDataError

PARAMS_FORMAT_VERSION = 1

# Regularization ladder for ill-conditioned covariance estimates:
# lambda = RIDGE_FLOOR * trace/T, escalating x10 up to RIDGE_CAP * trace/T.
RIDGE_FLOOR = 1e-8
RIDGE_CAP = 1e-2

# Construction-time invariants of EpisodeParams.
SYMMETRY_RTOL = 1e-9
INVERSE_IDENTITY_TOL = 1e-6


@dataclass(frozen=True)
class IndexDecomposition:
    """1-based global step t split as t = k*T + tau with tau in [1, T]."""

    t: int
    T: int
    k: int
    tau: int


def decompose_index(t: int, T: int) -> IndexDecomposition:
    """Split global step ``t`` into completed episodes ``k`` and offset ``tau``.

    ``tau`` is the position within the current episode, taking the value T
    (not 0) at episode boundaries, so t = k*T + tau always holds with
    1 <= tau <= T.
    """
    t = int(t)
    T = int(T)
    if t < 1 or T < 1:
        raise ValueError(f"t and T must be positive, got t={t}, T={T}")
    k = (t - 1) // T
    tau = t - k * T
    return IndexDecomposition(t=t, T=T, k=k, tau=tau)


def downsample(values: np.ndarray, factor: int) -> np.ndarray:
    """Replace each consecutive block of ``factor`` samples by its mean."""
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"downsample factor must be positive, got {factor}")
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("downsample expects a 1-D sample vector")
    if values.size % factor != 0:
        raise ValueError(
            f"downsample factor {factor} does not divide length {values.size}"
        )
    if factor == 1:
        return values.copy()
    return values.reshape(-1, factor).mean(axis=1)


class EpisodeParams:
    """Null model of one episode: mean vector and positive-definite covariance.

    Instances are immutable after construction and safe to share across
    threads; the lazy tau-block caches are compute-then-publish and idempotent
    (duplicate computation under a race is harmless).

    Parameters
    ----------
    mu0 : array of shape (T,)
        Expected value of each within-episode step.
    sigma0 : array of shape (T, T)
        Per-episode covariance. Must be symmetric to ``SYMMETRY_RTOL``
        (relative to its largest entry) and positive definite; the Cholesky
        factorization is performed at construction and the cached inverse is
        verified against the identity in max-norm.
    downsample_factor : int
        Raw-steps-per-sample factor applied before estimation; recorded so
        detection times can be reported in raw units as well.
    regularized, ridge :
        Whether a ridge was added by :func:`estimate_params` and its value.
    """

    def __init__(
        self,
        mu0: np.ndarray,
        sigma0: np.ndarray,
        downsample_factor: int = 1,
        regularized: bool = False,
        ridge: float = 0.0,
    ):
        mu0 = np.array(mu0, dtype=float)
        sigma0 = np.array(sigma0, dtype=float)
        if mu0.ndim != 1 or mu0.size < 1:
            raise ValueError("mu0 must be a non-empty 1-D vector")
        T = mu0.size
        if sigma0.shape != (T, T):
            raise ValueError(f"sigma0 must be {T}x{T}, got {sigma0.shape}")
        if int(downsample_factor) < 1:
            raise ValueError("downsample_factor must be positive")
        if not np.all(np.isfinite(mu0)) or not np.all(np.isfinite(sigma0)):
            raise InvalidDataError("parameters contain non-finite entries")

        scale = np.abs(sigma0).max()
        if scale > 0 and np.abs(sigma0 - sigma0.T).max() > SYMMETRY_RTOL * scale:
            raise InvalidDataError("sigma0 is not symmetric within tolerance")
        sigma0 = 0.5 * (sigma0 + sigma0.T)

        try:
            chol = np.linalg.cholesky(sigma0)
        except np.linalg.LinAlgError as exc:
            raise InvalidDataError("sigma0 is not positive definite") from exc
        inv = cho_solve((chol, True), np.eye(T))
        inv = 0.5 * (inv + inv.T)
        if np.abs(sigma0 @ inv - np.eye(T)).max() > INVERSE_IDENTITY_TOL:
            raise InvalidDataError(
                "sigma0 is too ill-conditioned: inverse fails the identity check"
            )

        for arr in (mu0, sigma0, chol, inv):
            arr.setflags(write=False)
        self.mu0 = mu0
        self.sigma0 = sigma0
        self.sigma0_inv = inv
        self.cholesky_lower = chol
        self.downsample_factor = int(downsample_factor)
        self.regularized = bool(regularized)
        self.ridge = float(ridge)
        self._tail_inv: dict[int, np.ndarray] = {T: inv}
        self._tail_weights: dict[int, np.ndarray] = {T: _readonly(inv.sum(axis=0))}
        self._window_weights: dict[int, np.ndarray] = {}

    @property
    def T(self) -> int:
        return self.mu0.size

    @property
    def full_weights(self) -> np.ndarray:
        """Weights 1' sigma0^-1 of one complete episode."""
        return self._tail_weights[self.T]

    @property
    def step_std(self) -> np.ndarray:
        """Per-step standard deviations sqrt(diag(sigma0))."""
        return np.sqrt(np.diag(self.sigma0))

    @property
    def mean_step_std(self) -> float:
        """sqrt(trace(sigma0)/T) -- the sigma unit used by CLI scenarios."""
        return float(np.sqrt(np.trace(self.sigma0) / self.T))

    def tail_inverse(self, tau: int) -> np.ndarray:
        """Inverse of the upper-left tau x tau covariance block (cached)."""
        tau = int(tau)
        if not 1 <= tau <= self.T:
            raise ValueError(f"tau must be in [1, {self.T}], got {tau}")
        cached = self._tail_inv.get(tau)
        if cached is None:
            block = self.sigma0[:tau, :tau]
            chol = np.linalg.cholesky(block)
            inv = cho_solve((chol, True), np.eye(tau))
            inv = 0.5 * (inv + inv.T)
            if np.abs(block @ inv - np.eye(tau)).max() > INVERSE_IDENTITY_TOL:
                raise InvalidDataError(
                    f"{tau}x{tau} covariance block fails the inverse identity check"
                )
            cached = _readonly(inv)
            self._tail_inv[tau] = cached
        return cached

    def tail_weights(self, tau: int) -> np.ndarray:
        """Weights 1' Sigma_tau^-1 of a partial episode of tau steps (cached)."""
        tau = int(tau)
        cached = self._tail_weights.get(tau)
        if cached is None:
            cached = _readonly(self.tail_inverse(tau).sum(axis=0))
            self._tail_weights[tau] = cached
        return cached


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def window_weights(params: EpisodeParams, n: int) -> np.ndarray:
    """Covariance weights 1' Sigma^-1 of an n-step window.

    The window covariance Sigma is block-diagonal with sigma0 blocks (last
    block cropped), so the weight vector is K repetitions of the full-episode
    weights followed by the tau0-block weights. The n x n matrix is never
    materialized. Results are cached on ``params``.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"window length must be positive, got {n}")
    cached = params._window_weights.get(n)
    if cached is not None:
        return cached
    T = params.T
    dec = decompose_index(n, T)
    w = np.empty(n)
    if dec.k:
        w[: dec.k * T] = np.tile(params.full_weights, dec.k)
    w[dec.k * T :] = params.tail_weights(dec.tau)
    cached = _readonly(w)
    params._window_weights[n] = cached
    return cached


@dataclass(frozen=True)
class ReferenceDataset:
    """Recorded episodes of the trusted signal, one per row, post-downsampling."""

    episodes: np.ndarray
    downsample_factor: int = 1

    def __post_init__(self):
        episodes = np.asarray(self.episodes, dtype=float)
        if episodes.ndim != 2 or episodes.shape[0] < 1 or episodes.shape[1] < 1:
            raise ValueError("episodes must be a non-empty N x T matrix")
        if int(self.downsample_factor) < 1:
            raise ValueError("downsample_factor must be positive")
        if not np.all(np.isfinite(episodes)):
            raise InvalidDataError("reference episodes contain non-finite values")
        episodes = episodes.copy()
        episodes.setflags(write=False)
        object.__setattr__(self, "episodes", episodes)
        object.__setattr__(self, "downsample_factor", int(self.downsample_factor))

    @property
    def num_episodes(self) -> int:
        return self.episodes.shape[0]

    @property
    def episode_length(self) -> int:
        return self.episodes.shape[1]

    @classmethod
    def from_raw(cls, raw: np.ndarray, downsample_factor: int) -> "ReferenceDataset":
        """Downsample raw episodes (rows) by ``downsample_factor`` and wrap."""
        raw = np.asarray(raw, dtype=float)
        if raw.ndim != 2:
            raise ValueError("raw episodes must be a 2-D matrix")
        d = int(downsample_factor)
        if d < 1:
            raise ValueError("downsample_factor must be positive")
        if raw.shape[1] % d != 0:
            raise ValueError(
                f"downsample factor {d} does not divide episode length {raw.shape[1]}"
            )
        episodes = raw if d == 1 else raw.reshape(raw.shape[0], -1, d).mean(axis=2)
        return cls(episodes=episodes, downsample_factor=d)


def estimate_params(ref: ReferenceDataset) -> EpisodeParams:
    """Estimate (mu0, sigma0) from reference episodes.

    mu0 is the per-step sample mean; sigma0 is the unbiased sample covariance
    (denominator N-1). If the estimate fails the positive-definiteness or
    inverse-identity checks, a ridge lambda*I is added, starting at
    ``RIDGE_FLOOR * trace/T`` and escalating x10 up to ``RIDGE_CAP * trace/T``
    before giving up. The result records whether a ridge was applied.
    """
    N = ref.num_episodes
    if N < 2:
        raise InsufficientDataError(
            f"covariance estimation requires at least 2 episodes, got {N}"
        )
    X = ref.episodes
    T = ref.episode_length
    mu0 = X.mean(axis=0)
    sigma = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))

    scale = float(np.trace(sigma)) / T
    ladder = [0.0]
    lam = RIDGE_FLOOR * scale
    while lam <= RIDGE_CAP * scale * (1 + 1e-12) and lam > 0:
        ladder.append(lam)
        lam *= 10.0
    last_error: Exception | None = None
    for lam in ladder:
        candidate = sigma if lam == 0.0 else sigma + lam * np.eye(T)
        try:
            return EpisodeParams(
                mu0,
                candidate,
                downsample_factor=ref.downsample_factor,
                regularized=lam > 0.0,
                ridge=lam,
            )
        except InvalidDataError as exc:
            last_error = exc
    raise InvalidDataError(
        "sample covariance is not positive definite even after ridge "
        f"regularization up to {RIDGE_CAP:g}*trace/T"
    ) from last_error


# ---------------------------------------------------------------------------
# File formats owned by this module
# ---------------------------------------------------------------------------


def load_reference_csv(
    path, downsample_factor: int = 1, skip_header: bool = False
) -> ReferenceDataset:
    """Read a reference dataset: CSV, one episode per row, no header by default."""
    rows: list[list[float]] = []
    expected: int | None = None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and skip_header:
                continue
            stripped = line.strip()
            if not stripped:
                continue
            try:
                values = [float(tok) for tok in stripped.split(",")]
            except ValueError as exc:
                raise InvalidDataError(f"{path}: line {lineno}: {exc}") from exc
            if not all(np.isfinite(values)):
                raise InvalidDataError(f"{path}: line {lineno}: non-finite value")
            if expected is None:
                expected = len(values)
            elif len(values) != expected:
                raise InvalidDataError(
                    f"{path}: line {lineno}: expected {expected} values, "
                    f"got {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise InvalidDataError(f"{path}: no episodes found")
    return ReferenceDataset.from_raw(np.asarray(rows), downsample_factor)


def params_to_dict(params: EpisodeParams) -> dict:
    return {
        "format_version": PARAMS_FORMAT_VERSION,
        "T": params.T,
        "d": params.downsample_factor,
        "mu0": params.mu0.tolist(),
        "sigma0": params.sigma0.tolist(),
        "regularized": params.regularized,
        "lambda": params.ridge,
    }


def params_from_dict(data: dict) -> EpisodeParams:
    mu0 = np.asarray(data["mu0"], dtype=float)
    if mu0.size != int(data["T"]):
        raise InvalidDataError("params file: mu0 length does not match T")
    return EpisodeParams(
        mu0,
        np.asarray(data["sigma0"], dtype=float),
        downsample_factor=int(data["d"]),
        regularized=bool(data.get("regularized", False)),
        ridge=float(data.get("lambda", 0.0)),
    )


def load_params_json(path) -> EpisodeParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
