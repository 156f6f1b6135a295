"""Robust location estimators.

These are the center estimates used by both the clustering stage and the
distributed-optimization stage: coordinate-wise trimmed mean, coordinate-wise
median, geometric median (Weiszfeld), and a spectral iterative filter that
repeatedly removes points with extreme projections onto the top covariance
eigenvector. All estimators are pure functions of their input set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import top_eigenpair

__all__ = [
    "AggregatorSpec",
    "trimmed_mean",
    "coord_median",
    "geometric_median",
    "iter_filter_mean",
    "aggregate",
]


def _as_points(points) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[0] < 1:
        raise ConfigError(f"expected a nonempty (t, d) point array, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ConfigError("points contain NaN or Inf")
    return P


def trimmed_mean(points, beta: float) -> np.ndarray:
    """Coordinate-wise mean after deleting floor(beta*t) smallest and largest
    values per coordinate.

    beta = 0 is the sample mean. Fixed integer trimming keeps the estimator
    deterministic for small t.
    """
    P = _as_points(points)
    if not 0.0 <= beta < 0.5:
        raise ConfigError(f"trim fraction must be in [0, 0.5), got {beta}")
    t = P.shape[0]
    k = int(math.floor(beta * t))
    # sort row-contiguous so each coordinate's mean accumulates in the same
    # order as a plain 1-D mean of that sorted coordinate (reproducible
    # against a per-coordinate reference regardless of input layout)
    S = np.sort(np.ascontiguousarray(P.T), axis=1)
    return S[:, k : t - k].mean(axis=1)


def coord_median(points) -> np.ndarray:
    """Coordinate-wise median; an even count averages the two middle values."""
    P = _as_points(points)
    return np.median(P, axis=0)


def geometric_median(points, tol: float = 1e-7, max_iter: int = 500) -> np.ndarray:
    """Point minimizing the sum of Euclidean distances (Weiszfeld iteration).

    When the iterate coincides with a data point the singularity-free
    update of Vardi and Zhang is used instead of the raw reweighting, so
    the iteration cannot get stuck dividing by zero. Exact for t = 1 or
    when all points coincide.
    """
    P = _as_points(points)
    t = P.shape[0]
    if t == 1:
        return P[0].copy()
    y = P.mean(axis=0)
    for _ in range(max_iter):
        diff = P - y
        dist = np.linalg.norm(diff, axis=1)
        coincident = dist <= 1e-12
        if coincident.all():
            return P[0].copy()
        w = 1.0 / dist[~coincident]
        T = (P[~coincident] * w[:, None]).sum(axis=0) / w.sum()
        eta = int(coincident.sum())
        if eta == 0:
            y_new = T
        else:
            R = (diff[~coincident] * w[:, None]).sum(axis=0)
            r = np.linalg.norm(R)
            if r <= 1e-12:
                return y  # the current iterate is the median
            gamma = min(1.0, eta / r)
            y_new = (1.0 - gamma) * T + gamma * y
        if np.linalg.norm(y_new - y) <= tol * max(1.0, np.linalg.norm(y)):
            return y_new
        y = y_new
    return y


def _mad_scale(values: np.ndarray) -> float:
    med = np.median(values)
    return 1.4826 * float(np.median(np.abs(values - med)))


def iter_filter_mean(points, variance_bound: float | None = None, max_rounds: int = 20) -> np.ndarray:
    """Spectral filtering mean.

    Repeat up to max_rounds: compute the survivors' mean and the top
    eigenpair (lam, v) of their sample covariance; if lam is within the
    variance bound, return the mean; otherwise remove the ceil(0.05*t)
    surviving points with the largest squared projection onto v, never
    letting survivors drop below t/2. If variance_bound is None it is set
    per round to 4 * sigma_hat^2 with sigma_hat a median-absolute-deviation
    estimate of the projection spread along v.
    """
    P = _as_points(points)
    t = P.shape[0]
    if t < 2:
        raise ConfigError("iterative filtering needs at least 2 points")
    if max_rounds < 1:
        raise ConfigError("max_rounds must be >= 1")
    drop_per_round = math.ceil(0.05 * t)
    min_survivors = math.ceil(t / 2)
    alive = np.arange(t)
    for _ in range(max_rounds):
        surv = P[alive]
        mu = surv.mean(axis=0)
        centered = surv - mu
        cov = centered.T @ centered / len(alive)
        lam, v = top_eigenpair(cov)
        proj = centered @ v
        if variance_bound is None:
            bound = 4.0 * _mad_scale(proj) ** 2
        else:
            bound = variance_bound
        if lam <= bound:
            return mu
        n_drop = min(drop_per_round, len(alive) - min_survivors)
        if n_drop <= 0:
            return mu
        # stable order: among tied scores the later index is dropped first
        order = np.argsort(proj**2, kind="stable")
        alive = np.sort(alive[order[: len(alive) - n_drop]])
    return P[alive].mean(axis=0)


# ---------------------------------------------------------------------------
# aggregator menu


@dataclass(frozen=True)
class AggregatorSpec:
    """Which robust estimator to use, with its parameters.

    kind is one of sample_mean, trimmed_mean, coord_median, geo_median,
    iter_filter.
    """

    kind: str
    beta: float = 0.0
    tol: float = 1e-7
    max_iter: int = 500
    variance_bound: float | None = None
    max_rounds: int = 20

    _KINDS = ("sample_mean", "trimmed_mean", "coord_median", "geo_median", "iter_filter")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown aggregator kind {self.kind!r}; expected one of {self._KINDS}")
        if self.kind == "trimmed_mean" and not 0.0 <= self.beta < 0.5:
            raise ConfigError(f"trim fraction must be in [0, 0.5), got {self.beta}")

    @classmethod
    def sample_mean(cls) -> "AggregatorSpec":
        return cls("sample_mean")

    @classmethod
    def trimmed(cls, beta: float) -> "AggregatorSpec":
        return cls("trimmed_mean", beta=beta)

    @classmethod
    def median(cls) -> "AggregatorSpec":
        return cls("coord_median")

    @classmethod
    def geomedian(cls, tol: float = 1e-7, max_iter: int = 500) -> "AggregatorSpec":
        return cls("geo_median", tol=tol, max_iter=max_iter)

    @classmethod
    def filtering(cls, variance_bound: float | None = None, max_rounds: int = 20) -> "AggregatorSpec":
        return cls("iter_filter", variance_bound=variance_bound, max_rounds=max_rounds)


def aggregate(points, spec: AggregatorSpec) -> np.ndarray:
    """Apply the estimator selected by spec to a (t, d) point set."""
    P = _as_points(points)
    if spec.kind == "sample_mean":
        return P.mean(axis=0)
    if spec.kind == "trimmed_mean":
        return trimmed_mean(P, spec.beta)
    if spec.kind == "coord_median":
        return coord_median(P)
    if spec.kind == "geo_median":
        return geometric_median(P, tol=spec.tol, max_iter=spec.max_iter)
    if spec.kind == "iter_filter":
        return iter_filter_mean(P, variance_bound=spec.variance_bound, max_rounds=spec.max_rounds)
    raise ConfigError(f"unknown aggregator kind {spec.kind!r}")
