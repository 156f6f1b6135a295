"""Dense linear algebra and reproducible random streams.

Model vectors are plain 1-D float64 numpy arrays; a fixed dimension d is
shared by every vector in a run. All functions here are pure and
thread-safe. Random streams are single-owner: a stream is never drawn
from by two threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "least_squares",
    "top_eigenpair",
    "RngStream",
    "derive_seed",
    "as_model_vector",
]


def as_model_vector(x) -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ConfigError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ConfigError("vector contains NaN or Inf")
    return v


def least_squares(X, y) -> np.ndarray:
    """Minimize ||y - Xw||_2; minimum-norm solution on rank-deficient X.

    Small shards with n < d are a supported regime, so singular designs
    return the minimum-norm minimizer instead of raising.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1:
        raise ConfigError(f"bad shapes: X {X.shape}, y {y.shape}")
    if X.shape[0] != y.shape[0]:
        raise ConfigError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 1:
        raise ConfigError("need at least one sample")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ConfigError("least_squares input contains NaN or Inf")
    w, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    return w


def top_eigenpair(M, max_iter: int = 200, tol: float = 1e-10):
    """Largest eigenpair of a symmetric PSD matrix by power iteration.

    Returns (eigenvalue, unit eigenvector). Iterates until the relative
    residual ||Mv - lambda v|| <= tol * max(1, lambda) or max_iter is hit;
    with a tiny top eigengap the returned Rayleigh quotient is still within
    residual accuracy of the maximum, which is all the filtering code needs.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(f"expected a square matrix, got {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise ConfigError("matrix is not symmetric within 1e-10")
    d = M.shape[0]
    # Deterministic start; a seeded random direction avoids pathological
    # orthogonality to the top eigenvector that e.g. the ones vector can hit.
    v = np.random.Generator(np.random.PCG64(0x5EED)).standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        Mv = M @ v
        norm = np.linalg.norm(Mv)
        if norm <= 1e-300:
            # zero (or numerically zero) matrix: any unit vector qualifies
            return 0.0, v
        v_new = Mv / norm
        lam = float(v_new @ (M @ v_new))
        if np.linalg.norm(M @ v_new - lam * v_new) <= tol * max(1.0, lam):
            return lam, v_new
        v = v_new
    return lam, v


def derive_seed(master_seed: int, *path: int) -> int:
    """Deterministic 64-bit child seed for a (master, path...) coordinate.

    Used to pre-split randomness before any parallel dispatch so thread
    scheduling can never affect results. Callers must keep path lengths
    consistent per master: SeedSequence entropy ignores trailing zero
    words, so (s,) and (s, 0) alias.
    """
    ss = np.random.SeedSequence(entropy=(int(master_seed),) + tuple(int(p) for p in path))
    w = ss.generate_state(2, dtype=np.uint32)
    return int(w[0]) << 32 | int(w[1])


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream.

    Identical (master_seed, stream_id) gives an identical draw sequence on
    every platform; distinct stream ids give statistically independent
    streams (SeedSequence spawn keys).
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, offset: int) -> "RngStream":
        return RngStream(derive_seed(self.master_seed, self.stream_id), offset)
