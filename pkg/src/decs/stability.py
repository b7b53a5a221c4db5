"""Forward pass of the sample-stability clustering objective.

Every function here works on plain float64 arrays:

* ``z``  -- (n, d) sample embeddings
* ``m``  -- (k, d) cluster centroids
* ``q``  -- (n, k) Student's-t co-association probabilities
* ``fq`` -- (n, k) determinacy of each sample/centroid relation
* ``sq`` -- (n,) per-sample stability

Only sample-to-centroid quantities are formed, so memory is O(n*k).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

N_BINS = 256
T_MIN = 0.05
T_MAX = 0.95


class DegenerateThresholdWarning(UserWarning):
    """Raised when the assignment histogram has no separating threshold."""


@dataclass(frozen=True)
class StabilityParams:
    t: float = 0.5
    alpha: float = 1.0
    lam: float = 0.8

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 < self.t < 1.0:
            raise ValueError(f"t must lie in (0, 1), got {self.t}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


def _as_finite_2d(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _check_t(t):
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold t must lie in (0, 1), got {t}")


def pairwise_sq_dists(z, m):
    """Squared Euclidean distances, shape (n, k)."""
    diff = z[:, None, :] - m[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def student_t_kernel(sq_dist, alpha=1.0):
    """Unnormalized Student's-t weights ``(1 + d^2/alpha) ** (-(alpha+1)/2)``."""
    return (1.0 + sq_dist / alpha) ** (-(alpha + 1.0) / 2.0)


def co_association(z, m, alpha=1.0):
    """Soft assignment of every sample to every centroid.

    Rows of the result sum to one and every entry is strictly positive.
    """
    z = _as_finite_2d(z, "z")
    m = _as_finite_2d(m, "m")
    if z.shape[1] != m.shape[1]:
        raise ValueError(
            f"embedding dim {z.shape[1]} does not match centroid dim {m.shape[1]}")
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    w = student_t_kernel(pairwise_sq_dists(z, m), alpha)
    return w / w.sum(axis=1, keepdims=True)


def _histogram_counts(values):
    values = np.asarray(values, dtype=np.float64).ravel()
    idx = np.clip(np.floor(values * N_BINS).astype(np.int64), 0, N_BINS - 1)
    return np.bincount(idx, minlength=N_BINS)


def otsu_threshold(q, return_degenerate=False):
    """Otsu threshold of the flattened assignment matrix.

    The entries of ``q`` are binned into 256 uniform bins on [0, 1] and the
    bin edge maximizing the between-class variance is returned, clamped to
    [0.05, 0.95]. Ties go to the lowest edge. Comparisons are done on exact
    integers so the result does not depend on summation order.

    When no edge separates two non-empty classes (e.g. all entries equal)
    0.5 is returned and a :class:`DegenerateThresholdWarning` is emitted.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        raise ValueError("q must be non-empty")
    counts = [int(c) for c in _histogram_counts(q)]
    total = sum(counts)
    total_mass = sum(b * c for b, c in enumerate(counts))

    best_num, best_den, best_edge = 0, 1, None
    n_low = 0
    mass_low = 0
    for edge in range(1, N_BINS):
        n_low += counts[edge - 1]
        mass_low += (edge - 1) * counts[edge - 1]
        n_high = total - n_low
        if n_low == 0 or n_high == 0:
            continue
        # between-class variance * total**2 == num / den
        num = (total * mass_low - n_low * total_mass) ** 2
        den = n_low * n_high
        if num * best_den > best_num * den:
            best_num, best_den, best_edge = num, den, edge

    if best_edge is None:
        warnings.warn("assignment histogram is degenerate; using t = 0.5",
                      DegenerateThresholdWarning, stacklevel=2)
        t = 0.5
        degenerate = True
    else:
        t = min(max(best_edge / N_BINS, T_MIN), T_MAX)
        degenerate = False
    if return_degenerate:
        return t, degenerate
    return t


def determinacy(q, t):
    """Map co-association probabilities to determinacy in [0, 1].

    ``(q - t)**2 / t**2`` below the threshold and ``(q - t)**2 / (1 - t)**2``
    at or above it; zero exactly at ``q == t`` and one at 0 and 1.
    """
    _check_t(t)
    q = np.asarray(q, dtype=np.float64)
    off = q - t
    scale = np.where(off < 0, t * t, (1.0 - t) * (1.0 - t))
    return off * off / scale


def sample_stability(fq, lam=0.8):
    """Row mean of ``fq`` minus ``lam`` times its population variance."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    fq = np.asarray(fq, dtype=np.float64)
    if fq.ndim == 1:
        fq = fq[None, :]
    mean = fq.mean(axis=1)
    dev = fq - mean[:, None]
    var = (dev * dev).mean(axis=1)
    return mean - lam * var


def clustering_loss(sq):
    """Mean instability ``1 - mean(sq)``."""
    sq = np.asarray(sq, dtype=np.float64)
    if sq.size == 0:
        raise ValueError("sq must be non-empty")
    return float(1.0 - np.mean(sq))


def forward(z, m, params):
    """Run the full forward pipeline; returns ``(loss, q, fq, sq)``."""
    q = co_association(z, m, params.alpha)
    fq = determinacy(q, params.t)
    sq = sample_stability(fq, params.lam)
    return clustering_loss(sq), q, fq, sq
