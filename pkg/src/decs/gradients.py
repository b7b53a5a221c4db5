"""Analytic gradients of the clustering loss and their numerical verification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from . import stability
from .stability import StabilityParams


@dataclass
class ClusteringGradients:
    d_loss_d_z: np.ndarray
    d_loss_d_m: np.ndarray


def grad_loss_wrt_stability(n):
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.full(n, -1.0 / n)


def grad_stability_wrt_determinacy(fq, lam=0.8):
    """d sq_i / d fq_ij, row-wise. Accepts a single row or an (n, k) matrix."""
    fq = np.asarray(fq, dtype=np.float64)
    k = fq.shape[-1]
    dev = fq - fq.mean(axis=-1, keepdims=True)
    return 1.0 / k - (2.0 * lam / k) * dev


def grad_determinacy_wrt_assignment(q, t):
    stability._check_t(t)
    q = np.asarray(q, dtype=np.float64)
    off = q - t
    scale = np.where(off < 0, t * t, (1.0 - t) * (1.0 - t))
    return 2.0 * off / scale


def _log_kernel_slope(z_i, m, alpha):
    """Returns ``(diff, c)`` with diff = z_i - m_j and c_j = (alpha+1)/(alpha+|diff_j|^2).

    d log w_j / d z_i = -c_j * diff_j and d log w_j / d m_j = +c_j * diff_j.
    """
    diff = z_i[None, :] - m
    c = (alpha + 1.0) / (alpha + np.einsum("kd,kd->k", diff, diff))
    return diff, c


def _check_row_inputs(z_i, m, alpha):
    z_i = np.asarray(z_i, dtype=np.float64).ravel()
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if z_i.shape[0] != m.shape[1]:
        raise ValueError(f"embedding dim {z_i.shape[0]} != centroid dim {m.shape[1]}")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    return z_i, m


def grad_assignment_wrt_embedding(z_i, m, alpha=1.0):
    """Jacobian d q_i / d z_i of shape (k, d), quotient rule over the kernel weights."""
    z_i, m = _check_row_inputs(z_i, m, alpha)
    q = stability.co_association(z_i[None, :], m, alpha)[0]
    diff, c = _log_kernel_slope(z_i, m, alpha)
    dlogw = -c[:, None] * diff                      # (k, d)
    mean_dlogw = q @ dlogw                          # (d,)
    return q[:, None] * (dlogw - mean_dlogw[None, :])


def grad_assignment_wrt_centroids(z_i, m, alpha=1.0):
    """Full Jacobian ``J[j, l, :] = d q_ij / d m_l`` of shape (k, k, d).

    The shared normalization couples every centroid to every assignment,
    so off-diagonal blocks are non-zero.
    """
    z_i, m = _check_row_inputs(z_i, m, alpha)
    k = m.shape[0]
    q = stability.co_association(z_i[None, :], m, alpha)[0]
    diff, c = _log_kernel_slope(z_i, m, alpha)
    slope = c[:, None] * diff                       # d log w_l / d m_l, (k, d)
    coupling = np.eye(k) - q[None, :]               # delta_jl - q_l
    return q[:, None, None] * coupling[:, :, None] * slope[None, :, :]


def matrix_form_jacobian(z_i, m):
    """d q_i / d z_i assembled from the diagonal-matrix expression (alpha = 1).

    With ``A = diag(1 + |z - m_j|^2)`` and, per coordinate p,
    ``B = -diag(2 (z_p - m_jp))`` the column for coordinate p is
    ``(A^-2 B 1 * 1'A^-1 1 - A^-1 1 * 1'A^-2 B 1) / (1'A^-1 1)^2``.
    Kept as an independent cross-check of :func:`grad_assignment_wrt_embedding`.
    """
    z_i, m = _check_row_inputs(z_i, m, 1.0)
    k, d = m.shape
    ones = np.ones(k)
    a_inv = np.diag(1.0 / (1.0 + np.sum((z_i - m) ** 2, axis=1)))
    s = ones @ a_inv @ ones
    out = np.empty((k, d))
    for p in range(d):
        b = -np.diag(2.0 * (z_i[p] - m[:, p]))
        num = a_inv @ a_inv @ b @ ones * s - a_inv @ ones * (ones @ a_inv @ a_inv @ b @ ones)
        out[:, p] = num / (s * s)
    return out


def matrix_form_centroid_shift(z_i, m):
    """The centroid-side diagonal-matrix expression (alpha = 1), shape (k, d).

    Substituting ``C = -diag(2 (m_jp - z_p))`` for ``B`` moves every centroid
    along coordinate p at once, so this equals the Jacobian summed over
    centroids, ``sum_l d q_i / d m_l``, which is also ``-d q_i / d z_i``.
    It is not the per-centroid Jacobian used for training.
    """
    z_i, m = _check_row_inputs(z_i, m, 1.0)
    k, d = m.shape
    ones = np.ones(k)
    a_inv = np.diag(1.0 / (1.0 + np.sum((z_i - m) ** 2, axis=1)))
    s = ones @ a_inv @ ones
    out = np.empty((k, d))
    for p in range(d):
        c = -np.diag(2.0 * (m[:, p] - z_i[p]))
        num = a_inv @ a_inv @ c @ ones * s - a_inv @ ones * (ones @ a_inv @ a_inv @ c @ ones)
        out[:, p] = num / (s * s)
    return out


def clustering_backward(z, m, params):
    """Loss and gradients of the clustering loss w.r.t. embeddings and centroids.

    Vectorized form of the chain d L/d sq -> d sq/d fq -> d fq/d q -> d q/d(z, m).
    ``t`` is held constant.
    """
    z = np.asarray(z, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    alpha, t, lam = params.alpha, params.t, params.lam
    loss, q, fq, _ = stability.forward(z, m, params)
    n = z.shape[0]

    g_sq = grad_loss_wrt_stability(n)                                  # (n,)
    g_fq = g_sq[:, None] * grad_stability_wrt_determinacy(fq, lam)     # (n, k)
    g_q = g_fq * grad_determinacy_wrt_assignment(q, t)                 # (n, k)

    diff = z[:, None, :] - m[None, :, :]
    c = (alpha + 1.0) / (alpha + np.einsum("nkd,nkd->nk", diff, diff))
    a = g_q * q
    coef = (a - a.sum(axis=1, keepdims=True) * q) * c                  # (n, k)

    d_z = -np.einsum("nk,nkd->nd", coef, diff)
    d_m = np.einsum("nk,nkd->kd", coef, diff)
    return loss, ClusteringGradients(d_z, d_m)


def clustering_backward_explicit(z, m, params):
    """Same gradients via per-sample Jacobians; slow, used for cross-checking."""
    z = np.asarray(z, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    loss, q, fq, _ = stability.forward(z, m, params)
    n = z.shape[0]
    g_sq = grad_loss_wrt_stability(n)
    d_z = np.zeros_like(z)
    d_m = np.zeros_like(m)
    for i in range(n):
        g_fq = g_sq[i] * grad_stability_wrt_determinacy(fq[i], params.lam)
        g_q = g_fq * grad_determinacy_wrt_assignment(q[i], params.t)
        d_z[i] = g_q @ grad_assignment_wrt_embedding(z[i], m, params.alpha)
        d_m += np.einsum("j,jld->ld", g_q, grad_assignment_wrt_centroids(z[i], m, params.alpha))
    return loss, ClusteringGradients(d_z, d_m)


def lipschitz_bound(z, m, params):
    """Upper bound on the per-centroid gradient norm of the clustering loss."""
    z = np.asarray(z, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    n, k = z.shape[0], m.shape[0]
    alpha, t, lam = params.alpha, params.t, params.lam
    max_dist = float(np.sqrt(stability.pairwise_sq_dists(z, m).max()))
    return 2.0 * (1.0 + 2.0 * lam) * (alpha + 1.0) / (4.0 * n * k * t * t * alpha) * max_dist


# ---------------------------------------------------------------------------
# finite-difference verification

FD_STEP = 1e-6
KINK_BAND = 1e-4
ABS_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    per_parameter_errors: List[Tuple[str, float]]
    passed: bool
    tolerance: float
    lines: List[str] = field(default_factory=list)
    excluded: int = 0

    @property
    def pass_(self):
        return self.passed

    def worst(self):
        if not self.per_parameter_errors:
            return None
        return max(self.per_parameter_errors, key=lambda p: p[1])

    def to_text(self):
        out = [f"{'path':<28} {'analytic':>14} {'numeric':>14} {'rel_err':>10}"]
        out.extend(self.lines)
        out.append(f"max_rel_err {self.max_rel_err:.3e} max_abs_err {self.max_abs_err:.3e} "
                   f"excluded {self.excluded} tolerance {self.tolerance:.1e} "
                   f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(out) + "\n"


def central_difference(f, x, step=FD_STEP):
    """Central-difference gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        fp = f()
        flat[idx] = orig - step
        fm = f()
        flat[idx] = orig
        gflat[idx] = (fp - fm) / (2.0 * step)
    return g


def block_error(analytic, numeric):
    """(relative error, absolute error) of one parameter block.

    Relative error is ``|a - n| / max(|a|, |n|)`` in the 2-norm; when both
    norms are below ``ABS_FLOOR`` the comparison falls back to absolute error.
    """
    abs_err = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if scale < ABS_FLOOR:
        rel_err = 0.0 if abs_err <= ABS_FLOOR else float("inf")
    else:
        rel_err = abs_err / scale
    return rel_err, abs_err


def compare_blocks(blocks, tolerance, excluded=0):
    """Build a report from ``[(path, analytic, numeric), ...]``."""
    per, lines = [], []
    max_rel = max_abs = 0.0
    for path, a, n in blocks:
        rel, ab = block_error(a, n)
        per.append((path, rel))
        lines.append(f"{path:<28} {np.linalg.norm(a):14.6e} {np.linalg.norm(n):14.6e} {rel:10.3e}")
        max_rel = max(max_rel, rel)
        max_abs = max(max_abs, ab)
    return GradCheckReport(max_rel, max_abs, per, max_rel <= tolerance, tolerance, lines, excluded)


def random_config(seed, n=16, d=8, k=5, t=0.5, alpha=1.0, lam=0.8, scale=1.0):
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=scale, size=(n, d))
    m = rng.normal(scale=scale, size=(k, d))
    return z, m, StabilityParams(t=t, alpha=alpha, lam=lam)


def check_clustering_gradients(z, m, params, tolerance=1e-5, backward=clustering_backward,
                               prefix=""):
    """Compare ``backward`` against central differences of the forward loss.

    Embedding rows whose assignments sit within ``KINK_BAND`` of ``t`` are
    skipped, as is the centroid block whenever any assignment does.
    """
    z = np.array(z, dtype=np.float64)
    m = np.array(m, dtype=np.float64)
    _, grads = backward(z, m, params)

    def loss():
        return stability.forward(z, m, params)[0]

    q = stability.co_association(z, m, params.alpha)
    near_kink = np.abs(q - params.t) < KINK_BAND
    blocks, excluded = [], 0

    num_z = central_difference(loss, z)
    for i in range(z.shape[0]):
        if near_kink[i].any():
            excluded += 1
            continue
        blocks.append((f"{prefix}z[{i}]", grads.d_loss_d_z[i], num_z[i]))
    if near_kink.any():
        excluded += m.shape[0]
    else:
        num_m = central_difference(loss, m)
        for j in range(m.shape[0]):
            blocks.append((f"{prefix}m[{j}]", grads.d_loss_d_m[j], num_m[j]))
    return compare_blocks(blocks, tolerance, excluded)


def finite_difference_check(seed=0, n=16, d=8, k=5, t=0.5, alpha=1.0, lam=0.8,
                            tolerance=1e-5, backward=clustering_backward):
    """Seeded random configuration checked against central differences."""
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    z, m, params = random_config(seed, n, d, k, t, alpha, lam)
    return check_clustering_gradients(z, m, params, tolerance, backward,
                                      prefix=f"seed{seed}/")


def autoencoder_gradcheck(seed=0, input_dim=6, hidden_dims=(4,), latent_dim=2, n=5,
                          tolerance=1e-5, autoencoder=None, x=None):
    """Central-difference check of the autoencoder backward pass.

    Configurations with a ReLU pre-activation within ``KINK_BAND`` of zero are
    reported as excluded rather than compared.
    """
    from .autoencoder import Autoencoder, RELU, _forward

    rng = np.random.default_rng(seed)
    if autoencoder is None:
        autoencoder = Autoencoder.build(input_dim, hidden_dims, latent_dim,
                                        seed=int(rng.integers(2**31)))
    if x is None:
        x = rng.uniform(0.0, 1.0, size=(n, autoencoder.input_dim))
    x = np.asarray(x, dtype=np.float64)

    z, enc_cache = _forward(x, autoencoder.encoder)
    _, dec_cache = _forward(z, autoencoder.decoder)
    layers = autoencoder.encoder + autoencoder.decoder
    for layer, (_, pre) in zip(layers, enc_cache + dec_cache):
        if layer.activation == RELU and np.any(np.abs(pre) < KINK_BAND):
            return compare_blocks([], tolerance, excluded=1)

    _, grads = autoencoder.backward(x)

    def loss():
        return autoencoder.backward(x)[0]

    blocks = []
    for name, p in autoencoder.parameters().items():
        blocks.append((f"seed{seed}/{name}", grads[name], central_difference(loss, p)))
    return compare_blocks(blocks, tolerance)
