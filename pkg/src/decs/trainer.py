"""Clustering stage: k-means initialization and joint encoder/centroid updates."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import stability
from .autoencoder import AugmentSpec, Autoencoder, TrainingDivergedError, augment
from .gradients import clustering_backward, lipschitz_bound
from .stability import DegenerateThresholdWarning, StabilityParams

logger = logging.getLogger(__name__)

KMEANS_MAX_ROUNDS = 300


@dataclass
class TrainConfig:
    k: int = 10
    alpha: float = 1.0
    lam: float = 0.8
    batch_size: int = 256
    max_iter: int = 10000
    sgd_lr: float = 0.01
    sgd_momentum: float = 0.9
    label_change_tol: float = 0.001
    seed: int = 0
    snapshot_every: int = 0
    include_reconstruction_in_clustering: bool = False
    augment_in_clustering: bool = False
    freeze_encoder: bool = False
    kmeans_n_init: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.alpha <= 0 or self.lam < 0:
            raise ValueError("alpha must be > 0 and lambda >= 0")
        if self.batch_size < 1 or self.max_iter < 0 or self.snapshot_every < 0:
            raise ValueError("batch_size must be >= 1; max_iter, snapshot_every >= 0")
        if self.sgd_lr <= 0:
            raise ValueError("sgd_lr must be > 0")
        if not 0 <= self.sgd_momentum < 1:
            raise ValueError("sgd_momentum must lie in [0, 1)")
        if self.kmeans_n_init < 1:
            raise ValueError("kmeans_n_init must be >= 1")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# k-means

def _sq_dists(x, c):
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centers[j:j + 1])[:, 0])
    return centers


def _lloyd(x, centers, max_rounds=KMEANS_MAX_ROUNDS):
    k = centers.shape[0]
    labels = None
    for _ in range(max_rounds):
        d = _sq_dists(x, centers)
        new = d.argmin(axis=1)
        counts = np.bincount(new, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # reseed an empty cluster at the point farthest from its own centroid
            own = d[np.arange(len(x)), new]
            far = int(own.argmax())
            centers[j] = x[far]
            d = _sq_dists(x, centers)
            new = d.argmin(axis=1)
            counts = np.bincount(new, minlength=k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    d = _sq_dists(x, centers)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(len(x)), labels].sum())
    return centers, labels, inertia


def kmeans_init(z, k, seed=0, n_init=10):
    """k-means++ seeding followed by Lloyd iterations; best of ``n_init`` restarts.

    Returns ``(centroids, labels)``.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} samples")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centers, labels, inertia = _lloyd(z, _kmeans_pp(z, k, rng))
        if best is None or inertia < best[2]:
            best = (centers, labels, inertia)
    return best[0], best[1]


def assign_clusters(q):
    """Per-sample argmax of the assignment matrix; ties go to the lowest index."""
    return np.asarray(q).argmax(axis=1)


# ---------------------------------------------------------------------------
# training

class SGDMomentum:
    """``v <- mu * v + g``; ``p <- p - lr * v``."""

    def __init__(self, params: Dict[str, np.ndarray], lr, momentum):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        for name, p in self.params.items():
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            p -= self.lr * v


@dataclass
class EpochRecord:
    epoch: int
    iteration: int
    loss: float
    t: float
    mean_stability: float
    label_change: float
    grad_norm: float = 0.0
    bound_m: float = 0.0
    bound_violations: int = 0
    invariant_violations: int = 0


@dataclass
class Snapshot:
    iteration: int
    embeddings: np.ndarray
    labels: np.ndarray
    centroids: np.ndarray


@dataclass
class TrainHistory:
    epochs: List[EpochRecord] = field(default_factory=list)
    iter_loss: List[float] = field(default_factory=list)
    snapshots: List[Snapshot] = field(default_factory=list)
    initial_labels: Optional[np.ndarray] = None
    final_loss: float = float("nan")
    final_t: float = float("nan")
    final_mean_stability: float = float("nan")
    stopped_early: bool = False

    @property
    def n_iter(self):
        return len(self.iter_loss)

    @property
    def bound_violations(self):
        return sum(e.bound_violations for e in self.epochs)

    @property
    def invariant_violations(self):
        return sum(e.invariant_violations for e in self.epochs)


@dataclass
class TrainResult:
    autoencoder: Autoencoder
    centroids: np.ndarray
    labels: np.ndarray
    history: TrainHistory


def forward_invariant_violations(q, fq, sq, loss):
    """Number of broken forward invariants (row sums, determinacy range, stability bound)."""
    bad = int(np.sum(np.abs(q.sum(axis=1) - 1.0) > 1e-9))
    bad += int(np.sum((fq < 0) | (fq > 1)))
    bad += int(np.sum(sq > 1.0))
    bad += int(loss < 0)
    return bad


def _threshold(q):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateThresholdWarning)
        return stability.otsu_threshold(q)


class _Diverged(TrainingDivergedError):
    def __init__(self, msg, state):
        super().__init__(msg)
        self.state = state


def train(x, autoencoder: Autoencoder, config: TrainConfig, centroids=None,
          aug_spec: Optional[AugmentSpec] = None) -> TrainResult:
    """Jointly fine-tune the encoder and centroids under the clustering loss.

    The autoencoder is updated in place. If ``centroids`` is None they come
    from k-means on the initial embeddings. The Otsu threshold is refreshed
    once per epoch from the full assignment matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    rng = np.random.default_rng(config.seed)
    hist = TrainHistory()

    z_all = autoencoder.encode(x)
    if centroids is None:
        m, init_labels = kmeans_init(z_all, config.k, config.seed, config.kmeans_n_init)
    else:
        m = np.array(centroids, dtype=np.float64)
        init_labels = assign_clusters(stability.co_association(z_all, m, config.alpha))
    hist.initial_labels = init_labels.copy()

    params = {} if config.freeze_encoder else dict(autoencoder.encoder_parameters())
    if config.include_reconstruction_in_clustering and not config.freeze_encoder:
        params.update({k: v for k, v in autoencoder.parameters().items()
                       if k.startswith("decoder.")})
    params["centroids"] = m
    opt = SGDMomentum(params, config.sgd_lr, config.sgd_momentum)
    aug_rng = np.random.default_rng(config.seed + 1)

    def snapshot(it, z):
        labels = assign_clusters(stability.co_association(z, m, config.alpha))
        hist.snapshots.append(Snapshot(it, z.copy(), labels, m.copy()))

    if config.snapshot_every:
        snapshot(0, z_all)

    prev_labels = init_labels
    it = 0
    epoch = 0
    while it < config.max_iter:
        z_all = autoencoder.encode(x)
        q_all = stability.co_association(z_all, m, config.alpha)
        t = _threshold(q_all)
        sp = StabilityParams(t=t, alpha=config.alpha, lam=config.lam)
        fq_all = stability.determinacy(q_all, t)
        sq_all = stability.sample_stability(fq_all, config.lam)
        full_loss = stability.clustering_loss(sq_all)
        labels = assign_clusters(q_all)
        change = float(np.mean(labels != prev_labels))
        rec = EpochRecord(epoch, it, full_loss, t, float(sq_all.mean()), change,
                          invariant_violations=forward_invariant_violations(
                              q_all, fq_all, sq_all, full_loss))
        if epoch > 0 and change < config.label_change_tol:
            hist.epochs.append(rec)
            hist.stopped_early = True
            break
        prev_labels = labels

        worst_ratio = -1.0
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            if it >= config.max_iter:
                break
            xb = x[perm[start:start + config.batch_size]]
            if config.augment_in_clustering and aug_spec is not None:
                xb = augment(xb, aug_spec, aug_rng)
            zb, cache = autoencoder.encoder_forward(xb)
            loss, g = clustering_backward(zb, m, sp)
            if not np.isfinite(loss) or not np.all(np.isfinite(g.d_loss_d_m)):
                state = {**autoencoder.to_arrays(), "centroids": m.copy()}
                raise _Diverged(f"clustering loss became {loss} at iteration {it}", state)
            grads = {"centroids": g.d_loss_d_m}
            if not config.freeze_encoder:
                grads.update(autoencoder.encoder_backward(cache, g.d_loss_d_z))
                if config.include_reconstruction_in_clustering:
                    _, rg = autoencoder.backward(xb)
                    for name, arr in rg.items():
                        grads[name] = grads.get(name, 0.0) + arr

            gnorm = float(np.linalg.norm(g.d_loss_d_m, axis=1).max())
            bound = lipschitz_bound(zb, m, sp)
            if gnorm > bound:
                rec.bound_violations += 1
            ratio = gnorm / bound if bound > 0 else np.inf
            if ratio > worst_ratio:
                worst_ratio = ratio
                rec.grad_norm, rec.bound_m = gnorm, bound

            opt.step(grads)
            hist.iter_loss.append(loss)
            it += 1
            if config.snapshot_every and it % config.snapshot_every == 0:
                snapshot(it, autoencoder.encode(x))
        hist.epochs.append(rec)
        logger.debug("epoch %d iter %d loss %.5f t %.4f change %.4f",
                     epoch, it, full_loss, t, change)
        epoch += 1

    z_all = autoencoder.encode(x)
    q_all = stability.co_association(z_all, m, config.alpha)
    t = _threshold(q_all)
    fq_all = stability.determinacy(q_all, t)
    sq_all = stability.sample_stability(fq_all, config.lam)
    hist.final_t = t
    hist.final_loss = stability.clustering_loss(sq_all)
    hist.final_mean_stability = float(sq_all.mean())
    labels = init_labels.copy() if it == 0 else assign_clusters(q_all)
    return TrainResult(autoencoder, m, labels, hist)
