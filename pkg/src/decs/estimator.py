"""scikit-learn compatible front end for the two-stage clustering pipeline."""

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from . import stability
from .autoencoder import AugmentSpec, Autoencoder, PretrainConfig, pretrain
from .trainer import TrainConfig, assign_clusters, train


class DECS(ClusterMixin, TransformerMixin, BaseEstimator):
    """Deep embedding clustering driven by sample stability.

    ``fit`` pretrains a dense autoencoder on reconstruction loss, initializes
    centroids with k-means in the embedding space, then fine-tunes encoder
    and centroids by minimizing mean sample instability.

    Parameters
    ----------
    n_clusters : int
    hidden_dims : tuple of int
        Encoder hidden widths; the decoder mirrors them.
    latent_dim : int
    alpha : float
        Degrees of freedom of the Student's-t assignment kernel.
    lam : float
        Weight of the determinacy variance in the stability score.
    pretrain_epochs, pretrain_lr : int, float
        Adam pretraining budget. Ignored when ``autoencoder`` is given.
    batch_size : int
    pretrain_batch_size : int or None
        Mini-batch size for pretraining; defaults to ``batch_size``.
    max_iter : int
        Mini-batch iterations of the clustering stage.
    sgd_lr, sgd_momentum : float
    tol : float
        Stop when fewer than this fraction of labels change between epochs.
    augment : {"none", "vector", "image"}
        Input augmentation for pretraining; "image" needs ``image_shape``.
    augment_in_clustering : bool
        Also augment encoder inputs during the clustering stage.
    include_reconstruction : bool
        Keep the decoder and add the reconstruction loss while clustering.
    autoencoder : Autoencoder or None
        Pretrained network to start from; it is copied, never modified.
    random_state : int
    """

    def __init__(self, n_clusters=10, hidden_dims=(500, 500, 2000), latent_dim=10,
                 alpha=1.0, lam=0.8, pretrain_epochs=500, pretrain_lr=1e-3,
                 batch_size=256, pretrain_batch_size=None, max_iter=10000, sgd_lr=0.01, sgd_momentum=0.9,
                 tol=0.001, augment="none", image_shape=None, max_shift_px=2,
                 max_rotate_deg=10.0, noise_sigma=0.01, augment_in_clustering=False,
                 include_reconstruction=False, kmeans_n_init=10, snapshot_every=0,
                 autoencoder=None, random_state=0):
        self.n_clusters = n_clusters
        self.hidden_dims = hidden_dims
        self.latent_dim = latent_dim
        self.alpha = alpha
        self.lam = lam
        self.pretrain_epochs = pretrain_epochs
        self.pretrain_lr = pretrain_lr
        self.batch_size = batch_size
        self.pretrain_batch_size = pretrain_batch_size
        self.max_iter = max_iter
        self.sgd_lr = sgd_lr
        self.sgd_momentum = sgd_momentum
        self.tol = tol
        self.augment = augment
        self.image_shape = image_shape
        self.max_shift_px = max_shift_px
        self.max_rotate_deg = max_rotate_deg
        self.noise_sigma = noise_sigma
        self.augment_in_clustering = augment_in_clustering
        self.include_reconstruction = include_reconstruction
        self.kmeans_n_init = kmeans_n_init
        self.snapshot_every = snapshot_every
        self.autoencoder = autoencoder
        self.random_state = random_state

    def _seed(self):
        if self.random_state is None:
            return int(np.random.default_rng().integers(2**31))
        return int(self.random_state)

    def _augment_spec(self, seed):
        shape = tuple(self.image_shape) if self.image_shape is not None else None
        return AugmentSpec(mode=self.augment, max_shift_px=self.max_shift_px,
                           max_rotate_deg=self.max_rotate_deg, noise_sigma=self.noise_sigma,
                           seed=seed, image_shape=shape)

    def train_config(self, seed=None):
        return TrainConfig(
            k=self.n_clusters, alpha=self.alpha, lam=self.lam, batch_size=self.batch_size,
            max_iter=self.max_iter, sgd_lr=self.sgd_lr, sgd_momentum=self.sgd_momentum,
            label_change_tol=self.tol, seed=self._seed() if seed is None else seed,
            snapshot_every=self.snapshot_every,
            include_reconstruction_in_clustering=self.include_reconstruction,
            augment_in_clustering=self.augment_in_clustering,
            kmeans_n_init=self.kmeans_n_init)

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=max(self.n_clusters, 1))
        seed = self._seed()
        aug = self._augment_spec(seed)
        if self.autoencoder is not None:
            ae = self.autoencoder.copy()
            if ae.input_dim != X.shape[1]:
                raise ValueError(f"autoencoder expects {ae.input_dim} features, got {X.shape[1]}")
            self.pretrain_loss_ = []
        else:
            ae = Autoencoder.build(X.shape[1], tuple(self.hidden_dims), self.latent_dim, seed)
            pre_bs = self.pretrain_batch_size or self.batch_size
            cfg = PretrainConfig(epochs=self.pretrain_epochs, batch_size=pre_bs,
                                 lr=self.pretrain_lr, seed=seed, augment=aug)
            ae, self.pretrain_loss_ = pretrain(X, ae, cfg)
        self.pretrained_autoencoder_ = ae.copy()
        result = train(X, ae, self.train_config(seed), aug_spec=aug)
        self.autoencoder_ = result.autoencoder
        self.cluster_centers_ = result.centroids
        self.labels_ = result.labels
        self.history_ = result.history
        self.n_iter_ = result.history.n_iter
        self.threshold_ = result.history.final_t
        return self

    def transform(self, X):
        """Embed ``X`` with the fine-tuned encoder."""
        check_is_fitted(self, "autoencoder_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self.autoencoder_.encode(X)

    def predict_proba(self, X):
        """Student's-t soft assignments, shape (n_samples, n_clusters)."""
        return stability.co_association(self.transform(X), self.cluster_centers_, self.alpha)

    def predict(self, X):
        return assign_clusters(self.predict_proba(X))

    def sample_stability(self, X):
        """Per-sample stability using the threshold found at the end of training."""
        q = self.predict_proba(X)
        return stability.sample_stability(stability.determinacy(q, self.threshold_), self.lam)

    def score(self, X, y=None):
        """Mean sample stability (higher is better)."""
        return float(np.mean(self.sample_stability(X)))
