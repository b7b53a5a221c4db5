"""Dense autoencoder with hand-written forward/backward passes and Adam pretraining."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

RELU = "relu"
IDENTITY = "identity"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class DenseLayer:
    W: np.ndarray          # (out, in)
    b: np.ndarray          # (out,)
    activation: str = RELU

    def __post_init__(self):
        if self.activation not in (RELU, IDENTITY):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]

    @classmethod
    def init(cls, in_dim, out_dim, activation, rng):
        bound = 1.0 / np.sqrt(in_dim)
        W = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=out_dim)
        return cls(W, b, activation)

    def copy(self):
        return DenseLayer(self.W.copy(), self.b.copy(), self.activation)


def _forward(x, layers):
    """Returns the output and the cache ``[(input, pre_activation), ...]``."""
    cache = []
    h = x
    for layer in layers:
        pre = h @ layer.W.T + layer.b
        cache.append((h, pre))
        h = np.maximum(pre, 0.0) if layer.activation == RELU else pre
    return h, cache


def _backward(grad_out, layers, cache):
    """Backprop ``grad_out`` through ``layers``; returns ``(grads, grad_input)``."""
    grads = [None] * len(layers)
    g = grad_out
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        h_in, pre = cache[idx]
        if layer.activation == RELU:
            g = g * (pre > 0)
        grads[idx] = (g.T @ h_in, g.sum(axis=0))
        g = g @ layer.W
    return grads, g


def _check_input(x, layers):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D batch, got shape {x.shape}")
    if x.shape[1] != layers[0].in_dim:
        raise ValueError(f"input dim {x.shape[1]} != first layer dim {layers[0].in_dim}")
    return x


def encode(x, encoder: List[DenseLayer]):
    x = _check_input(x, encoder)
    z, _ = _forward(x, encoder)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite activations in encoder")
    return z


def decode(z, decoder: List[DenseLayer]):
    z = _check_input(z, decoder)
    x, _ = _forward(z, decoder)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite activations in decoder")
    return x


def reconstruction_loss(x_aug, x_rec):
    x_aug = np.asarray(x_aug, dtype=np.float64)
    x_rec = np.asarray(x_rec, dtype=np.float64)
    if x_aug.shape != x_rec.shape:
        raise ValueError(f"shape mismatch {x_aug.shape} vs {x_rec.shape}")
    r = x_rec - x_aug
    return float(np.sum(r * r) / x_aug.shape[0])


class Autoencoder:
    """Mirror-symmetric stack of dense layers.

    Hidden layers use ReLU; the embedding layer and the reconstruction layer
    are linear.
    """

    def __init__(self, encoder: List[DenseLayer], decoder: List[DenseLayer]):
        for a, b in zip(encoder, encoder[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError("encoder layer dims do not chain")
        for a, b in zip(decoder, decoder[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError("decoder layer dims do not chain")
        if encoder[-1].out_dim != decoder[0].in_dim or decoder[-1].out_dim != encoder[0].in_dim:
            raise ValueError("decoder does not mirror encoder")
        if decoder[-1].activation != IDENTITY:
            raise ValueError("final decoder layer must be linear")
        self.encoder = encoder
        self.decoder = decoder

    @classmethod
    def build(cls, input_dim, hidden_dims=(500, 500, 2000), latent_dim=10, seed=0):
        rng = np.random.default_rng(seed)
        dims = [input_dim, *hidden_dims, latent_dim]
        n_layers = len(dims) - 1
        encoder = [DenseLayer.init(dims[i], dims[i + 1],
                                   IDENTITY if i == n_layers - 1 else RELU, rng)
                   for i in range(n_layers)]
        rdims = dims[::-1]
        decoder = [DenseLayer.init(rdims[i], rdims[i + 1],
                                   IDENTITY if i == n_layers - 1 else RELU, rng)
                   for i in range(n_layers)]
        return cls(encoder, decoder)

    @property
    def input_dim(self):
        return self.encoder[0].in_dim

    @property
    def latent_dim(self):
        return self.encoder[-1].out_dim

    @property
    def hidden_dims(self):
        return tuple(layer.out_dim for layer in self.encoder[:-1])

    def copy(self):
        return Autoencoder([l.copy() for l in self.encoder], [l.copy() for l in self.decoder])

    def encode(self, x):
        return encode(x, self.encoder)

    def decode(self, z):
        return decode(z, self.decoder)

    def reconstruct(self, x):
        return self.decode(self.encode(x))

    def parameters(self) -> Dict[str, np.ndarray]:
        """Ordered name -> array view of every trainable parameter."""
        params = {}
        for part, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, layer in enumerate(layers):
                params[f"{part}.{i}.weight"] = layer.W
                params[f"{part}.{i}.bias"] = layer.b
        return params

    def encoder_parameters(self):
        return {k: v for k, v in self.parameters().items() if k.startswith("encoder.")}

    def encoder_forward(self, x):
        x = _check_input(x, self.encoder)
        return _forward(x, self.encoder)

    def encoder_backward(self, cache, grad_z) -> Dict[str, np.ndarray]:
        grads, _ = _backward(grad_z, self.encoder, cache)
        out = {}
        for i, (gW, gb) in enumerate(grads):
            out[f"encoder.{i}.weight"] = gW
            out[f"encoder.{i}.bias"] = gb
        return out

    def backward(self, x_aug) -> Tuple[float, Dict[str, np.ndarray]]:
        """Reconstruction loss of ``x_aug`` against itself, and its gradients."""
        x_aug = _check_input(x_aug, self.encoder)
        n = x_aug.shape[0]
        z, enc_cache = _forward(x_aug, self.encoder)
        x_rec, dec_cache = _forward(z, self.decoder)
        loss = reconstruction_loss(x_aug, x_rec)
        grad_rec = 2.0 * (x_rec - x_aug) / n
        dec_grads, grad_z = _backward(grad_rec, self.decoder, dec_cache)
        enc_grads, _ = _backward(grad_z, self.encoder, enc_cache)
        grads = {}
        for part, gl in (("encoder", enc_grads), ("decoder", dec_grads)):
            for i, (gW, gb) in enumerate(gl):
                grads[f"{part}.{i}.weight"] = gW
                grads[f"{part}.{i}.bias"] = gb
        return loss, grads

    def to_arrays(self):
        return {name: arr.copy() for name, arr in self.parameters().items()}

    @classmethod
    def from_arrays(cls, arrays):
        def layers(part):
            out = []
            i = 0
            while f"{part}.{i}.weight" in arrays:
                out.append((np.array(arrays[f"{part}.{i}.weight"], dtype=np.float64),
                            np.array(arrays[f"{part}.{i}.bias"], dtype=np.float64)))
                i += 1
            if not out:
                raise ValueError(f"no {part} layers in arrays")
            last = len(out) - 1
            return [DenseLayer(W, b, IDENTITY if j == last else RELU)
                    for j, (W, b) in enumerate(out)]
        return cls(layers("encoder"), layers("decoder"))


def ae_backward(x_aug, autoencoder: Autoencoder):
    return autoencoder.backward(x_aug)


# ---------------------------------------------------------------------------
# augmentation

@dataclass
class AugmentSpec:
    mode: str = "vector"                  # "image", "vector" or "none"
    max_shift_px: int = 2
    max_rotate_deg: float = 10.0
    noise_sigma: float = 0.01
    seed: int = 0
    image_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.mode not in ("image", "vector", "none"):
            raise ValueError(f"unknown augmentation mode {self.mode!r}")
        if self.max_shift_px < 0 or self.max_rotate_deg < 0 or self.noise_sigma < 0:
            raise ValueError("augmentation magnitudes must be non-negative")


def shift_rotate_images(imgs, shifts, angles_deg):
    """Nearest-neighbour shift + rotation of a (n, H, W) stack, zero fill.

    ``shifts`` is (n, 2) of integer (dx, dy): positive dx moves content right,
    positive dy moves it down. Rotation is about the image centre.
    """
    n, H, W = imgs.shape
    rows, cols = np.mgrid[0:H, 0:W]
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    theta = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))[:, None, None]
    dx = np.asarray(shifts[:, 0], dtype=np.float64)[:, None, None]
    dy = np.asarray(shifts[:, 1], dtype=np.float64)[:, None, None]
    # inverse map: undo shift, then undo rotation
    yr = rows[None] - dy - cy
    xr = cols[None] - dx - cx
    cos, sin = np.cos(theta), np.sin(theta)
    src_x = np.rint(cos * xr + sin * yr + cx).astype(np.int64)
    src_y = np.rint(-sin * xr + cos * yr + cy).astype(np.int64)
    valid = (src_x >= 0) & (src_x < W) & (src_y >= 0) & (src_y < H)
    out = np.zeros_like(imgs)
    sample = np.broadcast_to(np.arange(n)[:, None, None], src_x.shape)
    out[valid] = imgs[sample[valid], src_y[valid], src_x[valid]]
    return out


def augment(x, spec: AugmentSpec, rng=None):
    """Random transformation of a batch; reproducible from ``spec.seed`` or ``rng``."""
    x = np.asarray(x, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.mode == "none":
        return x.copy()
    if spec.mode == "vector":
        if spec.noise_sigma == 0:
            return x.copy()
        return x + rng.normal(scale=spec.noise_sigma, size=x.shape)
    if spec.image_shape is None:
        raise ValueError("image augmentation needs image_shape (H, W)")
    H, W = spec.image_shape
    if H * W != x.shape[1]:
        raise ValueError(f"image_shape {spec.image_shape} does not match feature dim {x.shape[1]}")
    n = x.shape[0]
    s = spec.max_shift_px
    shifts = rng.integers(-s, s + 1, size=(n, 2))
    angles = rng.uniform(-spec.max_rotate_deg, spec.max_rotate_deg, size=n)
    return shift_rotate_images(x.reshape(n, H, W), shifts, angles).reshape(n, H * W)


# ---------------------------------------------------------------------------
# optimization

class Adam:
    def __init__(self, params: Dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: Dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class PretrainConfig:
    epochs: int = 500
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: AugmentSpec = field(default_factory=lambda: AugmentSpec(mode="none"))


def pretrain(x, autoencoder: Autoencoder, config: PretrainConfig):
    """Minimize reconstruction loss of augmented inputs with Adam (in place).

    Returns the autoencoder and the per-epoch mean loss.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    rng = np.random.default_rng(config.seed)
    opt = Adam(autoencoder.parameters(), config.lr, config.beta1, config.beta2, config.eps)
    losses = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            xb = augment(x[perm[start:start + config.batch_size]], config.augment, rng)
            loss, grads = autoencoder.backward(xb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"reconstruction loss became {loss} at epoch {epoch}, batch offset {start}")
            opt.step(grads)
            total += loss * xb.shape[0]
        losses.append(total / n)
        logger.debug("pretrain epoch %d loss %.6f", epoch, losses[-1])
    return autoencoder, losses
