"""Training from scratch: softmax cross-entropy, backprop, AdamW, latent noise."""
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .dataset import BatchIterator, epoch_rng
from .errors import DimensionError
from .model import forward

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 100
    learning_rate: float = 1e-3
    weight_decay: float = 0.5
    latent_noise: float = 0.33
    lr_decay: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.latent_noise < 0:
            raise ValueError("latent_noise must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    model: object = None
    checkpoint: str = None


class _Noise:
    """Latent noise ``ratio * std(h) * z`` with per-sample element std."""

    def __init__(self, h, ratio, rng):
        self.h = h
        self.ratio = ratio
        self.std = h.std(axis=1, keepdims=True)
        self.z = rng.standard_normal(h.shape)
        self.out = h + ratio * self.std * self.z

    def backward(self, grad):
        # d std / d h = (h - mean) / (D * std); zero where std == 0.
        d = self.h.shape[1]
        safe = np.where(self.std > 0.0, self.std, 1.0)
        dstd = np.where(self.std > 0.0, (self.h - self.h.mean(axis=1, keepdims=True)) / (d * safe), 0.0)
        return grad + self.ratio * np.sum(grad * self.z, axis=1, keepdims=True) * dstd


def add_latent_noise(h, ratio, rng):
    """``h`` plus Gaussian noise scaled by ``ratio`` times each row's element std."""
    return _Noise(np.atleast_2d(np.asarray(h, dtype=np.float64)), ratio, rng).out


def _maybe_noise(h, ratio, rng):
    if ratio > 0.0:
        node = _Noise(h, ratio, rng)
        return node.out, node
    return h, None


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_gradients(model, images, labels, noise=0.0, rng=None):
    """Mean cross-entropy over the batch and its exact gradient per parameter.

    With ``noise > 0`` Gaussian latent noise is added to the raw input, the
    embedding output and every bilinear layer output. Gradients include the
    dependence of each noise scale on its vector's standard deviation.
    """
    x = np.atleast_2d(np.asarray(images, dtype=np.float64))
    labels = np.asarray(labels)
    if len(x) == 0:
        raise ValueError("empty batch")
    if x.shape[1] != model.d_input:
        raise DimensionError(f"batch has {x.shape[1]} features, model expects {model.d_input}")
    if noise > 0.0 and rng is None:
        rng = np.random.default_rng()
    n = len(x)

    x_in, _ = _maybe_noise(x, noise, rng)
    h, embed_noise = _maybe_noise(x_in @ model.embed.T, noise, rng)
    cache = []
    for layer in model.layers:
        left = h @ layer.W.T
        right = h @ layer.V.T
        z = left * right
        out = z if layer.P is None else z @ layer.P.T
        out_noisy, node = _maybe_noise(out, noise, rng)
        cache.append((h, left, right, z, node))
        h = out_noisy
    logits = h @ model.unembed.T

    logp = log_softmax(logits)
    loss = -float(np.mean(logp[np.arange(n), labels]))
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grads = {"unembed": dlogits.T @ h}
    dh = dlogits @ model.unembed
    for k in reversed(range(len(model.layers))):
        layer = model.layers[k]
        h_in, left, right, z, node = cache[k]
        if node is not None:
            dh = node.backward(dh)
        if layer.P is not None:
            grads[f"layers.{k}.P"] = dh.T @ z
            dh = dh @ layer.P
        dleft = dh * right
        dright = dh * left
        grads[f"layers.{k}.W"] = dleft.T @ h_in
        grads[f"layers.{k}.V"] = dright.T @ h_in
        dh = dleft @ layer.W + dright @ layer.V
    if embed_noise is not None:
        dh = embed_noise.backward(dh)
    grads["embed"] = dh.T @ x_in
    return loss, grads


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(params, grads, state, lr, weight_decay):
    """One in-place AdamW update with decoupled weight decay.

    ``state.step`` is incremented before bias correction, so the first call
    uses step 1.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + EPS)
    return params, state


def predict(model, images, batch=2000):
    images = np.asarray(images)
    out = np.empty(len(images), dtype=np.int64)
    for i in range(0, len(images), batch):
        out[i:i + batch] = np.argmax(forward(model, images[i:i + batch]), axis=1)
    return out


def accuracy(model, dataset):
    if len(dataset) == 0:
        return 0.0
    return float(np.mean(predict(model, dataset.images) == dataset.labels))


def train(model, dataset, config, validation=None, progress=None):
    """Train a copy of ``model``; the trained copy is ``report.model``.

    ``progress`` receives one ``epoch=... loss=... val_acc=... lr=...`` line
    per epoch.
    """
    if dataset.n_classes != model.n_classes:
        raise DimensionError(
            f"dataset has {dataset.n_classes} classes, model unembeds {model.n_classes}"
        )
    model = model.copy()
    report = TrainReport(model=model)
    params = model.parameters()
    state = AdamState.zeros_like(params)
    batches = BatchIterator(dataset, config.batch_size, config.seed)
    noise_rng = epoch_rng(config.seed, 0, stream=1)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        start = time.perf_counter()
        losses = []
        for index in batches.batch_indices(epoch):
            loss, grads = loss_and_gradients(
                model, dataset.images[index], dataset.labels[index], config.latent_noise, noise_rng
            )
            adamw_step(params, grads, state, lr, config.weight_decay)
            losses.append(loss)
        val = accuracy(model, validation) if validation is not None else float("nan")
        report.train_loss.append(float(np.mean(losses)))
        report.val_accuracy.append(val)
        report.seconds.append(time.perf_counter() - start)
        report.learning_rate.append(lr)
        if progress is not None:
            progress(f"epoch={epoch + 1} loss={report.train_loss[-1]:.6f} val_acc={val:.4f} lr={lr:.6g}")
        lr *= config.lr_decay
    return report
