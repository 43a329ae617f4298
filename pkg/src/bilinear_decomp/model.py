"""Bilinear MLP: layers, forward pass and interaction matrices.

A bilinear layer computes ``g(h) = P @ ((W @ h) * (V @ h))``. Along any
output direction ``u`` this is the quadratic form ``h.T @ Q @ h`` with the
symmetric interaction matrix ``Q = sym(W.T @ diag(P.T @ u) @ V)``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class BilinearLayer:
    W: np.ndarray
    V: np.ndarray
    P: np.ndarray = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape != self.V.shape:
            raise DimensionError(f"W {self.W.shape} and V {self.V.shape} must be equal 2-D shapes")
        if self.P is not None:
            self.P = np.asarray(self.P, dtype=np.float64)
            if self.P.ndim != 2 or self.P.shape[1] != self.W.shape[0]:
                raise DimensionError(
                    f"P {self.P.shape} does not accept hidden size {self.W.shape[0]}"
                )

    @property
    def d_in(self):
        return self.W.shape[1]

    @property
    def d_hidden(self):
        return self.W.shape[0]

    @property
    def d_out(self):
        return self.d_hidden if self.P is None else self.P.shape[0]

    def __call__(self, h):
        z = (h @ self.W.T) * (h @ self.V.T)
        return z if self.P is None else z @ self.P.T


@dataclass
class BilinearModel:
    """``logits = U @ g_n(... g_1(E @ x))`` without biases or normalization."""

    embed: np.ndarray
    layers: list
    unembed: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.embed = np.asarray(self.embed, dtype=np.float64)
        self.unembed = np.asarray(self.unembed, dtype=np.float64)
        self.layers = list(self.layers)
        dim = self.embed.shape[0]
        for k, layer in enumerate(self.layers):
            if layer.d_in != dim:
                raise DimensionError(
                    f"layer {k} expects input dim {layer.d_in}, previous stage gives {dim}"
                )
            dim = layer.d_out
        if self.unembed.shape[1] != dim:
            raise DimensionError(f"unembed expects {self.unembed.shape[1]} inputs, model gives {dim}")

    @property
    def d_input(self):
        return self.embed.shape[1]

    @property
    def d_model(self):
        return self.embed.shape[0]

    @property
    def n_classes(self):
        return self.unembed.shape[0]

    def parameters(self):
        """Name -> array mapping; the arrays are the live model storage."""
        params = {"embed": self.embed}
        for k, layer in enumerate(self.layers):
            params[f"layers.{k}.W"] = layer.W
            params[f"layers.{k}.V"] = layer.V
            if layer.P is not None:
                params[f"layers.{k}.P"] = layer.P
        params["unembed"] = self.unembed
        return params

    def copy(self):
        layers = [
            BilinearLayer(l.W.copy(), l.V.copy(), None if l.P is None else l.P.copy())
            for l in self.layers
        ]
        return BilinearModel(self.embed.copy(), layers, self.unembed.copy(), dict(self.meta))


def init_model(d_input, d_model, n_classes, n_layers=1, seed=0, d_hidden=None):
    """Gaussian init with std ``1/sqrt(fan_in)`` for every matrix."""
    rng = np.random.default_rng(seed)
    d_hidden = d_model if d_hidden is None else d_hidden

    def gauss(rows, cols):
        return rng.standard_normal((rows, cols)) / np.sqrt(cols)

    embed = gauss(d_model, d_input)
    layers = []
    for _ in range(n_layers):
        W, V = gauss(d_hidden, d_model), gauss(d_hidden, d_model)
        P = None if d_hidden == d_model else gauss(d_model, d_hidden)
        layers.append(BilinearLayer(W, V, P))
    return BilinearModel(embed, layers, gauss(n_classes, d_model))


def forward(model, x):
    """Logits for one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.d_input:
        raise DimensionError(f"input has {x.shape[-1]} features, model expects {model.d_input}")
    h = x @ model.embed.T
    for layer in model.layers:
        h = layer(h)
    return h @ model.unembed.T


def hidden_states(model, x):
    """Inputs to each bilinear layer followed by the final residual-free output."""
    h = np.asarray(x, dtype=np.float64) @ model.embed.T
    states = [h]
    for layer in model.layers:
        h = layer(h)
        states.append(h)
    return states


def fold_bias(weight, bias):
    """Append ``bias`` as an extra column so that ``[W b] @ [x, 1] == W x + b``."""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"bias length {bias.shape} does not match {weight.shape[0]} rows")
    return np.column_stack([weight, bias])


def symmetrize(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"symmetrize needs a square matrix, got {m.shape}")
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class InteractionMatrix:
    q: np.ndarray
    output_direction: np.ndarray


def interaction_matrix_for_neuron(layer, a):
    """Symmetrized ``w_a v_a^T`` for hidden neuron ``a`` of a projection-free layer."""
    if layer.P is not None:
        raise DimensionError("neuron interaction matrices need a layer without projection")
    if not 0 <= a < layer.d_hidden:
        raise IndexError(f"neuron {a} out of range for hidden size {layer.d_hidden}")
    q = symmetrize(np.outer(layer.W[a], layer.V[a]))
    u = np.zeros(layer.d_hidden)
    u[a] = 1.0
    return InteractionMatrix(q, u)


def reduce(layer, u):
    """Contract the layer's interaction tensor with output direction ``u``.

    Computed as ``sym(W.T @ diag(P.T u) @ V)``; the third-order tensor is
    never formed.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (layer.d_out,):
        raise DimensionError(f"output direction has shape {u.shape}, layer outputs {layer.d_out}")
    coeff = u if layer.P is None else layer.P.T @ u
    m = (layer.W.T * coeff) @ layer.V
    return InteractionMatrix(symmetrize(m), u)
