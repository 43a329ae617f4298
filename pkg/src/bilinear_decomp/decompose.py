"""Eigendecomposition of bilinear layers and whole models.

A single layer reduced along an output direction ``u`` gives a symmetric
interaction matrix ``Q``; its eigenpairs turn the layer output into a sum
of squared projections ``sum_i lam_i (v_i . h)^2``. Stacking that step from
the unembedding back to the embedding decompiles a multi-layer model into a
tree whose leaves are input-space features.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, RankDeficiencyError, SizeGuardError
from .linalg import DEFAULT_RCOND, eig_symmetric, numerical_rank, pseudo_inverse, svd
from .model import reduce, symmetrize

DEFAULT_BRANCHING = 8
HOSVD_MAX_D_IN = 64


@dataclass(frozen=True)
class EigenFeature:
    eigenvalue: float
    vector: np.ndarray
    input_feature: np.ndarray = None
    output_index: int = None
    rank: int = 0


@dataclass(frozen=True)
class Spectrum:
    """All eigenpairs of one interaction matrix, signed-descending.

    ``input_features`` (first layer only) holds ``E.T @ v_i`` as columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    u: np.ndarray
    layer_index: int = 0
    input_features: np.ndarray = None
    output_index: int = None

    def __len__(self):
        return len(self.eigenvalues)

    def feature(self, i):
        inp = None if self.input_features is None else self.input_features[:, i]
        return EigenFeature(float(self.eigenvalues[i]), self.eigenvectors[:, i], inp, self.output_index, i)

    @property
    def features(self):
        return [self.feature(i) for i in range(len(self))]

    def matrix(self):
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T

    def activations(self, h):
        """Per-eigenvector activations ``lam_i (v_i . h)^2`` for layer inputs ``h``."""
        return self.eigenvalues * (np.asarray(h) @ self.eigenvectors) ** 2


def spectrum_for_output(model, layer_index, u, output_index=None):
    """Spectrum of ``reduce(layer, u)`` for layer ``layer_index`` (0-based)."""
    layer = model.layers[layer_index]
    q = reduce(layer, u).q
    eig = eig_symmetric(q)
    inputs = model.embed.T @ eig.eigenvectors if layer_index == 0 else None
    return Spectrum(eig.eigenvalues, eig.eigenvectors, np.asarray(u, dtype=np.float64),
                    layer_index, inputs, output_index)


def class_spectrum(model, c, layer_index=None):
    """Spectrum for class ``c``'s unembedding row at the last layer by default."""
    if layer_index is None:
        layer_index = len(model.layers) - 1
    return spectrum_for_output(model, layer_index, model.unembed[c], output_index=c)


def eigenvector_activation(feature, x):
    """``lam (v . x)^2`` with ``x`` already in the layer's input space."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != feature.vector.shape[0]:
        raise DimensionError(f"input dim {x.shape[-1]} != eigenvector dim {feature.vector.shape[0]}")
    return feature.eigenvalue * (x @ feature.vector) ** 2


@dataclass
class TreeNode:
    path: tuple
    eigenvalue: float
    vector: np.ndarray
    layer_index: int
    children: list = field(default_factory=list)
    input_feature: np.ndarray = None

    @property
    def is_leaf(self):
        return self.layer_index == 0


@dataclass
class DecompileTree:
    """Decompilation of one output direction; ``children`` are last-layer eigenvectors."""

    output_index: int
    u: np.ndarray
    branching: int
    n_layers: int
    children: list = field(default_factory=list)

    def nodes(self):
        stack = list(reversed(self.children))
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def leaves(self):
        return [n for n in self.nodes() if n.is_leaf]


def _top_children(eigenvalues, branching):
    keep = np.argsort(-np.abs(eigenvalues), kind="stable")[:branching]
    return np.sort(keep)


def _expand(model, layer_index, u, path, branching):
    spec = spectrum_for_output(model, layer_index, u)
    nodes = []
    for i in _top_children(spec.eigenvalues, branching):
        node = TreeNode(path + (int(i),), float(spec.eigenvalues[i]), spec.eigenvectors[:, i], layer_index)
        if layer_index == 0:
            node.input_feature = model.embed.T @ node.vector
        else:
            node.children = _expand(model, layer_index - 1, node.vector, node.path, branching)
        nodes.append(node)
    return nodes


def decompile_output(model, u, branching=DEFAULT_BRANCHING, output_index=None):
    if branching < 1:
        raise ValueError("branching must be >= 1")
    top = len(model.layers) - 1
    children = _expand(model, top, np.asarray(u, dtype=np.float64), (), branching)
    return DecompileTree(output_index, np.asarray(u, dtype=np.float64), branching, len(model.layers), children)


def decompile(model, branching=DEFAULT_BRANCHING):
    """One tree per class, keeping the ``branching`` largest-|lam| children per node.

    Children are stored in signed-descending eigenvalue order and carry their
    index in the full spectrum as the last element of ``path``.
    """
    return [decompile_output(model, model.unembed[c], branching, c) for c in range(model.n_classes)]


def _node_value(node, x):
    if node.is_leaf:
        return x @ node.input_feature
    return sum(child.eigenvalue * _node_value(child, x) ** 2 for child in node.children)


def evaluate_tree(tree, x):
    """Logit reconstructed from the tree for raw input(s) ``x``.

    Exact for full branching; an approximation otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    total = np.zeros(x.shape[:-1])
    for child in tree.children:
        total = total + child.eigenvalue * _node_value(child, x) ** 2
    return total


@dataclass(frozen=True)
class ChangeOfBasis:
    """``B = sum_k c_k (x) Q_k`` over a complete set of output directions.

    ``u_set`` rows are the directions ``u_k``; ``coefficients`` rows are the
    matching pseudo-inverse vectors ``c_k`` (rows of ``pinv(u_set.T)``).
    """

    u_set: np.ndarray
    coefficients: np.ndarray
    interactions: np.ndarray

    @property
    def delta(self):
        """``delta[k, j] = c_k . u_j``; the identity when m == d."""
        return self.coefficients @ self.u_set.T

    @property
    def completeness(self):
        """``U @ U+``; the d x d identity whenever the directions span the space."""
        return self.u_set.T @ self.coefficients

    def tensor_slice(self, a):
        """Interaction matrix of output coordinate ``a`` rebuilt from the pairs."""
        return np.tensordot(self.coefficients[:, a], self.interactions, axes=1)

    def recovered(self, k):
        """Reduce the rebuilt tensor along ``u_k``."""
        return np.tensordot(self.delta[:, k], self.interactions, axes=1)


def change_of_basis(layer, u_set, rcond=DEFAULT_RCOND):
    u_set = np.asarray(u_set, dtype=np.float64)
    if u_set.ndim != 2 or u_set.shape[1] != layer.d_out:
        raise DimensionError(f"u_set must be (m, {layer.d_out}), got {u_set.shape}")
    rank = numerical_rank(u_set, rcond)
    if rank < layer.d_out:
        raise RankDeficiencyError(
            f"output directions have numerical rank {rank}, need {layer.d_out}", rank
        )
    coefficients = pseudo_inverse(u_set.T, rcond)
    interactions = np.stack([reduce(layer, u).q for u in u_set])
    return ChangeOfBasis(u_set, coefficients, interactions)


@dataclass(frozen=True)
class HosvdResult:
    singular_values: np.ndarray
    output_directions: np.ndarray
    interactions: np.ndarray
    flattened: np.ndarray

    def reconstruct(self, rank=None):
        r = len(self.singular_values) if rank is None else rank
        d2 = self.flattened.shape[1]
        right = self.interactions[:r].reshape(r, d2)
        return (self.output_directions[:, :r] * self.singular_values[:r]) @ right


def flatten_layer(layer):
    """``(d_out, d_in**2)`` matrix whose row ``a`` is vec(sym(B_a))."""
    b = np.einsum("ai,aj->aij", layer.W, layer.V)
    b = 0.5 * (b + b.transpose(0, 2, 1))
    flat = b.reshape(layer.d_hidden, -1)
    return flat if layer.P is None else layer.P @ flat


def _symmetric_fill(existing, d):
    """A unit symmetric matrix Frobenius-orthogonal to ``existing``."""
    for i in range(d):
        for j in range(i, d):
            cand = np.zeros((d, d))
            cand[i, j] = cand[j, i] = 1.0
            for _ in range(2):
                for q in existing:
                    cand -= np.sum(cand * q) * q
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                return cand / norm
    return np.zeros((d, d))


def hosvd(layer, max_d_in=HOSVD_MAX_D_IN):
    """SVD of the layer tensor flattened to ``d_out x d_in^2``.

    Right singular vectors are folded back into symmetric, unit-Frobenius
    interaction matrices.
    """
    d = layer.d_in
    if d > max_d_in:
        raise SizeGuardError(f"d_in={d} exceeds the HOSVD guard of {max_d_in}")
    flat = flatten_layer(layer)
    res = svd(flat)
    mats = []
    for i in range(len(res.s)):
        q = symmetrize(res.v[:, i].reshape(d, d))
        norm = np.linalg.norm(q)
        q = q / norm if norm > 1e-8 else _symmetric_fill(mats, d)
        mats.append(q)
    return HosvdResult(res.s, res.u, np.array(mats).reshape(len(res.s), d, d), flat)
