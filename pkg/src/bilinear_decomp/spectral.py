"""Truncated spectral models, activation ranking and cross-model similarity."""
from dataclasses import dataclass, replace

import numpy as np

from .decompose import class_spectrum
from .errors import UnsupportedOperationError

DISPLAY_TOP_INPUTS = 16


def model_spectra(model):
    """Last-layer spectrum for every class of a one-layer model."""
    return [class_spectrum(model, c) for c in range(model.n_classes)]


@dataclass(frozen=True)
class SpectralModel:
    """Per-class eigenpairs kept after truncation, ordered by |lam| descending.

    ``eigenvalues[c]`` has shape ``(k,)`` and ``eigenvectors[c]`` shape
    ``(d_model, k)``.
    """

    eigenvalues: list
    eigenvectors: list
    embed: np.ndarray
    k: int


def _by_magnitude(spectrum):
    return np.argsort(-np.abs(spectrum.eigenvalues), kind="stable")


def _require_one_layer(model):
    if len(model.layers) != 1:
        raise UnsupportedOperationError(
            f"truncation needs a one-layer model, got {len(model.layers)} layers; use decompile"
        )


def truncate(model, k, spectra=None):
    """Keep the top-``k`` eigenpairs per class by eigenvalue magnitude."""
    _require_one_layer(model)
    if k < 0:
        raise ValueError("k must be non-negative")
    spectra = model_spectra(model) if spectra is None else spectra
    values, vectors = [], []
    for spec in spectra:
        keep = _by_magnitude(spec)[:k]
        values.append(spec.eigenvalues[keep])
        vectors.append(spec.eigenvectors[:, keep])
    return SpectralModel(values, vectors, model.embed, min(k, model.d_model))


def spectral_logits(sm, x):
    """``logit_c = sum_i lam_i (v_i . E x)^2`` over the kept eigenpairs."""
    x = np.asarray(x, dtype=np.float64)
    xe = x @ sm.embed.T
    cols = [((xe @ vecs) ** 2) @ vals for vals, vecs in zip(sm.eigenvalues, sm.eigenvectors)]
    return np.stack(cols, axis=-1)


def accuracy_sweep(model, dataset, ks, spectra=None, batch=2000):
    """``[(k, accuracy), ...]`` for truncated spectral models.

    Ties in the argmax go to the lowest class index, so ``k = 0`` predicts
    class 0 everywhere.
    """
    _require_one_layer(model)
    spectra = model_spectra(model) if spectra is None else spectra
    ks = [int(k) for k in ks]
    correct = np.zeros(len(ks))
    for start in range(0, len(dataset), batch):
        xe = dataset.images[start:start + batch] @ model.embed.T
        labels = dataset.labels[start:start + batch]
        logits = np.zeros((len(ks), len(labels), len(spectra)))
        for c, spec in enumerate(spectra):
            order = _by_magnitude(spec)
            terms = spec.eigenvalues[order] * (xe @ spec.eigenvectors[:, order]) ** 2
            cum = np.concatenate([np.zeros((len(xe), 1)), np.cumsum(terms, axis=1)], axis=1)
            for j, k in enumerate(ks):
                logits[j, :, c] = cum[:, min(k, terms.shape[1])]
        correct += (np.argmax(logits, axis=2) == labels).sum(axis=1)
    n = max(len(dataset), 1)
    return [(k, float(c / n)) for k, c in zip(ks, correct)]


@dataclass(frozen=True)
class RankedFeature:
    index: int
    eigenvalue: float
    mean_activation: float
    top_inputs: np.ndarray


def _input_activations(spectrum, images):
    if spectrum.input_features is None:
        raise UnsupportedOperationError("activation ranking needs a first-layer spectrum")
    return spectrum.eigenvalues * (np.asarray(images) @ spectrum.input_features) ** 2


def rank_by_mean_activation(spectrum, images, sign="positive", n_top_inputs=3):
    """Rank same-signed eigenfeatures by their mean activation over ``images``.

    Positive mode orders lam > 0 features by descending mean activation;
    negative mode orders lam < 0 features from most negative up. Equal means
    fall back to descending |lam|. Each entry lists the indices of the
    ``n_top_inputs`` strongest-activating images.
    """
    if sign not in ("positive", "negative"):
        raise ValueError("sign must be 'positive' or 'negative'")
    acts = _input_activations(spectrum, images)
    means = acts.mean(axis=0)
    lam = spectrum.eigenvalues
    chosen = np.flatnonzero(lam > 0 if sign == "positive" else lam < 0)
    key = -means[chosen] if sign == "positive" else means[chosen]
    order = chosen[np.lexsort((-np.abs(lam[chosen]), key))]
    ranked = []
    for i in order:
        strength = np.abs(acts[:, i])
        top = np.argsort(-strength, kind="stable")[:n_top_inputs]
        ranked.append(RankedFeature(int(i), float(lam[i]), float(means[i]), top))
    return ranked


def fix_sign(spectrum, images, top=DISPLAY_TOP_INPUTS):
    """Flip eigenvectors so their projections on the top inputs average >= 0.

    The top inputs of a feature are the ``top`` images with the largest
    squared projection. Flipping leaves every activation unchanged.
    """
    proj = np.asarray(images) @ spectrum.input_features
    idx = np.argsort(-proj ** 2, axis=0, kind="stable")[:top]
    means = np.take_along_axis(proj, idx, axis=0).mean(axis=0)
    flip = np.where(means < 0.0, -1.0, 1.0)
    return replace(
        spectrum,
        eigenvectors=spectrum.eigenvectors * flip,
        input_features=spectrum.input_features * flip,
    )


def positive_input_features(spectrum):
    """Unit-norm input-basis features with lam > 0, largest lam first (rows)."""
    keep = np.flatnonzero(spectrum.eigenvalues > 0)
    feats = spectrum.input_features[:, keep].T
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return feats / np.where(norms > 0, norms, 1.0)


@dataclass(frozen=True)
class SimilarityReport:
    """``similarity[c][r]`` is the best |cosine| of feature r of class c in A."""

    similarity: list
    match_index: list

    def mean_top(self, top):
        return float(np.mean(np.concatenate([s[:top] for s in self.similarity])))

    def per_class_mean(self, top):
        return [float(np.mean(s[:top])) for s in self.similarity]

    def rows(self, top=None):
        for c, (sims, idx) in enumerate(zip(self.similarity, self.match_index)):
            n = len(sims) if top is None else min(top, len(sims))
            for r in range(n):
                yield c, r, float(sims[r]), int(idx[r])


def best_match_similarity(features_a, features_b):
    """Best absolute cosine match of each row of ``features_a[c]`` in ``features_b[c]``."""
    sims, idxs = [], []
    for fa, fb in zip(features_a, features_b):
        fa = np.atleast_2d(fa)
        fb = np.atleast_2d(fb)
        if fa.size == 0 or fb.size == 0:
            sims.append(np.zeros(len(fa)))
            idxs.append(np.full(len(fa), -1))
            continue
        cos = np.clip(np.abs(fa @ fb.T), 0.0, 1.0)
        idxs.append(np.argmax(cos, axis=1))
        sims.append(cos.max(axis=1))
    return SimilarityReport(sims, idxs)


def model_similarity(model_a, model_b, spectra_a=None, spectra_b=None):
    spectra_a = model_spectra(model_a) if spectra_a is None else spectra_a
    spectra_b = model_spectra(model_b) if spectra_b is None else spectra_b
    return best_match_similarity(
        [positive_input_features(s) for s in spectra_a],
        [positive_input_features(s) for s in spectra_b],
    )


def mean_pairwise_similarity(spectra_per_model, top=5):
    """Mean top-``top`` best-match similarity over all ordered pairs of distinct models."""
    feats = [[positive_input_features(s) for s in spectra] for spectra in spectra_per_model]
    scores = [
        best_match_similarity(fa, fb).mean_top(top)
        for i, fa in enumerate(feats)
        for j, fb in enumerate(feats)
        if i != j
    ]
    return float(np.mean(scores))
