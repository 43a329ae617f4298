"""Bigram and skip-trigram readouts computed from weights alone.

Tokens enter as embedding columns ``E[:, t]``; outputs are read through the
unembedding rows ``U[c]``. Nothing here runs attention: the OV matrix of a
head is supplied directly.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SizeGuardError
from .model import BilinearLayer, reduce

MAX_VOCAB = 8192


@dataclass
class TokenWeights:
    """Embedding ``(d_model, n_vocab)``, unembedding ``(n_vocab, d_model)`` and one bilinear layer."""

    embed: np.ndarray
    unembed: np.ndarray
    layer: BilinearLayer
    ov: np.ndarray = None

    def __post_init__(self):
        self.embed = np.asarray(self.embed, dtype=np.float64)
        self.unembed = np.asarray(self.unembed, dtype=np.float64)
        d_model, n_vocab = self.embed.shape
        if self.unembed.shape != (n_vocab, d_model):
            raise DimensionError(
                f"unembed {self.unembed.shape} does not match embed {self.embed.shape}"
            )
        if self.layer.d_in != d_model or self.layer.d_out != d_model:
            raise DimensionError(
                f"bilinear layer maps {self.layer.d_in}->{self.layer.d_out}, need {d_model}->{d_model}"
            )
        if self.ov is not None:
            self.ov = _check_ov(self.ov, d_model)

    @property
    def n_vocab(self):
        return self.embed.shape[1]

    @property
    def d_model(self):
        return self.embed.shape[0]


def _check_ov(ov, d_model):
    ov = np.asarray(ov, dtype=np.float64)
    if ov.shape != (d_model, d_model):
        raise DimensionError(f"OV matrix must be {d_model}x{d_model}, got {ov.shape}")
    return ov


def _guard(tw, max_vocab):
    if tw.n_vocab > max_vocab:
        raise SizeGuardError(f"vocabulary of {tw.n_vocab} exceeds the guard of {max_vocab}")


@dataclass(frozen=True)
class NgramTable:
    """Rows of ``(context, output, score)`` sorted by score, descending."""

    context: np.ndarray
    output: np.ndarray
    score: np.ndarray

    def __len__(self):
        return len(self.score)

    def rows(self):
        for r in range(len(self)):
            yield r, int(self.context[r]), int(self.output[r]), float(self.score[r])


def top_entries(scores, top_n):
    """Largest entries of ``scores[output, context]``; ties keep (context, output) order."""
    n_out, n_ctx = scores.shape
    flat = scores.T.ravel()
    order = np.argsort(-flat, kind="stable")[:top_n]
    ctx, out = np.divmod(order, n_out)
    return NgramTable(ctx, out, flat[order])


def residual_scores(tw):
    """``S[c, t] = U[c] . E[:, t]``: the direct embed-to-unembed path."""
    return tw.unembed @ tw.embed


def mlp_diagonal_scores(tw):
    """``S[c, t] = e_t^T Q_c e_t``: each token interacting with itself in the MLP.

    This reads the diagonal ``B_{:tt}`` of the interaction tensor in the
    token basis and projects it on every unembedding row.
    """
    layer = tw.layer
    diag = (layer.W @ tw.embed) * (layer.V @ tw.embed)
    if layer.P is not None:
        diag = layer.P @ diag
    return tw.unembed @ diag


def residual_bigrams(tw, top_n=20, max_vocab=MAX_VOCAB):
    _guard(tw, max_vocab)
    return top_entries(residual_scores(tw), top_n)


def mlp_diagonal_bigrams(tw, top_n=20, combined=False, max_vocab=MAX_VOCAB):
    """MLP self-interaction bigrams, optionally added to the residual path."""
    _guard(tw, max_vocab)
    scores = mlp_diagonal_scores(tw)
    if combined:
        scores = scores + residual_scores(tw)
    return top_entries(scores, top_n)


def following(scores, token, top_n=10):
    """Most likely next tokens after ``token`` (a column read)."""
    col = scores[:, token]
    order = np.argsort(-col, kind="stable")[:top_n]
    return order, col[order]


def preceding(scores, token, top_n=10):
    """Most likely previous tokens for output ``token`` (the transposed read)."""
    row = scores[token]
    order = np.argsort(-row, kind="stable")[:top_n]
    return order, row[order]


def skip_trigram_matrix(tw, head_ov, out_token):
    """``S[A, B] = 2 a^T Q_c b`` with ``a = OV E[:, A]`` and ``b = E[:, B]``.

    The factor 2 collects both cross terms of the symmetric quadratic form
    evaluated on ``a + b``.
    """
    ov = _check_ov(head_ov, tw.d_model)
    q = reduce(tw.layer, tw.unembed[out_token]).q
    virtual = ov @ tw.embed
    return 2.0 * virtual.T @ q @ tw.embed


def skip_trigram_scores(tw, head_ov, out_token, top_n=20, max_vocab=MAX_VOCAB):
    """Top (virtual A, direct B) pairs for output token ``out_token``.

    In the returned table ``context`` is the attended token A and ``output``
    the direct token B.
    """
    _guard(tw, max_vocab)
    scores = skip_trigram_matrix(tw, head_ov, out_token)
    # top_entries indexes scores[output, context]; transpose so A is context.
    return top_entries(scores.T, top_n)
