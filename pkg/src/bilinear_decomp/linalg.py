"""Dense symmetric eigendecomposition, SVD and pseudo-inverse.

Everything here runs in float64. The eigensolver is cyclic two-sided
Jacobi with a compiled sweep. The SVD is one-sided (Hestenes) Jacobi
driven by a round-robin pair ordering: each round rotates n/2 disjoint
column pairs at once as a few vectorized slice updates.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from .errors import ConvergenceError, DimensionError

MAX_SWEEPS = 100
EIG_TOL = 1e-12
SYMMETRY_TOL = 1e-8
DEFAULT_RCOND = 1e-12
# squared column norm (relative to the largest entry) treated as exactly zero
_TINY = 1e-300


@dataclass(frozen=True)
class EigenResult:
    """Eigenpairs of a symmetric matrix.

    ``eigenvalues`` is sorted descending by signed value and
    ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(s) @ v.T`` with ``s`` descending."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self, rank=None):
        r = len(self.s) if rank is None else rank
        return (self.u[:, :r] * self.s[:r]) @ self.v[:, :r].T


@lru_cache(maxsize=64)
def _round_robin(n):
    """Pair schedule covering every column pair exactly once per sweep; n even."""
    order = list(range(n))
    rounds = []
    for _ in range(n - 1):
        h = n // 2
        p = np.array(order[:h], dtype=np.intp)
        q = np.array(order[::-1][:h], dtype=np.intp)
        rounds.append((p, q))
        order = [order[0], order[-1]] + order[1:-1]
    return tuple(rounds)


class _Blocked:
    """Tracks a working permutation so each round's pairs are contiguous.

    Position ``i < h`` is paired with position ``h + i``; a rotation round is
    then a few slice operations on two half blocks.
    """

    def __init__(self, n):
        self.label = np.arange(n)
        self.where = np.arange(n)

    def perm_for(self, p, q):
        perm = np.concatenate([self.where[p], self.where[q]])
        self.label = self.label[perm]
        self.where[self.label] = np.arange(len(perm))
        return perm


def _rotate_cols(m, h, c, s):
    x = m[:, :h].copy()
    y = m[:, h:]
    m[:, :h] = x * c - y * s
    m[:, h:] = x * s + y * c


def _as_matrix(a, name="matrix"):
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def _off_norm(a):
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


@numba.njit(cache=True)
def _jacobi_sweep(a, v):
    n = a.shape[0]
    for p in range(n - 1):
        for q in range(p + 1, n):
            apq = a[p, q]
            if apq == 0.0:
                continue
            tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            if tau >= 0.0:
                t = 1.0 / (tau + math.hypot(1.0, tau))
            else:
                t = -1.0 / (math.hypot(1.0, tau) - tau)
            c = 1.0 / math.sqrt(1.0 + t * t)
            s = t * c
            for k in range(n):
                akp = a[k, p]
                akq = a[k, q]
                a[k, p] = c * akp - s * akq
                a[k, q] = s * akp + c * akq
            for k in range(n):
                apk = a[p, k]
                aqk = a[q, k]
                a[p, k] = c * apk - s * aqk
                a[q, k] = s * apk + c * aqk
            for k in range(n):
                vkp = v[k, p]
                vkq = v[k, q]
                v[k, p] = c * vkp - s * vkq
                v[k, q] = s * vkp + c * vkq


def eig_symmetric(q, max_sweeps=MAX_SWEEPS, tol=EIG_TOL):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi.

    Converges when the off-diagonal Frobenius norm drops to
    ``tol * ||q||_F``. Raises :class:`ConvergenceError` after
    ``max_sweeps`` sweeps.
    """
    a = _as_matrix(q, "q")
    n, m = a.shape
    if n != m:
        raise DimensionError(f"eig_symmetric needs a square matrix, got {a.shape}")
    if n and np.max(np.abs(a - a.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(a))):
        raise ValueError("eig_symmetric input is not symmetric; symmetrize first")
    a = 0.5 * (a + a.T)
    # unit-peak scaling keeps rotations clear of underflow on tiny inputs
    peak = float(np.max(np.abs(a))) if n else 0.0
    scale = peak if peak > 0.0 else 1.0
    a = np.ascontiguousarray(a / scale)
    v = np.eye(n)
    target = tol * float(np.linalg.norm(a))
    sweeps = 0
    off = _off_norm(a) if n else 0.0
    while off > target:
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {off:.3e}, target {target:.3e})",
                residual=off,
            )
        _jacobi_sweep(a, v)
        sweeps += 1
        off = _off_norm(a)
    values = np.diag(a) * scale
    order = np.argsort(-values, kind="stable")
    return EigenResult(values[order], v[:, order], sweeps)


def _complete_orthonormal(basis, n):
    """Append orthonormal columns to ``basis`` (n x r) until it has n columns."""
    cols = [basis[:, j] for j in range(basis.shape[1])]
    for e in np.eye(n):
        if len(cols) == n:
            break
        w = e.copy()
        for _ in range(2):
            for c in cols:
                w -= (c @ w) * c
        norm = np.linalg.norm(w)
        if norm > 1e-8:
            cols.append(w / norm)
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def _svd_tall(a, max_sweeps):
    m, n = a.shape
    peak = float(np.max(np.abs(a))) if a.size else 0.0
    if peak == 0.0:
        return _complete_orthonormal(np.zeros((m, 0)), m)[:, :n], np.zeros(n), np.eye(n)
    padded = n + (n % 2)
    g = np.pad(a / peak, ((0, 0), (0, padded - n)))
    h = padded // 2
    v = np.eye(padded)
    track = _Blocked(padded)
    tol = max(m, 1) * np.finfo(np.float64).eps
    for sweep in range(max_sweeps + 1):
        worst = 0.0
        for p, q in _round_robin(padded):
            perm = track.perm_for(p, q)
            g = g[:, perm]
            v = v[:, perm]
            gp, gq = g[:, :h], g[:, h:]
            alpha = np.einsum("ij,ij->j", gp, gp)
            beta = np.einsum("ij,ij->j", gq, gq)
            gamma = np.einsum("ij,ij->j", gp, gq)
            denom = np.sqrt(alpha) * np.sqrt(beta)
            live = (alpha > _TINY) & (beta > _TINY) & (np.abs(gamma) > tol * denom)
            if not live.any():
                continue
            worst = max(worst, float(np.max(np.abs(gamma[live]) / denom[live])))
            safe = np.where(live, gamma, 1.0)
            with np.errstate(over="ignore"):
                zeta = (beta - alpha) / (2.0 * safe)
                sign = np.where(zeta >= 0.0, 1.0, -1.0)
                t = np.where(live, sign / (np.abs(zeta) + np.hypot(1.0, zeta)), 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            _rotate_cols(g, h, c, t * c)
            _rotate_cols(v, h, c, t * c)
        if worst == 0.0:
            break
        if sweep == max_sweeps:
            raise ConvergenceError(
                f"one-sided Jacobi did not converge in {max_sweeps} sweeps "
                f"(max column cosine {worst:.3e})",
                residual=worst,
            )
    back = track.where[:n]
    g = g[:, back]
    v = v[:n][:, back]
    sigma = np.linalg.norm(g, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, g, v = sigma[order], g[:, order], v[:, order]
    nonzero = sigma > np.sqrt(_TINY)
    sigma = np.where(nonzero, sigma, 0.0)
    u = np.zeros((m, n))
    u[:, nonzero] = g[:, nonzero] / sigma[nonzero]
    r = int(nonzero.sum())
    if r < n:
        u = _complete_orthonormal(u[:, :r], m)[:, :n]
    return u, sigma * peak, v


def svd(a, max_sweeps=MAX_SWEEPS):
    """Thin SVD by one-sided (Hestenes) Jacobi.

    Returns ``SvdResult(u, s, v)`` with ``k = min(rows, cols)`` columns in
    ``u`` and ``v``. Columns belonging to exactly-zero singular values are
    completed to an orthonormal set.
    """
    a = _as_matrix(a, "a")
    m, n = a.shape
    if m >= n:
        u, s, v = _svd_tall(a, max_sweeps)
    else:
        v, s, u = _svd_tall(a.T, max_sweeps)
    return SvdResult(u, s, v)


def pseudo_inverse(u, rcond=DEFAULT_RCOND):
    """Moore-Penrose pseudo-inverse through :func:`svd`.

    Singular values below ``rcond * s_max`` are treated as zero. For a
    matrix of full row rank, ``u @ pinv`` is the identity; for a
    rank-deficient one it is only the projector onto the column space.
    """
    res = svd(u)
    if res.s.size == 0 or res.s[0] == 0.0:
        return np.zeros((np.shape(u)[1], np.shape(u)[0]))
    keep = res.s > rcond * res.s[0]
    inv = np.zeros_like(res.s)
    inv[keep] = 1.0 / res.s[keep]
    return (res.v * inv) @ res.u.T


def numerical_rank(a, rcond=DEFAULT_RCOND):
    s = svd(a).s
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rcond * s[0]))
