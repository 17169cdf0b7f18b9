"""Order-3 tensor kernels and baseline CPD solvers.

Tensors are plain ndarrays of shape (n, m1, m2) stored row-first, which
keeps the mode-0 unfolding a simple reshape and makes the unfolding and
Khatri-Rao index conventions agree: a rank-one tensor ``a o b o c``
unfolds to ``a (b kron c)^T``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .linalg import khatri_rao

_MATERIALIZE_LIMIT = 1_000_000


@dataclass(frozen=True)
class CpdFactors:
    """Factors of a rank-r canonical polyadic model."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        r = self.A.shape[1]
        if self.B.shape[1] != r or self.C.shape[1] != r:
            raise ValueError("factors must share the column count")

    @property
    def rank(self):
        return self.A.shape[1]


def as_tensor3(T):
    A = np.asarray(T, dtype=float)
    if A.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("tensor contains non-finite entries")
    return A


def unfold1(T):
    """Mode-0 unfolding, shape (n, m1*m2); column (j, k) sits at j*m2 + k."""
    T = as_tensor3(T)
    return T.reshape(T.shape[0], -1)


def refold1(M, m1, m2):
    """Inverse of :func:`unfold1`."""
    M = np.asarray(M, dtype=float)
    return M.reshape(M.shape[0], m1, m2)


def unfold2(T):
    """Mode-1 unfolding, shape (m1, n*m2); column (i, k) sits at i*m2 + k."""
    T = as_tensor3(T)
    return np.moveaxis(T, 1, 0).reshape(T.shape[1], -1)


def unfold3(T):
    """Mode-2 unfolding, shape (m2, n*m1); column (i, j) sits at i*m1 + j."""
    T = as_tensor3(T)
    return np.moveaxis(T, 2, 0).reshape(T.shape[2], -1)


def cpd_reconstruct(factors):
    """Dense tensor of a CPD model."""
    A, B, C = factors.A, factors.B, factors.C
    return np.einsum("il,jl,kl->ijk", A, B, C)


def mttkrp(T, B, C):
    """Matricized-tensor times Khatri-Rao product, ``unfold1(T) @ (B kr C)``.

    The Khatri-Rao product is materialized only when it has at most 1e6
    rows; above that the product is contracted directly on the tensor.
    """
    T = as_tensor3(T)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    if T.shape[1] != B.shape[0] or T.shape[2] != C.shape[0]:
        raise ValueError(
            f"tensor {T.shape} does not conform to factors {B.shape}, {C.shape}"
        )
    if B.shape[0] * C.shape[0] <= _MATERIALIZE_LIMIT:
        return unfold1(T) @ khatri_rao(B, C)
    return np.einsum("ijk,jl,kl->il", T, B, C, optimize=True)


def _exact_ls_factor(unfolded, kr_gram, mtt):
    """Exact minimizer of ``||unfolded - F (KR)^T||`` given the Gram pieces."""
    try:
        cf = scipy.linalg.cho_factor(kr_gram, lower=True)
        return scipy.linalg.cho_solve(cf, mtt.T).T
    except scipy.linalg.LinAlgError:
        out, *_ = np.linalg.lstsq(kr_gram, mtt.T, rcond=None)
        return out.T


def _hals_factor(F, gram, mtt):
    """One pass of columnwise nonnegative updates on factor ``F``."""
    F = F.copy()
    for l in range(F.shape[1]):
        denom = max(gram[l, l], np.finfo(float).tiny)
        col = F[:, l] + (mtt[:, l] - F @ gram[:, l]) / denom
        col = np.maximum(col, 0.0)
        if not col.any():
            col = np.full(F.shape[0], 1e-16)
        F[:, l] = col
    return F


def cpd_als(T, r, iters=200, nonneg=False, seed=0, rel_tol=1e-8):
    """Rank-r CPD by alternating least squares (or HALS when ``nonneg``).

    Each sweep updates A, B, C in turn: exact least squares on the
    unfoldings for the unconstrained model, one columnwise nonnegative
    update per factor for the nonnegative one. After an ALS sweep the
    columns of B and C are normalized with the scales absorbed into A.
    Stops after ``iters`` sweeps or when the relative cost decrease
    falls below ``rel_tol``.
    """
    T = as_tensor3(T)
    if r < 1:
        raise ValueError("rank must be at least 1")
    n, m1, m2 = T.shape
    rng = np.random.default_rng(seed)
    if nonneg:
        A = rng.uniform(size=(n, r))
        B = rng.uniform(size=(m1, r))
        C = rng.uniform(size=(m2, r))
    else:
        A = rng.standard_normal((n, r))
        B = rng.standard_normal((m1, r))
        C = rng.standard_normal((m2, r))

    Y1, Y2, Y3 = unfold1(T), unfold2(T), unfold3(T)
    norm_sq = float(np.einsum("ijk,ijk->", T, T))

    def cost(A, B, C):
        R = T - np.einsum("il,jl,kl->ijk", A, B, C)
        return float(np.einsum("ijk,ijk->", R, R))

    prev = cost(A, B, C)
    trace = [prev]
    for _ in range(iters):
        gram_bc = (B.T @ B) * (C.T @ C)
        m_a = Y1 @ khatri_rao(B, C)
        A = _hals_factor(A, gram_bc, m_a) if nonneg else _exact_ls_factor(Y1, gram_bc, m_a)

        gram_ac = (A.T @ A) * (C.T @ C)
        m_b = Y2 @ khatri_rao(A, C)
        B = _hals_factor(B, gram_ac, m_b) if nonneg else _exact_ls_factor(Y2, gram_ac, m_b)

        gram_ab = (A.T @ A) * (B.T @ B)
        m_c = Y3 @ khatri_rao(A, B)
        C = _hals_factor(C, gram_ab, m_c) if nonneg else _exact_ls_factor(Y3, gram_ab, m_c)

        if not nonneg:
            for F in (B, C):
                norms = np.linalg.norm(F, axis=0)
                norms[norms == 0.0] = 1.0
                F /= norms
                A *= norms

        cur = cost(A, B, C)
        trace.append(cur)
        if prev > 0 and abs(cur - prev) / prev < rel_tol:
            break
        if prev == 0.0 and cur == 0.0:
            break
        prev = cur
    factors = CpdFactors(A, B, C)
    return factors, trace
