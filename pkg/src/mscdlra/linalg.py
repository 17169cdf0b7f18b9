"""Dense matrix primitives and the structured least-squares kernel.

Conventions used throughout the package:

* matrices are 2-D float ndarrays, vectorization is row-first (C order),
* a dictionary is a matrix with unit-norm columns, wrapped in
  :class:`Dictionary` together with the norms recorded at normalization,
* a mixing factor is either a dense matrix or a columnwise Kronecker
  (Khatri-Rao) product of two matrices, wrapped in :class:`MixingOperator`
  which exposes Gram and data products without materializing the product
  when it is large,
* a support is a list with one strictly increasing index array per code
  column.

All objects are treated as immutable after construction and every function
here is deterministic and reentrant.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

SUPPORT_TOL = 1e-14

# Ill-conditioning fallback for fixed-support systems: above this condition
# number a ridge of _RIDGE_SCALE * trace/size is added.
_COND_LIMIT = 1e10
_RIDGE_SCALE = 1e-10

# Khatri-Rao products with more rows than this are never materialized.
_MATERIALIZE_LIMIT = 1_000_000


def as_matrix(M, name="matrix"):
    """Coerce to a 2-D float array with finite entries."""
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


@dataclass(frozen=True)
class Dictionary:
    """A known basis with unit ell-2 norm columns.

    Attributes
    ----------
    matrix : ndarray, shape (n, d)
        The normalized atoms, one per column.
    column_norms : ndarray, shape (d,)
        Norms of the original columns, recorded so codes can be mapped
        back to the unnormalized basis.
    """

    matrix: np.ndarray
    column_norms: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def n_atoms(self):
        return self.matrix.shape[1]


def dict_matrix(D):
    """Return the underlying ndarray of a Dictionary or array-like."""
    if isinstance(D, Dictionary):
        return D.matrix
    return as_matrix(D, "dictionary")


def normalize_columns(M):
    """Normalize the columns of ``M`` to unit ell-2 norm.

    Parameters
    ----------
    M : array-like, shape (n, d)

    Returns
    -------
    dictionary : Dictionary
    norms : ndarray, shape (d,)
        The original column norms (also stored on the dictionary).

    Raises
    ------
    ValueError
        If a column has zero norm (including squared-norm underflow).
    """
    A = as_matrix(M)
    norms = np.sqrt(np.einsum("ij,ij->j", A, A))
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ValueError(f"column {bad[0]} has zero norm and cannot be normalized")
    return Dictionary(A / norms, norms.copy()), norms


def spectral_norm_sq(M, tol=1e-6, max_iter=500):
    """Largest squared singular value of ``M`` by power iteration.

    Iterates on the smaller of the two Gram matrices of ``M`` and stops
    when the Rayleigh quotient is stable to relative tolerance ``tol``.
    If ``max_iter`` is exhausted the current estimate is returned with a
    RuntimeWarning.
    """
    A = as_matrix(M)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.any(A):
        raise ValueError("spectral norm of the zero matrix is undefined here")
    G = A.T @ A if A.shape[1] <= A.shape[0] else A @ A.T
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam_prev = 0.0
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # v landed in the null space: restart from a fresh direction
            v = rng.standard_normal(G.shape[0])
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        if abs(lam - lam_prev) <= tol * max(abs(lam), np.finfo(float).tiny):
            return lam
        lam_prev = lam
    warnings.warn(
        f"power iteration did not reach tol={tol} in {max_iter} iterations",
        RuntimeWarning,
    )
    return lam


def khatri_rao(B, C):
    """Columnwise Kronecker product.

    Column ``l`` of the result is ``kron(B[:, l], C[:, l])``; entry
    ``(j, k)`` of that column sits at row ``j * m2 + k`` (row-first).
    """
    Bm = as_matrix(B, "B")
    Cm = as_matrix(C, "C")
    if Bm.shape[1] != Cm.shape[1]:
        raise ValueError(
            f"column counts differ: {Bm.shape[1]} vs {Cm.shape[1]}"
        )
    m1, r = Bm.shape
    m2 = Cm.shape[0]
    return (Bm[:, None, :] * Cm[None, :, :]).reshape(m1 * m2, r)


class MixingOperator:
    """Mixing factor providing Gram and data products.

    Either a dense matrix ``B`` (m x r) or the Khatri-Rao product of two
    matrices ``B`` (m1 x r) and ``C`` (m2 x r), in which case the
    effective matrix has shape (m1*m2, r) and is only materialized when
    small.
    """

    def __init__(self, B, C=None):
        self.B = as_matrix(B, "B")
        self.C = None if C is None else as_matrix(C, "C")
        if self.C is None:
            self.kind = "dense"
            self._gram = self.B.T @ self.B
            self.n_rows = self.B.shape[0]
        else:
            if self.B.shape[1] != self.C.shape[1]:
                raise ValueError("Khatri-Rao factors must share the column count")
            self.kind = "khatri_rao"
            self._gram = (self.B.T @ self.B) * (self.C.T @ self.C)
            self.n_rows = self.B.shape[0] * self.C.shape[0]
        self.n_cols = self.B.shape[1]
        evals = np.linalg.eigvalsh(self._gram)
        self.min_singular_value = float(np.sqrt(max(evals[0], 0.0)))
        # full column rank is assumed by most solvers; flag when violated
        self.rank_deficient = self.min_singular_value <= 1e-12

    @classmethod
    def dense(cls, B):
        return cls(B)

    @classmethod
    def from_khatri_rao(cls, B, C):
        return cls(B, C)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def gram(self):
        """The r x r Gram matrix of the effective mixing matrix."""
        return self._gram

    def materialize(self):
        """The effective mixing matrix as a dense array."""
        if self.kind == "dense":
            return self.B
        if self.n_rows > _MATERIALIZE_LIMIT:
            raise ValueError(
                f"refusing to materialize a {self.n_rows}-row Khatri-Rao product"
            )
        return khatri_rao(self.B, self.C)

    def data_product(self, Y):
        """Compute ``Y @ B_eff`` without materializing a large product.

        ``Y`` must have ``n_rows`` columns; for the Khatri-Rao kind this
        is the mode-0 unfolding of the data tensor.
        """
        Ym = as_matrix(Y, "Y")
        if Ym.shape[1] != self.n_rows:
            raise ValueError(
                f"data has {Ym.shape[1]} columns, operator has {self.n_rows} rows"
            )
        if self.kind == "dense":
            return Ym @ self.B
        if self.n_rows <= _MATERIALIZE_LIMIT:
            return Ym @ khatri_rao(self.B, self.C)
        T = Ym.reshape(Ym.shape[0], self.B.shape[0], self.C.shape[0])
        return np.einsum("ijk,jl,kl->il", T, self.B, self.C, optimize=True)

    def spectral_norm_sq(self):
        """Largest squared singular value of the effective matrix."""
        if self.kind == "dense":
            return spectral_norm_sq(self.B, tol=1e-10, max_iter=5000)
        # sigma(B kr C)^2 = largest eigenvalue of the Gram matrix
        return float(np.sqrt(spectral_norm_sq(self._gram, tol=1e-10, max_iter=5000)))


def as_mixing(B):
    """Wrap a dense array as a MixingOperator; pass operators through."""
    if isinstance(B, MixingOperator):
        return B
    return MixingOperator(B)


def canonical_support(S, d):
    """Canonicalize a support: sorted unique in-range index arrays."""
    out = []
    for i, idx in enumerate(S):
        a = np.unique(np.asarray(idx, dtype=int))
        if a.size and (a[0] < 0 or a[-1] >= d):
            raise ValueError(f"support of column {i} has indices outside [0, {d})")
        out.append(a)
    return out


def support_from_values(X, tol=SUPPORT_TOL):
    """Per-column index sets of entries with magnitude above ``tol``."""
    Xm = np.asarray(X, dtype=float)
    return [np.flatnonzero(np.abs(Xm[:, i]) > tol) for i in range(Xm.shape[1])]


@dataclass(frozen=True)
class SparseCodes:
    """A columnwise sparse code matrix together with its support."""

    values: np.ndarray
    support: list

    @classmethod
    def from_values(cls, values, tol=SUPPORT_TOL):
        V = np.array(values, dtype=float)
        S = support_from_values(V, tol)
        clean = np.zeros_like(V)
        for i, idx in enumerate(S):
            clean[idx, i] = V[idx, i]
        return cls(clean, S)

    @classmethod
    def zeros(cls, d, r):
        return cls(np.zeros((d, r)), [np.empty(0, dtype=int) for _ in range(r)])

    @property
    def shape(self):
        return self.values.shape

    def nnz_per_column(self):
        return [len(s) for s in self.support]


def _assemble_normal_system(Dm, U, V, N, S):
    """Blockwise Gram matrix and right-hand side of the fixed-support system."""
    sizes = [len(s) for s in S]
    total = sum(sizes)
    offs = np.cumsum([0] + sizes)
    G = np.empty((total, total))
    g = np.empty(total)
    for i, Si in enumerate(S):
        if sizes[i] == 0:
            continue
        g[offs[i]:offs[i + 1]] = Dm[:, Si].T @ N[:, i]
        for j, Sj in enumerate(S):
            if sizes[j] == 0:
                continue
            if U is not None:
                Uij = U[np.ix_(Si, Sj)]
            else:
                Uij = Dm[:, Si].T @ Dm[:, Sj]
            G[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = V[i, j] * Uij
    return G, g, offs


def fixed_support_ls(Y, D, B, S, ridge=0.0, auto_ridge=True):
    """Least-squares codes for a fixed support.

    Minimizes ``||Y - D X B^T||_F^2`` over ``X`` supported on ``S``,
    assembling the normal equations blockwise (block ``(i, j)`` equals
    ``(B^T B)_{ij} * (D^T D)_{S_i S_j}``) so the Kronecker system is
    never formed. When the assembled system has condition number above
    1e10 and ``auto_ridge`` is on, a ridge of ``1e-10 * trace / size``
    (at least ``ridge``) is added.

    Parameters
    ----------
    Y : ndarray, shape (n, m_eff)
        Data matrix; for a Khatri-Rao operator this is the mode-0
        unfolding.
    D : Dictionary or ndarray, shape (n, d)
    B : MixingOperator or ndarray, shape (m, r)
    S : list of r index arrays
    ridge : float
        Explicit ridge added to the normal matrix diagonal.
    auto_ridge : bool
        Enable the ill-conditioning fallback; with ``auto_ridge=False``
        and ``ridge=0`` a singular system raises.

    Returns
    -------
    SparseCodes
    """
    Dm = dict_matrix(D)
    op = as_mixing(B)
    Ym = as_matrix(Y, "Y")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    d = Dm.shape[1]
    r = op.n_cols
    if len(S) != r:
        raise ValueError(f"support has {len(S)} columns, mixing has {r}")
    S = canonical_support(S, d)
    total = sum(len(s) for s in S)
    if total == 0:
        return SparseCodes.zeros(d, r)

    U = Dm.T @ Dm if d * d <= 1e8 else None
    V = op.gram()
    N = op.data_product(Ym)
    G, g, offs = _assemble_normal_system(Dm, U, V, N, S)

    eff_ridge = ridge
    if auto_ridge:
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            eff_ridge = max(ridge, _RIDGE_SCALE * np.trace(G) / G.shape[0])
    A = G if eff_ridge == 0.0 else G + eff_ridge * np.eye(G.shape[0])
    try:
        cf = scipy.linalg.cho_factor(A, lower=True)
        z = scipy.linalg.cho_solve(cf, g)
    except scipy.linalg.LinAlgError as exc:
        if eff_ridge == 0.0:
            raise ValueError(
                "singular fixed-support system; pass ridge > 0 or enable auto_ridge"
            ) from exc
        z, *_ = np.linalg.lstsq(A, g, rcond=None)

    X = np.zeros((d, r))
    for i, Si in enumerate(S):
        X[Si, i] = z[offs[i]:offs[i + 1]]
    return SparseCodes.from_values(X)


def residual_cost(Y, D, X, B):
    """Squared Frobenius residual ``||Y - D X B^T||_F^2``.

    For a large Khatri-Rao operator the reconstruction is never
    materialized; the cost is expanded through Gram products instead.
    """
    Dm = dict_matrix(D)
    op = as_mixing(B)
    Ym = as_matrix(Y, "Y")
    Xm = X.values if isinstance(X, SparseCodes) else as_matrix(X, "X")
    if Xm.shape != (Dm.shape[1], op.n_cols):
        raise ValueError(
            f"codes have shape {Xm.shape}, expected {(Dm.shape[1], op.n_cols)}"
        )
    if Ym.shape[0] != Dm.shape[0] or Ym.shape[1] != op.n_rows:
        raise ValueError(
            f"data has shape {Ym.shape}, expected {(Dm.shape[0], op.n_rows)}"
        )
    A = Dm @ Xm
    if op.kind == "dense" or op.n_rows <= _MATERIALIZE_LIMIT:
        R = Ym - A @ op.materialize().T
        return float(np.einsum("ij,ij->", R, R))
    cross = np.einsum("ij,ij->", A, op.data_product(Ym))
    fit = np.einsum("ij,ij->", A.T @ A, op.gram())
    out = float(np.einsum("ij,ij->", Ym, Ym) - 2.0 * cross + fit)
    return max(out, 0.0)
