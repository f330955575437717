"""Quadratic-bilinear systems and order-3 tensor algebra.

Index convention
----------------
An order-3 tensor ``T`` of shape ``(n1, n2, n3)`` is stored through its
mode-1 unfolding ``H1`` of shape ``(n1, n2 * n3)`` with

    H1[i, j + k * n2] = T[i, j, k]        (0-based indices)

which makes ``H1 @ np.kron(x, y)`` equal to ``sum_jk T[i, j, k] * y[j] * x[k]``.
The other unfoldings are

    H2[j, i + k * n1] = T[i, j, k]
    H3[k, i + j * n1] = T[i, j, k]

With this choice ``H2 @ kron(x, z) == (H1 @ kron(x, I)).T @ z``, which is the
identity behind the dual (observability) equations, and a tensor that is
symmetric in its last two modes has ``H2 == H3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError

# Upper bound on the number of floats materialised per block in the sparse
# branch of :func:`gamma_product`.
_BLOCK_FLOATS = 4_000_000


def _as_matrix(M, name):
    if sp.issparse(M):
        return sp.csr_matrix(M, dtype=float)
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {arr.shape}")
    return arr


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


class HessianTensor:
    """Order-3 tensor stored through its mode-1 unfolding.

    Parameters
    ----------
    data
        Mode-1 unfolding, dense ``ndarray`` or a scipy sparse matrix of shape
        ``(n1, n2 * n3)``.
    shape
        Tensor shape ``(n1, n2, n3)``. Defaults to the cubic shape ``(n, n, n)``
        inferred from ``data``.
    symmetric
        Whether the tensor is known to be symmetric in its last two modes.
    """

    __slots__ = ("_data", "_shape", "_symmetric", "_coo")

    def __init__(self, data, shape: tuple[int, int, int] | None = None, symmetric: bool = False):
        data = _as_matrix(data, "Hessian")
        rows, cols = data.shape
        if shape is None:
            shape = (rows, rows, rows)
        shape = tuple(int(s) for s in shape)
        if len(shape) != 3:
            raise DimensionError(f"tensor shape must have three entries, got {shape}")
        n1, n2, n3 = shape
        if rows != n1 or cols != n2 * n3:
            raise DimensionError(
                f"mode-1 unfolding has shape {data.shape}, expected ({n1}, {n2 * n3})"
            )
        if symmetric and n2 != n3:
            raise DimensionError("a symmetric tensor needs equal second and third modes")
        if sp.issparse(data):
            data = data.copy()
            data.sum_duplicates()
            data.eliminate_zeros()
            data.data.setflags(write=False)
        else:
            data = _readonly(data)
        self._data = data
        self._shape = shape
        self._symmetric = bool(symmetric)
        self._coo = None

    # ------------------------------------------------------------------ basic
    @property
    def data(self):
        """Mode-1 unfolding (read-only)."""
        return self._data

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._shape

    @property
    def n(self) -> int:
        return self._shape[0]

    @property
    def symmetric(self) -> bool:
        return self._symmetric

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._data)

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return int(self._data.nnz)
        return int(np.count_nonzero(self._data))

    def toarray(self) -> np.ndarray:
        """Dense copy of the mode-1 unfolding."""
        if self.is_sparse:
            return self._data.toarray()
        return np.array(self._data)

    def to_tensor(self) -> np.ndarray:
        """Dense ``(n1, n2, n3)`` array ``T``."""
        return self.toarray().reshape(self._shape, order="F")

    def coords(self):
        """Nonzero entries as ``(i, j, k, value)`` arrays."""
        if self._coo is None:
            if self.is_sparse:
                coo = self._data.tocoo()
                i, c, v = coo.row, coo.col, coo.data
            else:
                i, c = np.nonzero(self._data)
                v = self._data[i, c]
            n2 = self._shape[1]
            self._coo = (
                np.asarray(i, dtype=np.int64),
                np.asarray(c % n2, dtype=np.int64),
                np.asarray(c // n2, dtype=np.int64),
                np.asarray(v, dtype=float),
            )
        return self._coo

    def norm2(self) -> float:
        """Spectral norm of the mode-1 unfolding."""
        return _spectral_norm(self._data)

    def __repr__(self) -> str:
        kind = "sparse" if self.is_sparse else "dense"
        return f"HessianTensor(shape={self._shape}, {kind}, symmetric={self._symmetric})"

    @classmethod
    def from_tensor(cls, T: np.ndarray, symmetric: bool = False) -> "HessianTensor":
        T = np.asarray(T, dtype=float)
        if T.ndim != 3:
            raise DimensionError(f"expected an order-3 array, got ndim={T.ndim}")
        n1, n2, n3 = T.shape
        return cls(T.reshape((n1, n2 * n3), order="F"), shape=T.shape, symmetric=symmetric)

    @classmethod
    def from_coords(cls, i, j, k, values, shape, symmetric: bool = False) -> "HessianTensor":
        """Sparse tensor from coordinate lists (duplicates are summed)."""
        n1, n2, n3 = shape
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        k = np.asarray(k, dtype=np.int64)
        data = sp.csr_matrix(
            (np.asarray(values, dtype=float), (i, j + k * n2)), shape=(n1, n2 * n3)
        )
        return cls(data, shape=shape, symmetric=symmetric)

    @classmethod
    def zeros(cls, n: int, sparse: bool = True) -> "HessianTensor":
        if sparse:
            return cls(sp.csr_matrix((n, n * n)), symmetric=True)
        return cls(np.zeros((n, n * n)), symmetric=True)


def _spectral_norm(M) -> float:
    if sp.issparse(M):
        if M.nnz == 0:
            return 0.0
        # M M^T is n x n; its largest eigenvalue is the squared norm.
        G = (M @ M.T).toarray()
        return float(np.sqrt(max(np.linalg.eigvalsh(G)[-1], 0.0)))
    M = np.asarray(M)
    if M.size == 0:
        return 0.0
    if M.shape[0] < M.shape[1]:
        G = M @ M.T
        return float(np.sqrt(max(np.linalg.eigvalsh(G)[-1], 0.0)))
    return float(np.linalg.norm(M, 2))


# --------------------------------------------------------------------- ops
def symmetrize(H: HessianTensor) -> HessianTensor:
    """Average the tensor over its last two modes.

    Returns ``H_s`` with ``H_s[i, j + k n] = (H[i, j + k n] + H[i, k + j n]) / 2``
    so that ``H_s(x ⊗ x) = H(x ⊗ x)`` and ``H_s(u ⊗ v) = H_s(v ⊗ u)``.
    """
    if not isinstance(H, HessianTensor):
        H = HessianTensor(H)
    n1, n2, n3 = H.shape
    if n2 != n3:
        raise DimensionError(f"cannot symmetrize a tensor of shape {H.shape}")
    if H.is_sparse:
        i, j, k, v = H.coords()
        data = sp.csr_matrix(
            (
                np.concatenate([v, v]) * 0.5,
                (np.concatenate([i, i]), np.concatenate([j + k * n2, k + j * n2])),
            ),
            shape=(n1, n2 * n3),
        )
    else:
        T = H.to_tensor()
        data = (0.5 * (T + T.transpose(0, 2, 1))).reshape((n1, n2 * n3), order="F")
    return HessianTensor(data, shape=H.shape, symmetric=True)


_PERMS = {1: (0, 1, 2), 2: (1, 0, 2), 3: (2, 0, 1)}


def mode_unfold(H: HessianTensor, mode: int):
    """Mode-``mode`` unfolding of ``H`` (same storage kind as ``H.data``)."""
    if mode not in _PERMS:
        raise DimensionError(f"mode must be 1, 2 or 3, got {mode!r}")
    if mode == 1:
        return H.data
    perm = _PERMS[mode]
    shape = H.shape
    new_shape = tuple(shape[p] for p in perm)
    if H.is_sparse:
        idx = H.coords()
        a, b, c = (idx[p] for p in perm)
        return sp.csr_matrix(
            (idx[3], (a, b + c * new_shape[1])),
            shape=(new_shape[0], new_shape[1] * new_shape[2]),
        )
    T = H.to_tensor().transpose(perm)
    return T.reshape((new_shape[0], new_shape[1] * new_shape[2]), order="F")


def refold(M, mode: int, shape: tuple[int, int, int], symmetric: bool = False) -> HessianTensor:
    """Inverse of :func:`mode_unfold`: rebuild the tensor of ``shape``."""
    if mode not in _PERMS:
        raise DimensionError(f"mode must be 1, 2 or 3, got {mode!r}")
    perm = _PERMS[mode]
    new_shape = tuple(shape[p] for p in perm)
    M = _as_matrix(M, "unfolding")
    if M.shape != (new_shape[0], new_shape[1] * new_shape[2]):
        raise DimensionError(f"unfolding shape {M.shape} does not fit tensor shape {shape}")
    if mode == 1:
        return HessianTensor(M, shape=shape, symmetric=symmetric)
    inv = np.argsort(perm)
    if sp.issparse(M):
        coo = M.tocoo()
        permuted = (coo.row, coo.col % new_shape[1], coo.col // new_shape[1])
        i, j, k = (permuted[p] for p in inv)
        return HessianTensor.from_coords(i, j, k, coo.data, shape, symmetric=symmetric)
    T = np.asarray(M).reshape(new_shape, order="F").transpose(inv)
    return HessianTensor.from_tensor(T, symmetric=symmetric)


def apply_quadratic(H: HessianTensor, x) -> np.ndarray:
    """Evaluate ``H (x ⊗ x)`` without forming ``x ⊗ x``."""
    x = np.asarray(x, dtype=float)
    n1, n2, n3 = H.shape
    if n2 != n3 or x.shape != (n2,):
        raise DimensionError(f"vector of shape {x.shape} does not match tensor {H.shape}")
    if H.is_sparse:
        i, j, k, v = H.coords()
        return np.bincount(i, weights=v * x[j] * x[k], minlength=n1)
    # data[i, k * n + j] viewed as D[i, k, j]
    D = np.asarray(H.data).reshape(n1, n3, n2)
    return (D @ x) @ x


def quadratic_jacobian(H: HessianTensor, x):
    """Jacobian of ``x -> H (x ⊗ x)``, i.e. ``H (x ⊗ I) + H (I ⊗ x)``.

    Sparse tensors give a sparse CSR matrix, dense tensors a dense array.
    """
    x = np.asarray(x, dtype=float)
    n1, n2, n3 = H.shape
    if n2 != n3 or x.shape != (n2,):
        raise DimensionError(f"vector of shape {x.shape} does not match tensor {H.shape}")
    if H.is_sparse:
        i, j, k, v = H.coords()
        rows = np.concatenate([i, i])
        cols = np.concatenate([j, k])
        vals = np.concatenate([v * x[k], v * x[j]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n1, n2))
    D = np.asarray(H.data).reshape(n1, n3, n2)
    return np.einsum("ikj,k->ij", D, x) + D @ x


def gamma_product(M, Z, X) -> np.ndarray:
    """Compute ``M (Z ⊗ X)`` by two successive contractions.

    Parameters
    ----------
    M
        Matrix of shape ``(q, nx * nz)`` (dense or sparse), typically a mode
        unfolding of a Hessian.
    Z, X
        Dense matrices with ``nz`` and ``nx`` rows.

    Returns
    -------
    ndarray
        ``q x (r * s)`` matrix whose column ``a * s + b`` equals
        ``M @ kron(Z[:, a], X[:, b])``.
    """
    if isinstance(M, HessianTensor):
        M = M.data
    Z = _as_matrix(Z, "Z")
    X = _as_matrix(X, "X")
    if sp.issparse(Z) or sp.issparse(X):
        Z = np.asarray(Z.toarray() if sp.issparse(Z) else Z)
        X = np.asarray(X.toarray() if sp.issparse(X) else X)
    nz, r = Z.shape
    nx, s = X.shape
    q, cols = M.shape
    if cols != nz * nx:
        raise DimensionError(
            f"matrix has {cols} columns but the factors need {nz} * {nx} = {nz * nx}"
        )
    if r == 0 or s == 0:
        return np.zeros((q, r * s))
    if sp.issparse(M):
        return _gamma_sparse(M, Z, X)
    # M[i, k * nx + j] viewed as D[i, k, j]; contract j with X then k with Z.
    D = np.asarray(M).reshape(q, nz, nx)
    E = D @ X  # (q, nz, s)
    out = np.einsum("ika,kb->iba", E, Z, optimize=True)  # (q, r, s)
    return out.reshape(q, r * s)


def _gamma_sparse(M, Z, X) -> np.ndarray:
    nx, s = X.shape
    r = Z.shape[1]
    q = M.shape[0]
    coo = M.tocoo()
    i, c, v = coo.row, coo.col, coo.data
    j, k = c % nx, c // nx
    # Compress entries sharing the same (i, j) pair: Y[pair] = sum_k v Z[k, :].
    pair_key = i.astype(np.int64) * nx + j
    keys, inverse = np.unique(pair_key, return_inverse=True)
    n_pairs = keys.size
    out = np.zeros((q, r * s))
    if n_pairs == 0:
        return out
    S = sp.csr_matrix((v, (inverse, k)), shape=(n_pairs, Z.shape[0]))
    Y = S @ Z  # (n_pairs, r)
    pair_i = keys // nx
    Xp = X[keys % nx]  # (n_pairs, s)
    scatter = sp.csr_matrix(
        (np.ones(n_pairs), (pair_i, np.arange(n_pairs))), shape=(q, n_pairs)
    )
    chunk = max(1, _BLOCK_FLOATS // max(1, n_pairs * s))
    for start in range(0, r, chunk):
        stop = min(r, start + chunk)
        block = Y[:, start:stop, None] * Xp[:, None, :]  # (n_pairs, w, s)
        out[:, start * s : stop * s] = scatter @ block.reshape(n_pairs, -1)
    return out


def mode_products(H: HessianTensor, Xt, Yt, Zt) -> HessianTensor:
    """Multiply ``H`` by matrices along its three modes.

    Returns the tensor ``F`` whose unfoldings satisfy

    * ``F1 = Xt H1 (Y ⊗ Z)``
    * ``F2 = Zt H2 (Y ⊗ X)``
    * ``F3 = Yt H3 (Z ⊗ X)``

    where ``X = Xt.T`` etc. Entrywise ``F[p, b, a] = sum T[i, j, k] Xt[p, i]
    Zt[b, j] Yt[a, k]``, so ``F`` has shape ``(q1, q3, q2)``.
    """
    Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
    Yt = np.atleast_2d(np.asarray(Yt, dtype=float))
    Zt = np.atleast_2d(np.asarray(Zt, dtype=float))
    n1, n2, n3 = H.shape
    if Xt.shape[1] != n1 or Zt.shape[1] != n2 or Yt.shape[1] != n3:
        raise DimensionError(
            f"factor widths {Xt.shape[1]}, {Yt.shape[1]}, {Zt.shape[1]} do not match tensor {H.shape}"
        )
    inner = gamma_product(H.data, Yt.T, Zt.T)  # n1 x (q2 * q3)
    F1 = Xt @ inner
    q1, q2, q3 = Xt.shape[0], Yt.shape[0], Zt.shape[0]
    symmetric = H.symmetric and q2 == q3 and np.array_equal(Yt, Zt)
    return HessianTensor(F1, shape=(q1, q3, q2), symmetric=symmetric)


# ------------------------------------------------------------------ factors
@dataclass(frozen=True)
class LowRankFactor:
    """Symmetric PSD matrix represented as ``Z diag(D) Z^T``.

    Parameters
    ----------
    Z
        ``n x r`` factor.
    D
        Optional nonnegative weights of length ``r``; ``None`` means all ones.
    meta
        Free-form metadata (e.g. clipped negative mass).
    """

    Z: np.ndarray
    D: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z.reshape(-1, 1)
        if Z.ndim != 2:
            raise DimensionError(f"factor must be two-dimensional, got shape {Z.shape}")
        object.__setattr__(self, "Z", Z)
        if self.D is not None:
            D = np.asarray(self.D, dtype=float).reshape(-1)
            if D.shape[0] != Z.shape[1]:
                raise DimensionError(f"weights of length {D.shape[0]} for {Z.shape[1]} columns")
            if np.any(D < 0):
                raise DimensionError("factor weights must be nonnegative")
            object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def rank(self) -> int:
        return self.Z.shape[1]

    def weighted(self) -> np.ndarray:
        """Factor ``Z diag(D)^{1/2}`` so that ``X = F F^T``."""
        if self.D is None:
            return self.Z
        return self.Z * np.sqrt(self.D)

    def dense(self) -> np.ndarray:
        F = self.weighted()
        return F @ F.T

    @classmethod
    def empty(cls, n: int) -> "LowRankFactor":
        return cls(np.zeros((n, 0)))


# ------------------------------------------------------------------- system
@dataclass(frozen=True)
class QBSystem:
    """Quadratic-bilinear system.

    ``x' = A x + H (x ⊗ x) + sum_k N_k x u_k + B u``, ``y = C x``.

    The Hessian is symmetrized at construction unless it is already flagged
    symmetric. All arrays are stored as read-only copies.
    """

    A: np.ndarray
    H: HessianTensor
    N: tuple
    B: np.ndarray
    C: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        A = _readonly(np.atleast_2d(np.asarray(self.A, dtype=float)))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got shape {A.shape}")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(n, -1) if B.size else np.zeros((n, 0))
        C = np.asarray(self.C, dtype=float)
        if C.ndim == 1:
            C = C.reshape(-1, n) if C.size else np.zeros((0, n))
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise DimensionError(f"C has {C.shape[1]} columns, expected {n}")
        m = B.shape[1]
        Ns = tuple(self.N) if self.N is not None else ()
        if len(Ns) != m:
            raise DimensionError(f"expected {m} bilinear matrices (one per input), got {len(Ns)}")
        Ns = tuple(_readonly(np.atleast_2d(np.asarray(Nk, dtype=float))) for Nk in Ns)
        for idx, Nk in enumerate(Ns):
            if Nk.shape != (n, n):
                raise DimensionError(f"N[{idx}] has shape {Nk.shape}, expected ({n}, {n})")
        H = self.H
        if H is None:
            H = HessianTensor.zeros(n)
        elif not isinstance(H, HessianTensor):
            H = HessianTensor(H)
        if H.shape != (n, n, n):
            raise DimensionError(f"Hessian shape {H.shape} does not match state dimension {n}")
        if not H.symmetric:
            H = symmetrize(H)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", _readonly(B))
        object.__setattr__(self, "C", _readonly(C))
        object.__setattr__(self, "N", Ns)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def H2(self):
        """Mode-2 unfolding of the (symmetric) Hessian."""
        return mode_unfold(self.H, 2)

    def replace(self, **changes: Any) -> "QBSystem":
        fields = dict(A=self.A, H=self.H, N=self.N, B=self.B, C=self.C, meta=self.meta)
        fields.update(changes)
        return QBSystem(**fields)

    @property
    def is_linear(self) -> bool:
        return self.H.nnz == 0 and all(not np.any(Nk) for Nk in self.N)


def make_system(A, H=None, N: Sequence | None = None, B=None, C=None, meta=None) -> QBSystem:
    """Convenience constructor filling absent terms with zeros."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.zeros((n, 0)) if B is None else np.asarray(B, dtype=float).reshape(n, -1)
    m = B.shape[1]
    if N is None:
        N = [np.zeros((n, n)) for _ in range(m)]
    C = np.zeros((0, n)) if C is None else np.asarray(C, dtype=float).reshape(-1, n)
    if H is not None and not isinstance(H, HessianTensor):
        H = HessianTensor(np.asarray(H, dtype=float).reshape(n, n * n) if not sp.issparse(H) else H)
    return QBSystem(A=A, H=H, N=tuple(N), B=B, C=C, meta=dict(meta or {}))


def shift_A(sys: QBSystem, s: float) -> QBSystem:
    """Return a copy of ``sys`` with ``A`` replaced by ``A - s I``."""
    s = float(s)
    meta = dict(sys.meta)
    meta["shift"] = meta.get("shift", 0.0) + s
    return sys.replace(A=sys.A - s * np.eye(sys.n), meta=meta)
