"""Square-root balanced truncation for quadratic-bilinear systems."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (
    HessianTensor,
    LowRankFactor,
    QBSystem,
    gamma_product,
    mode_products,
    symmetrize,
)
from .errors import DimensionError, NumericalError
from .gramians import GramianPair

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReducedModel:
    """Reduced realization with its projection data.

    Attributes
    ----------
    sys_hat
        Reduced system of order ``n_hat``.
    V, W
        Right and left projectors (``W^T V = I``).
    sigma
        All singular values of ``S^T R`` in descending order.
    n_hat
        Retained order.
    radius
        Stability radius of the origin (``inf`` when the reduced Hessian
        vanishes, ``nan`` when it was not computed).
    source_meta
        Shift and Gramian kind used, plus warnings.
    """

    sys_hat: QBSystem
    V: np.ndarray
    W: np.ndarray
    sigma: np.ndarray
    n_hat: int
    radius: float = float("nan")
    source_meta: dict = field(default_factory=dict, compare=False)

    @property
    def Sigma1(self) -> np.ndarray:
        """Diagonal matrix of the retained singular values."""
        return np.diag(self.sigma[: self.n_hat])

    def projector_error(self) -> float:
        """``||W^T V - I||_F``."""
        return float(np.linalg.norm(self.W.T @ self.V - np.eye(self.n_hat)))


@dataclass(frozen=True)
class BalancingTransform:
    """State transformation making both Gramians equal and diagonal."""

    T: np.ndarray
    T_inv: np.ndarray
    sigma: np.ndarray

    def apply(self, sys: QBSystem) -> QBSystem:
        """Balanced realization ``(T^-1 A T, T^-1 H (T ⊗ T), T^-1 N_k T, T^-1 B, C T)``."""
        T, Ti = self.T, self.T_inv
        H = mode_products(sys.H, Ti, T.T, T.T)
        return QBSystem(
            A=Ti @ sys.A @ T,
            H=symmetrize(HessianTensor(H.data)),
            N=tuple(Ti @ Nk @ T for Nk in sys.N),
            B=Ti @ sys.B,
            C=sys.C @ T,
            meta=dict(sys.meta),
        )


def _cross_svd(pair: GramianPair):
    R = pair.R.weighted()
    S = pair.S.weighted()
    if R.shape[0] != S.shape[0]:
        raise DimensionError(f"factor row counts differ: {R.shape[0]} vs {S.shape[0]}")
    if R.shape[1] == 0 or S.shape[1] == 0:
        return R, S, np.zeros((S.shape[1], 0)), np.zeros(0), np.zeros((0, R.shape[1]))
    U, sigma, Vt = np.linalg.svd(S.T @ R, full_matrices=False)
    # make the largest-magnitude entry of every left singular vector nonnegative
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[idx, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    U = U * signs
    Vt = Vt * signs[:, None]
    return R, S, U, sigma, Vt


def hankel_values(pair: GramianPair, normalized: bool = False) -> np.ndarray:
    """Singular values of ``S^T R`` in descending order.

    With ``normalized=True`` the values are divided by the largest one.
    Zero Gramians give an empty vector.
    """
    sigma = _cross_svd(pair)[3]
    if normalized and sigma.size:
        return sigma / sigma[0]
    return sigma


def _numerical_rank(sigma: np.ndarray, rtol: float = 1e-14) -> int:
    if sigma.size == 0 or sigma[0] <= 0:
        return 0
    return int(np.count_nonzero(sigma > rtol * sigma[0]))


def balance_and_reduce(
    sys: QBSystem,
    pair: GramianPair,
    n_hat: int,
    compute_radius: bool = True,
) -> ReducedModel:
    """Project ``sys`` onto its ``n_hat`` dominant balanced states.

    With ``S^T R = U Sigma V^T`` the projectors are ``V = R V_1 Sigma_1^{-1/2}``
    and ``W = S U_1 Sigma_1^{-1/2}``; the reduced matrices are ``W^T A V``,
    ``W^T H (V ⊗ V)``, ``W^T N_k V``, ``W^T B`` and ``C V``. The unshifted ``A``
    of ``sys`` is always projected, even if the Gramians were computed for a
    shifted matrix.

    Parameters
    ----------
    sys
        Full-order system.
    pair
        Gramian factors of ``sys``.
    n_hat
        Reduced order, at most the numerical rank of ``S^T R``.
    compute_radius
        Also compute the stability radius (needs truncated Gramians without
        shift).
    """
    R, S, U, sigma, Vt = _cross_svd(pair)
    n_hat = int(n_hat)
    rank = _numerical_rank(sigma)
    if n_hat < 1 or n_hat > rank:
        raise NumericalError(
            f"reduced order {n_hat} is not in [1, {rank}] (numerical rank of S^T R)"
        )
    warnings = []
    if n_hat < sigma.size and sigma[n_hat] > 0:
        gap = (sigma[n_hat - 1] - sigma[n_hat]) / sigma[n_hat - 1]
        if gap < 1e-12:
            warnings.append(
                f"truncation inside a cluster of singular values (sigma_{n_hat} ~ sigma_{n_hat + 1})"
            )
            log.warning(warnings[-1])
    scale = 1.0 / np.sqrt(sigma[:n_hat])
    V = R @ (Vt[:n_hat].T * scale)
    W = S @ (U[:, :n_hat] * scale)
    proj_err = float(np.linalg.norm(W.T @ V - np.eye(n_hat)))
    if proj_err > 1e-8:
        warnings.append(f"||W^T V - I||_F = {proj_err:.2e}")
        log.warning(warnings[-1])
    Hhat = mode_products(sys.H, W.T, V.T, V.T)
    sys_hat = QBSystem(
        A=W.T @ sys.A @ V,
        H=symmetrize(HessianTensor(Hhat.data)),
        N=tuple(W.T @ Nk @ V for Nk in sys.N),
        B=W.T @ sys.B,
        C=sys.C @ V,
        meta={"reduced_from": sys.n},
    )
    meta = {
        "shift": pair.shift,
        "gramian_kind": pair.kind,
        "projector_error": proj_err,
        "warnings": warnings,
    }
    model = ReducedModel(sys_hat, V, W, sigma, n_hat, float("nan"), meta)
    if compute_radius and pair.kind == "truncated" and pair.shift == 0 and pair.linear is not None:
        radius = stability_radius(model, sys, pair.linear)
        model = ReducedModel(sys_hat, V, W, sigma, n_hat, radius, meta)
    return model


def balancing_transform(sys: QBSystem, pair: GramianPair, rtol: float = 1e-12) -> BalancingTransform:
    """Full balancing transformation ``T = R V Sigma^{-1/2}``.

    ``T^{-1} = Sigma^{-1/2} U^T S^T`` and both ``T^{-1} P T^{-T}`` and
    ``T^T Q T`` equal ``diag(sigma)``.
    """
    n = sys.n
    for name, F in (("reachability", pair.R), ("observability", pair.S)):
        ev = np.linalg.eigvalsh(F.dense()) if F.rank else np.zeros(n)
        if F.n != n:
            raise DimensionError(f"{name} factor has {F.n} rows, system has n = {n}")
        if ev[-1] <= 0 or ev[0] <= rtol * ev[-1]:
            raise NumericalError(
                f"{name} Gramian is numerically singular; use balance_and_reduce instead"
            )
    R, S, U, sigma, Vt = _cross_svd(pair)
    if sigma.size < n or sigma[-1] <= rtol * sigma[0]:
        raise NumericalError("S^T R is numerically singular; use balance_and_reduce instead")
    scale = 1.0 / np.sqrt(sigma)
    T = R @ (Vt.T * scale)
    T_inv = (U * scale).T @ S.T
    return BalancingTransform(T, T_inv, sigma)


def stability_radius(model: ReducedModel, sys: QBSystem, lin_factors) -> float:
    """Radius of a ball around the origin where ``x^T Sigma_1 x`` decreases.

    ``r = sigma_min(V^T G V) / (2 ||Sigma_1|| ||H_hat||)`` with
    ``G = H2 (P1 ⊗ Q1) H2^T + sum N_k^T Q1 N_k + C^T C`` assembled from the
    factors of the linear Gramians. Returns ``inf`` when ``H_hat = 0``.
    """
    Z1, X1 = lin_factors
    Z1 = Z1.weighted() if isinstance(Z1, LowRankFactor) else np.asarray(Z1)
    X1 = X1.weighted() if isinstance(X1, LowRankFactor) else np.asarray(X1)
    V = model.V
    if V.shape[0] != sys.n or Z1.shape[0] != sys.n or X1.shape[0] != sys.n:
        raise DimensionError("projector and Gramian factors must have n rows")
    hnorm = model.sys_hat.H.norm2()
    if hnorm == 0.0:
        return float("inf")
    blocks = [gamma_product(sys.H2, Z1, X1)]
    blocks += [Nk.T @ X1 for Nk in sys.N]
    blocks.append(sys.C.T)
    F = V.T @ np.hstack(blocks)
    smin = max(float(np.linalg.eigvalsh(F @ F.T)[0]), 0.0)
    s1 = float(model.sigma[0])
    return smin / (2.0 * s1 * hnorm)


__all__ = [
    "BalancingTransform",
    "ReducedModel",
    "balance_and_reduce",
    "balancing_transform",
    "hankel_values",
    "stability_radius",
]
