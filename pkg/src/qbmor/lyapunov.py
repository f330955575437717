"""Dense Lyapunov solves, PSD factorizations and stability diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .core import LowRankFactor
from .errors import DimensionError, NumericalError, StabilityError

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class LyapunovSolution:
    """Solution of ``A X + X A^T + W = 0``.

    Attributes
    ----------
    X
        Symmetric solution.
    residual
        ``||A X + X A^T + W||_F / max(||W||_F, eps)``.
    """

    X: np.ndarray
    residual: float

    @cached_property
    def factor(self) -> LowRankFactor:
        """Low-rank factor of the PSD part of ``X``."""
        return factorize_psd(self.X, clip_tol=1e-14)


@dataclass(frozen=True)
class DecayBound:
    """Constants with ``||exp(A t)||_2 <= beta * exp(-alpha t)``."""

    alpha: float
    beta: float
    method: str
    sampled_max: float = field(default=float("nan"))


def spectral_abscissa(A) -> float:
    """Largest real part of the eigenvalues of ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


def _check_stable(A, which: str = "") -> None:
    ev = np.linalg.eigvals(A)
    idx = int(np.argmax(ev.real))
    # roundoff moves exact zero eigenvalues by about eps * ||A||
    tol = 1e3 * _EPS * max(np.linalg.norm(A, 1), 1.0)
    if ev[idx].real >= -tol:
        label = f" ({which})" if which else ""
        raise StabilityError(
            f"A is not Hurwitz{label}: eigenvalue {ev[idx]:.6g} has nonnegative real part",
            eigenvalue=complex(ev[idx]),
        )


def solve_lyapunov(A, W, which: str = "", check: bool = True) -> LyapunovSolution:
    """Solve ``A X + X A^T + W = 0`` for stable ``A`` and symmetric ``W``.

    The solve uses the real Schur form of ``A`` (Bartels-Stewart) and the
    result is symmetrized.

    Parameters
    ----------
    A
        ``n x n`` Hurwitz matrix.
    W
        ``n x n`` symmetric right-hand side.
    which
        Label used in error messages.
    check
        Verify stability of ``A`` before solving.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or W.shape != (n, n):
        raise DimensionError(f"shapes A {A.shape} and W {W.shape} are incompatible")
    if n == 0:
        return LyapunovSolution(np.zeros((0, 0)), 0.0)
    wnorm = np.linalg.norm(W)
    if np.linalg.norm(W - W.T) > 1e-10 * max(wnorm, _EPS):
        raise DimensionError("right-hand side W is not symmetric")
    if check:
        _check_stable(A, which)
    X = sla.solve_continuous_lyapunov(A, -W)
    X = 0.5 * (X + X.T)
    if not np.all(np.isfinite(X)):
        raise NumericalError(f"Lyapunov solve{' (' + which + ')' if which else ''} produced non-finite values")
    res = np.linalg.norm(A @ X + X @ A.T + W) / max(wnorm, _EPS)
    return LyapunovSolution(X, float(res))


def factorize_psd(X, clip_tol: float = 1e-12) -> LowRankFactor:
    """Factor the PSD part of a symmetric matrix.

    Eigenvalues below ``clip_tol * lambda_max`` are dropped. The returned
    factor ``Z = U_+ Lambda_+^{1/2}`` satisfies ``||X_+ - Z Z^T||_F <=
    clip_tol ||X||_F``; the discarded negative mass is stored in
    ``meta['negative_mass']``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if X.shape != (n, n):
        raise DimensionError(f"expected a square matrix, got {X.shape}")
    if n == 0:
        return LowRankFactor(np.zeros((0, 0)), meta={"negative_mass": 0.0})
    w, U = np.linalg.eigh(0.5 * (X + X.T))
    neg = float(np.sqrt(np.sum(w[w < 0] ** 2)))
    lam_max = w[-1]
    if lam_max <= 0:
        return LowRankFactor(np.zeros((n, 0)), meta={"negative_mass": neg})
    xnorm = np.linalg.norm(w)
    w, U = w[::-1], U[:, ::-1]
    pos = np.clip(w, 0.0, None)
    # tail[b] = Frobenius norm of the positive eigenvalues beyond index b
    tail = np.sqrt(np.concatenate([np.cumsum(pos[::-1] ** 2)[::-1], [0.0]]))
    rank = int(np.count_nonzero(w > clip_tol * lam_max))
    rank = max(rank, int(np.argmax(tail <= clip_tol * xnorm)))
    Z = U[:, :rank] * np.sqrt(w[:rank])
    return LowRankFactor(Z, meta={"negative_mass": neg})


def truncate_factor(F: LowRankFactor | np.ndarray, tau: float) -> LowRankFactor:
    """Rank truncation of a PSD factor with relative Frobenius accuracy ``tau``.

    With ``F = Q R`` (economic QR) and ``R D R^T = U diag(sigma) U^T`` the
    leading ``beta`` eigenpairs are kept, ``beta`` minimal such that the
    discarded eigenvalues satisfy ``sqrt(sum sigma_i^2) <= tau sqrt(sum all)``.
    Eigenvalues at rounding level (below ``n eps sigma_1``) are always dropped.
    The result is ``Q U_beta diag(sigma_beta)^{1/2}``.
    """
    if not isinstance(F, LowRankFactor):
        F = LowRankFactor(F)
    if not 0 <= tau < 1:
        raise DimensionError(f"tau must lie in [0, 1), got {tau}")
    Z = F.Z
    n, r = Z.shape
    if r == 0:
        return LowRankFactor(np.zeros((n, 0)))
    Q, R = np.linalg.qr(Z, mode="reduced")
    M = R @ R.T if F.D is None else (R * F.D) @ R.T
    sig, U = np.linalg.eigh(0.5 * (M + M.T))
    sig, U = sig[::-1], U[:, ::-1]
    s1 = sig[0]
    if s1 <= 0:
        return LowRankFactor(np.zeros((n, 0)))
    if sig[-1] < -1e-12 * s1:
        raise NumericalError(
            f"factor does not represent a PSD matrix (eigenvalue {sig[-1]:.3e}, largest {s1:.3e})"
        )
    sig = np.clip(sig, 0.0, None)
    sq = sig**2
    # tail[b] = sqrt(sum_{i >= b} sigma_i^2)
    tail = np.sqrt(np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]]))
    total = tail[0]
    beta = int(np.argmax(tail <= tau * total))
    floor = max(n, r) * _EPS * s1
    beta = min(beta, int(np.count_nonzero(sig > floor)))
    beta = max(beta, 1)
    Zt = Q @ (U[:, :beta] * np.sqrt(sig[:beta]))
    return LowRankFactor(Zt)


def _is_normal(A) -> bool:
    return np.linalg.norm(A @ A.T - A.T @ A) <= 1e-12 * np.linalg.norm(A) ** 2


def _sampled_sup(A, alpha, t):
    vals = [1.0]  # t = 0
    for ti in t:
        vals.append(np.linalg.norm(sla.expm(A * ti), 2) * np.exp(alpha * ti))
    return float(max(vals))


def decay_bound(A, margin: float = 1e-3, n_samples: int = 200) -> DecayBound:
    """Constants ``alpha, beta`` with ``||exp(A t)|| <= beta exp(-alpha t)``.

    ``alpha = -eta(A) (1 - margin)``. ``beta`` is 1 for normal ``A``, the
    eigenvector condition number for diagonalizable ``A`` and otherwise the
    sampled supremum of ``||exp(A t)|| exp(alpha t)``. The sampled value is
    always computed and ``beta`` is never below it.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    eta = spectral_abscissa(A)
    if eta >= 0:
        _check_stable(A)
    alpha = -eta * (1.0 - margin)
    t = np.logspace(-3, np.log10(50.0 / alpha), n_samples)
    sampled = _sampled_sup(A, alpha, t)
    if _is_normal(A):
        beta, method = 1.0, "normal-exact"
    else:
        _, V = np.linalg.eig(A)
        kappa = np.linalg.cond(V)
        if np.isfinite(kappa) and kappa < 1e8:
            beta, method = float(kappa), "eigenvector-condition"
        else:
            beta, method = sampled, "sampled"
    beta = max(beta, sampled, 1.0)
    return DecayBound(alpha=float(alpha), beta=float(beta), method=method, sampled_max=sampled)
