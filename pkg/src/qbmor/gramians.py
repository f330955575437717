"""Gramians of quadratic-bilinear systems.

Truncated Gramians come from a chain of four linear Lyapunov equations. The
full Gramians are approximated by the fixed-point iteration in
:func:`iterate_gramians`. Both routines assemble the quadratic right-hand
sides in factored form: ``H (P ⊗ P) H^T = G G^T`` with ``G = H (Z ⊗ Z)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import scipy.linalg as sla

from .core import LowRankFactor, QBSystem, gamma_product
from .errors import ConvergenceError, DivergenceError, DomainError, NumericalError
from .lyapunov import (
    decay_bound,
    factorize_psd,
    solve_lyapunov,
    spectral_abscissa,
    truncate_factor,
)

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class GramianPair:
    """Factors ``P ≈ R R^T`` (reachability) and ``Q ≈ S S^T`` (observability).

    Attributes
    ----------
    R, S
        Low-rank factors.
    kind
        ``"truncated"`` or ``"iterated"``.
    iterations
        Number of fixed-point iterations (0 for truncated Gramians).
    residuals
        Relative Frobenius residuals of the defining equations.
    shift
        Shift ``s`` used, i.e. Gramians belong to ``A - s I``.
    linear
        Factors of the linear Gramians ``(P1, Q1)`` the quadratic terms were
        built from.
    history
        Relative changes ``(dP, dQ)`` per iteration.
    """

    R: LowRankFactor
    S: LowRankFactor
    kind: str
    iterations: int = 0
    residuals: tuple = (float("nan"), float("nan"))
    shift: float = 0.0
    linear: tuple | None = None
    history: tuple = field(default=(), compare=False)

    @property
    def P(self) -> np.ndarray:
        return self.R.dense()

    @property
    def Q(self) -> np.ndarray:
        return self.S.dense()

    @property
    def n(self) -> int:
        return self.R.n


def _shifted_A(sys: QBSystem, shift: float) -> np.ndarray:
    return sys.A - shift * np.eye(sys.n) if shift else sys.A


def _reach_rhs(sys: QBSystem, Z: np.ndarray) -> np.ndarray:
    """Factor ``[H (Z ⊗ Z), N_1 Z, ..., N_m Z, B]``."""
    blocks = [gamma_product(sys.H.data, Z, Z)]
    blocks += [Nk @ Z for Nk in sys.N]
    blocks.append(sys.B)
    return np.hstack(blocks)


def _obs_rhs(sys: QBSystem, Z: np.ndarray, X: np.ndarray, H2=None) -> np.ndarray:
    """Factor ``[H2 (Z ⊗ X), N_1^T X, ..., N_m^T X, C^T]``."""
    if H2 is None:
        H2 = sys.H2
    blocks = [gamma_product(H2, Z, X)]
    blocks += [Nk.T @ X for Nk in sys.N]
    blocks.append(sys.C.T)
    return np.hstack(blocks)


def _gram(F: np.ndarray) -> np.ndarray:
    return F @ F.T


def _linear_factors(sys: QBSystem, A: np.ndarray, clip_tol: float):
    P1 = solve_lyapunov(A, sys.B @ sys.B.T, which="linear reachability")
    Q1 = solve_lyapunov(A.T, sys.C.T @ sys.C, which="linear observability", check=False)
    return P1, Q1, factorize_psd(P1.X, clip_tol), factorize_psd(Q1.X, clip_tol)


def truncated_gramians(sys: QBSystem, clip_tol: float = 1e-14, shift: float = 0.0) -> GramianPair:
    """Truncated Gramians from the four-equation Lyapunov chain.

    Solves, with ``A_s = A - shift I``,

    1. ``A_s P1 + P1 A_s^T + B B^T = 0``
    2. ``A_s^T Q1 + Q1 A_s + C^T C = 0``
    3. ``A_s P + P A_s^T + H (P1 ⊗ P1) H^T + sum N_k P1 N_k^T + B B^T = 0``
    4. ``A_s^T Q + Q A_s + H2 (P1 ⊗ Q1) H2^T + sum N_k^T Q1 N_k + C^T C = 0``

    Parameters
    ----------
    sys
        System with Hurwitz ``A - shift I``.
    clip_tol
        Relative eigenvalue threshold used when factoring the solutions.
    shift
        Spectral shift applied for the Gramian computation only.
    """
    A = _shifted_A(sys, shift)
    _, _, Z1, X1 = _linear_factors(sys, A, clip_tol)
    H2 = sys.H2
    Fp = _reach_rhs(sys, Z1.Z)
    Fq = _obs_rhs(sys, Z1.Z, X1.Z, H2)
    PT = solve_lyapunov(A, _gram(Fp), which="truncated reachability", check=False)
    QT = solve_lyapunov(A.T, _gram(Fq), which="truncated observability", check=False)
    log.info("truncated Gramians: residuals %.2e %.2e", PT.residual, QT.residual)
    return GramianPair(
        R=factorize_psd(PT.X, clip_tol),
        S=factorize_psd(QT.X, clip_tol),
        kind="truncated",
        iterations=0,
        residuals=(PT.residual, QT.residual),
        shift=float(shift),
        linear=(Z1, X1),
    )


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    num = np.linalg.norm(new - old)
    den = np.linalg.norm(new)
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return float(num / den)


def iterate_gramians(
    sys: QBSystem,
    tau: float = 1e-8,
    max_iter: int = 200,
    rel_tol: float = 1e-10,
    shift: float = 0.0,
    clip_tol: float = 1e-14,
    growth_limit: float = 1e6,
) -> GramianPair:
    """Fixed-point iteration for the full quadratic Gramians.

    Starting from the linear Gramians, iterate

    ``A P_k + P_k A^T + B_k B_k^T = 0`` with
    ``B_k = T_tau([H (Z ⊗ Z), N_1 Z, ..., N_m Z, B])``, ``Z = Z_{k-1}``, and

    ``A^T Q_k + Q_k A + C_k C_k^T = 0`` with
    ``C_k = T_tau([H2 (Z ⊗ X), N_1^T X, ..., N_m^T X, C^T])``, ``X = X_{k-1}``,

    until the relative Frobenius changes of both ``P_k`` and ``Q_k`` are at most
    ``rel_tol``.

    Raises
    ------
    ConvergenceError
        ``max_iter`` reached; carries the last relative changes.
    DivergenceError
        ``||P_k||`` or ``||Q_k||`` grew beyond ``growth_limit`` times the first
        iterate.
    """
    A = _shifted_A(sys, shift)
    P1, Q1, Z1, X1 = _linear_factors(sys, A, clip_tol)
    P, Q = P1.X, Q1.X
    Z, X = Z1.Z, X1.Z
    p_ref = max(np.linalg.norm(P), _EPS)
    q_ref = max(np.linalg.norm(Q), _EPS)
    H2 = sys.H2
    history = []
    res = (P1.residual, Q1.residual)
    for k in range(2, max_iter + 1):
        Bk = truncate_factor(_reach_rhs(sys, Z), tau).Z
        Ck = truncate_factor(_obs_rhs(sys, Z, X, H2), tau).Z
        Pk = solve_lyapunov(A, _gram(Bk), check=False)
        Qk = solve_lyapunov(A.T, _gram(Ck), check=False)
        dP = _rel_change(Pk.X, P)
        dQ = _rel_change(Qk.X, Q)
        history.append((dP, dQ))
        P, Q = Pk.X, Qk.X
        res = (Pk.residual, Qk.residual)
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise DivergenceError(f"non-finite Gramian iterate at step {k}")
        if np.linalg.norm(P) > growth_limit * p_ref or np.linalg.norm(Q) > growth_limit * q_ref:
            raise DivergenceError(
                f"Gramian iterates grew by more than {growth_limit:g} at step {k}; "
                "the fixed-point operator likely has spectral radius >= 1"
            )
        log.debug("iteration %d: dP=%.3e dQ=%.3e", k, dP, dQ)
        if dP <= rel_tol and dQ <= rel_tol:
            log.info("Gramian iteration converged after %d steps", k)
            return GramianPair(
                R=factorize_psd(P, clip_tol),
                S=factorize_psd(Q, clip_tol),
                kind="iterated",
                iterations=k,
                residuals=res,
                shift=float(shift),
                linear=(Z1, X1),
                history=tuple(history),
            )
        Z = factorize_psd(P, clip_tol).Z
        X = factorize_psd(Q, clip_tol).Z
        if tau > 0:
            Z = truncate_factor(Z, tau).Z
            X = truncate_factor(X, tau).Z
    last = history[-1] if history else (math.nan, math.nan)
    raise ConvergenceError(
        f"Gramian iteration did not converge in {max_iter} steps "
        f"(last relative changes dP={last[0]:.3e}, dQ={last[1]:.3e})",
        changes=last,
    )


def gramian_residual(sys: QBSystem, pair: GramianPair, equations: str | None = None) -> tuple[float, float]:
    """Relative residuals of the Gramian equations at ``(R R^T, S S^T)``.

    Parameters
    ----------
    equations
        ``"full"`` for the quadratic Gramian equations, ``"truncated"`` for
        the truncated chain (needs ``pair.linear``). Defaults to the kind of
        ``pair``.

    Returns
    -------
    (float, float)
        Frobenius residuals normalized by ``||B B^T||_F`` and ``||C^T C||_F``.
    """
    if equations is None:
        equations = "truncated" if pair.kind == "truncated" else "full"
    A = _shifted_A(sys, pair.shift)
    R, S = pair.R.weighted(), pair.S.weighted()
    if equations == "full":
        Zp, Zq = R, S
    elif equations == "truncated":
        if pair.linear is None:
            raise DomainError("truncated residual needs the linear Gramian factors")
        Zp, Zq = pair.linear[0].weighted(), pair.linear[1].weighted()
    else:
        raise DomainError(f"unknown equation set {equations!r}")
    P, Q = R @ R.T, S @ S.T
    Wp = _gram(_reach_rhs(sys, Zp))
    Wq = _gram(_obs_rhs(sys, Zp, Zq))
    rp = np.linalg.norm(A @ P + P @ A.T + Wp) / max(np.linalg.norm(sys.B @ sys.B.T), _EPS)
    rq = np.linalg.norm(A.T @ Q + Q @ A + Wq) / max(np.linalg.norm(sys.C.T @ sys.C), _EPS)
    return float(rp), float(rq)


# ------------------------------------------------------------ bounds report
@dataclass(frozen=True)
class ConvergenceReport:
    """Quantities of the sufficient convergence conditions.

    ``P_inf`` is the bound of the convergence conditions; ``P_lemma`` is the
    (sharper) fixed point of the scalar majorizing recurrence, i.e. half of
    ``P_inf``. Bounds are ``None`` when their conditions fail.
    """

    Gamma_N: float
    Gamma_H: float
    Gamma_H_tilde: float
    Gamma_B: float
    Gamma_C: float
    D: float
    alpha: float
    beta: float
    decay_method: str
    discriminant: float
    cond_i: bool
    cond_ii: bool
    cond_iii: bool
    cond_q: bool
    P_inf: float | None
    P_lemma: float | None
    Q_bound: float | None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _norm2(M) -> float:
    from .core import _spectral_norm

    return _spectral_norm(M)


def convergence_report(sys: QBSystem, shift: float = 0.0) -> ConvergenceReport:
    """Evaluate the sufficient conditions for convergence of the iteration.

    With ``a = beta^2 Gamma_H / (2 alpha)``, ``b = beta^2 Gamma_N / (2 alpha)``
    and ``c = beta^2 Gamma_B / (2 alpha)`` the iterates satisfy
    ``||P_k|| <= a ||P_{k-1}||^2 + b ||P_{k-1}|| + c``. The conditions are
    (i) ``A`` stable, (ii) ``b < 1``, (iii) ``0 < D^2 - 4 a c <= 1`` with
    ``D = 1 - b``, and for ``Q`` additionally ``b + beta^2 Gamma_H~ P_inf /
    (2 alpha) < 1``. All norms are spectral norms.
    """
    A = _shifted_A(sys, shift)
    eta = spectral_abscissa(A)
    cond_i = eta < 0
    Gamma_N = float(sum(np.linalg.norm(Nk, 2) ** 2 for Nk in sys.N))
    Gamma_H = _norm2(sys.H.data) ** 2
    Gamma_Ht = _norm2(sys.H2) ** 2
    Gamma_B = _norm2(sys.B @ sys.B.T)
    Gamma_C = _norm2(sys.C.T @ sys.C)
    if not cond_i:
        nan = float("nan")
        return ConvergenceReport(
            Gamma_N, Gamma_H, Gamma_Ht, Gamma_B, Gamma_C, nan, nan, nan, "unstable", nan,
            False, False, False, False, None, None, None,
        )
    db = decay_bound(A)
    alpha, beta = db.alpha, db.beta
    k = beta**2 / (2 * alpha)
    a, b, c = k * Gamma_H, k * Gamma_N, k * Gamma_B
    D = 1.0 - b
    disc = D * D - 4 * a * c
    cond_ii = b < 1
    cond_iii = 0 < disc <= 1
    P_inf = P_lemma = Q_bound = None
    cond_q = False
    if cond_ii and cond_iii:
        root = math.sqrt(disc)
        # (D - sqrt(disc)) / (2a) written without cancellation
        P_lemma = 2 * c / (D + root)
        P_inf = 2 * P_lemma
        q_rate = k * (Gamma_N + Gamma_Ht * P_inf)
        cond_q = q_rate < 1
        if cond_q:
            Q_bound = k * Gamma_C / (1 - q_rate)
    return ConvergenceReport(
        Gamma_N=Gamma_N,
        Gamma_H=Gamma_H,
        Gamma_H_tilde=Gamma_Ht,
        Gamma_B=Gamma_B,
        Gamma_C=Gamma_C,
        D=D,
        alpha=alpha,
        beta=beta,
        decay_method=db.method,
        discriminant=disc,
        cond_i=cond_i,
        cond_ii=cond_ii,
        cond_iii=cond_iii,
        cond_q=cond_q,
        P_inf=P_inf,
        P_lemma=P_lemma,
        Q_bound=Q_bound,
    )


# ------------------------------------------------------- scalar recurrence
def recurrence_iterates(a: float, b: float, c: float) -> Iterator[float]:
    """Yield ``x_1 = c, x_{k+1} = a x_k^2 + b x_k + c``."""
    x = c
    while True:
        yield x
        x = a * x * x + b * x + c


def fixed_point_limit(a: float, b: float, c: float) -> float:
    """Limit of ``x_{k+1} = a x_k^2 + b x_k + c`` started at ``x_1 = c``.

    Requires ``a, b, c > 0``, ``b < 1`` and ``0 < (b - 1)^2 - 4 a c < 1``; the
    limit is the smaller root ``((1 - b) - sqrt((b - 1)^2 - 4 a c)) / (2 a)``.
    """
    if a <= 0 or b <= 0 or c <= 0:
        raise DomainError(f"a, b, c must be positive, got {a}, {b}, {c}")
    if not b < 1:
        raise DomainError(f"condition b < 1 violated (b = {b})")
    disc = (b - 1) ** 2 - 4 * a * c
    if not 0 < disc < 1:
        raise DomainError(
            f"condition 0 < (b-1)^2 - 4ac < 1 violated (value {disc:.6g})"
        )
    return 2 * c / ((1 - b) + math.sqrt(disc))


# ------------------------------------------------------ quadrature oracle
def _gauss_legendre(q: int, t_max: float):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * t_max * (x + 1), 0.5 * t_max * w


def volterra_gramian_oracle(
    sys: QBSystem, terms: int = 3, quad_points: int = 48, t_max: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Truncated Gramians by direct quadrature of the Volterra kernels.

    Integrates ``sum_i int P_i P_i^T`` and ``sum_i int Q_i Q_i^T`` over
    ``[0, t_max]^i`` with

    * ``P_1(t1) = e^{A t1} B``
    * ``P_2(t1, t2) = e^{A t2} [N_1, ..., N_m] (I_m ⊗ P_1(t1))``
    * ``P_3(t1, t2, t3) = e^{A t3} H (P_1(t1) ⊗ P_1(t2))``

    and the dual kernels built from ``A^T``, ``N_k^T``, ``C^T`` and ``H2``
    (``Q_3 = e^{A^T t3} H2 (P_1(t1) ⊗ Q_1(t2))``). Intended for small ``n``.
    """
    if terms not in (1, 2, 3):
        raise DomainError(f"terms must be 1, 2 or 3, got {terms}")
    n, m = sys.n, sys.m
    if n > 12:
        raise DomainError(f"quadrature oracle is limited to n <= 12 (got {n})")
    A = sys.A
    eta = spectral_abscissa(A)
    if eta >= 0:
        raise NumericalError(f"A is not Hurwitz (spectral abscissa {eta:.3g})")
    if t_max is None:
        t_max = 1.0 / -eta
        while np.linalg.norm(sla.expm(A * t_max), 2) ** 2 > 1e-12:
            t_max *= 1.5
    tail = np.linalg.norm(sla.expm(A * t_max), 2) ** 2
    if tail > 1e-6:
        raise NumericalError(
            f"quadrature truncation estimate {tail:.2e} exceeds 1e-6; increase t_max"
        )
    t, w = _gauss_legendre(quad_points, t_max)
    E = np.stack([sla.expm(A * ti) for ti in t])  # (q, n, n)
    Et = E.transpose(0, 2, 1)
    K1 = E @ sys.B  # (q, n, m)
    L1 = Et @ sys.C.T  # (q, n, p)
    P = np.einsum("a,aij,akj->ik", w, K1, K1)
    Q = np.einsum("a,aij,akj->ik", w, L1, L1)
    if terms >= 2 and m:
        # [N_1..N_m](I_m ⊗ K) = [N_1 K, ..., N_m K]
        inner_p = np.concatenate([np.einsum("ij,ajk->aik", Nk, K1) for Nk in sys.N], axis=2)
        inner_q = np.concatenate([np.einsum("ji,ajk->aik", Nk, L1) for Nk in sys.N], axis=2)
        P += _double_integral(w, E, inner_p)
        Q += _double_integral(w, Et, inner_q)
    if terms >= 3:
        Hd = sys.H.toarray()
        H2 = sys.H2
        H2 = H2.toarray() if hasattr(H2, "toarray") else np.asarray(H2)
        # H (K(t1) ⊗ K(t2)) for every pair (t1, t2)
        kp = np.einsum("aim,bjn->abijmn", K1, K1)  # kron(x, y)[i*n + j]
        q = len(t)
        KK = kp.reshape(q, q, n * n, m * m)
        Gp = np.einsum("ic,abcd->abid", Hd, KK)
        kq = np.einsum("aim,bjn->abijmn", K1, L1).reshape(q, q, n * n, m * sys.p)
        Gq = np.einsum("ic,abcd->abid", H2, kq)
        w2 = np.outer(w, w)
        P += _triple_integral(w, w2, E, Gp)
        Q += _triple_integral(w, w2, Et, Gq)
    return 0.5 * (P + P.T), 0.5 * (Q + Q.T)


def _double_integral(w, E, inner):
    # M = sum_a w_a inner_a inner_a^T ; result sum_b w_b E_b M E_b^T
    M = np.einsum("a,aij,akj->ik", w, inner, inner)
    return np.einsum("b,bij,jk,blk->il", w, E, M, E)


def _triple_integral(w, w2, E, G):
    M = np.einsum("ab,abij,abkj->ik", w2, G, G)
    return np.einsum("c,cij,jk,clk->il", w, E, M, E)
