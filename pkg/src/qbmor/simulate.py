"""Time integration of QB systems, output comparison and Lyapunov certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import QBSystem, apply_quadratic, quadratic_jacobian
from .errors import DimensionError, DivergenceError, DomainError

DIVERGENCE_LIMIT = 1e8
STATE_STORAGE_LIMIT = 2000


# ------------------------------------------------------------------ inputs
NAMED_SIGNALS: dict[str, Callable[[float], float]] = {
    "rc_u1": lambda t: 5.0 * (math.sin(2.0 * math.pi * t / 10.0) + 1.0),
    "rc_u2": lambda t: 10.0 * t * t * math.exp(-t / 5.0),
    "ci_u1": lambda t: 5.0 * t * math.exp(-t),
    "ci_u2": lambda t: 30.0 * (math.sin(math.pi * t) + 1.0),
    "fn_i0": lambda t: 5e4 * t**3 * math.exp(-15.0 * t),
    "const_one": lambda t: 1.0,
}


@dataclass(frozen=True)
class InputSignal:
    """Scalar input signal.

    Parameters
    ----------
    kind
        ``"zero"``, ``"sampled"`` (piecewise linear through ``samples``) or
        ``"named"`` (one of :data:`NAMED_SIGNALS`).
    name
        Signal name for ``kind="named"``.
    samples
        ``(t, values)`` table for ``kind="sampled"``.
    """

    kind: str = "zero"
    name: str | None = None
    samples: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "sampled", "named"):
            raise DomainError(f"unknown signal kind {self.kind!r}")
        if self.kind == "named" and self.name not in NAMED_SIGNALS:
            raise DomainError(f"unknown signal {self.name!r}; known: {sorted(NAMED_SIGNALS)}")
        if self.kind == "sampled":
            if self.samples is None:
                raise DomainError("sampled signal needs a (t, values) table")
            t, v = (np.asarray(a, dtype=float) for a in self.samples)
            if t.ndim != 1 or t.shape != v.shape or t.size < 1:
                raise DimensionError("sample table must be two equal-length vectors")
            if np.any(np.diff(t) <= 0):
                raise DomainError("sample times must be strictly increasing")
            object.__setattr__(self, "samples", (t, v))

    @classmethod
    def zero(cls) -> "InputSignal":
        return cls("zero")

    @classmethod
    def named(cls, name: str) -> "InputSignal":
        return cls("named", name=name)

    @classmethod
    def sampled(cls, t, values) -> "InputSignal":
        return cls("sampled", samples=(t, values))

    def __call__(self, t: float) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "named":
            return NAMED_SIGNALS[self.name](float(t))
        ts, vs = self.samples
        return float(np.interp(t, ts, vs))

    def describe(self) -> str:
        if self.kind == "named":
            return self.name
        return self.kind


def _input_function(u, m: int) -> Callable[[float], np.ndarray]:
    if m == 0:
        return lambda t: np.zeros(0)
    if u is None:
        return lambda t: np.zeros(m)
    if isinstance(u, (InputSignal, str)):
        signals = [u]
    elif callable(u):
        def f(t):
            val = np.atleast_1d(np.asarray(u(t), dtype=float))
            if val.shape != (m,):
                raise DimensionError(f"input function returned shape {val.shape}, expected ({m},)")
            return val
        return f
    else:
        signals = list(u)
    if len(signals) == 1 and m > 1:
        raise DimensionError(f"system has {m} inputs but one signal was given")
    if len(signals) != m:
        raise DimensionError(f"expected {m} input signals, got {len(signals)}")
    signals = [s if isinstance(s, InputSignal) else InputSignal.named(s) for s in signals]
    return lambda t: np.array([s(t) for s in signals])


# ---------------------------------------------------------------- dynamics
def qb_rhs(sys: QBSystem, x, u) -> np.ndarray:
    """``A x + H (x ⊗ x) + sum_k N_k x u_k + B u``."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape != (sys.n,) or u.shape != (sys.m,):
        raise DimensionError(
            f"state {x.shape} / input {u.shape} do not match n={sys.n}, m={sys.m}"
        )
    out = sys.A @ x + apply_quadratic(sys.H, x) + sys.B @ u
    for Nk, uk in zip(sys.N, u):
        if uk:
            out += uk * (Nk @ x)
    return out


def _maybe_sparse(M: np.ndarray):
    if M.shape[0] >= 100 and np.count_nonzero(M) < 0.1 * M.size:
        return sp.csr_matrix(M)
    return M


class _Operators:
    """Matrices prepared for repeated evaluation."""

    def __init__(self, sys: QBSystem):
        self.sys = sys
        self.A = _maybe_sparse(sys.A)
        self.N = [_maybe_sparse(Nk) for Nk in sys.N]
        self.active_N = [bool(np.any(Nk)) for Nk in sys.N]
        self.B = sys.B
        self.has_H = sys.H.nnz > 0

    def nonlinear(self, x, u):
        out = self.B @ u if u.size else np.zeros_like(x)
        if self.has_H:
            out = out + apply_quadratic(self.sys.H, x)
        for Nk, active, uk in zip(self.N, self.active_N, u):
            if active and uk:
                out = out + uk * (Nk @ x)
        return out

    def full(self, x, u):
        return self.A @ x + self.nonlinear(x, u)

    def jacobian(self, x, u):
        J = self.A
        if self.has_H:
            J = J + quadratic_jacobian(self.sys.H, x)
        for Nk, active, uk in zip(self.N, self.active_N, u):
            if active and uk:
                J = J + uk * Nk
        return J


@dataclass
class Trajectory:
    """Sampled solution of a simulation.

    Attributes
    ----------
    t
        Time grid.
    Y
        Outputs, shape ``(p, len(t))``.
    X
        States, shape ``(n, len(t))`` or ``None`` when not stored.
    stats
        Step count, method and, for lifted benchmarks, the maximal manifold
        defect.
    """

    t: np.ndarray
    Y: np.ndarray
    X: np.ndarray | None = None
    stats: dict = field(default_factory=dict)


def integrate(
    sys: QBSystem,
    u=None,
    t_span: tuple[float, float] = (0.0, 1.0),
    dt: float = 1e-3,
    method: str = "rk4",
    x0=None,
    store_states: bool | None = None,
    defect: Callable[[np.ndarray], float] | None = None,
) -> Trajectory:
    """Fixed-step integration of a QB system.

    Parameters
    ----------
    sys
        System to integrate.
    u
        :class:`InputSignal`, list of signals (one per input), signal names,
        a callable ``t -> u(t)`` or ``None`` for zero input.
    t_span
        ``(t0, t1)``; the number of steps is ``round((t1 - t0) / dt)``.
    dt
        Step size.
    method
        ``"rk4"`` (classical Runge-Kutta), ``"imex_cn"`` (Crank-Nicolson on
        ``A x`` with a Heun predictor-corrector for the remaining terms) or
        ``"ros2"`` (two-stage L-stable Rosenbrock method with the exact
        Jacobian; second order, for problems whose nonlinear terms are stiff).
    x0
        Initial state, zero by default.
    store_states
        Keep the state history; default is ``n <= 2000``.
    defect
        Optional function of the state whose maximum over the run is recorded
        in ``stats['max_defect']``.
    """
    if dt <= 0:
        raise DomainError(f"step size must be positive, got {dt}")
    t0, t1 = map(float, t_span)
    if t1 <= t0:
        raise DomainError(f"empty time span {t_span}")
    steps = int(round((t1 - t0) / dt))
    if steps < 1:
        raise DomainError("time span shorter than one step")
    n = sys.n
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise DimensionError(f"initial state has shape {x.shape}, expected ({n},)")
    ufun = _input_function(u, sys.m)
    ops = _Operators(sys)
    if store_states is None:
        store_states = n <= STATE_STORAGE_LIMIT
    t = t0 + dt * np.arange(steps + 1)
    Y = np.empty((sys.p, steps + 1))
    X = np.empty((n, steps + 1)) if store_states else None
    C = sys.C
    Y[:, 0] = C @ x
    if X is not None:
        X[:, 0] = x
    max_def = defect(x) if defect is not None else None

    if method == "rk4":
        def step(x, i):
            ta = t[i]
            ua, um, ub = ufun(ta), ufun(ta + 0.5 * dt), ufun(ta + dt)
            k1 = ops.full(x, ua)
            k2 = ops.full(x + 0.5 * dt * k1, um)
            k3 = ops.full(x + 0.5 * dt * k2, um)
            k4 = ops.full(x + dt * k3, ub)
            return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    elif method == "imex_cn":
        solve, explicit = _cn_operators(ops.A, dt)
        u_next = ufun(t[0])

        def step(x, i):
            nonlocal u_next
            ua, u_next = u_next, ufun(t[i + 1])
            fa = ops.nonlinear(x, ua)
            base = explicit(x)
            xp = solve(base + dt * fa)
            fb = ops.nonlinear(xp, u_next)
            return solve(base + 0.5 * dt * (fa + fb))
    elif method == "ros2":
        gamma = 1.0 + 1.0 / math.sqrt(2.0)

        def step(x, i):
            ta = t[i]
            ua, ub = ufun(ta), ufun(ta + dt)
            solve = _factorize(_shifted_identity(ops.jacobian(x, ua), gamma * dt))
            k1 = solve(ops.full(x, ua))
            k2 = solve(ops.full(x + dt * k1, ub) - 2.0 * k1)
            return x + dt * (1.5 * k1 + 0.5 * k2)
    else:
        raise DomainError(f"unknown method {method!r}; use 'rk4', 'imex_cn' or 'ros2'")

    for i in range(steps):
        x = step(x, i)
        nrm = np.linalg.norm(x)
        if not np.isfinite(nrm):
            raise DivergenceError(f"non-finite state at t = {t[i + 1]:.6g}")
        if nrm > DIVERGENCE_LIMIT:
            raise DivergenceError(f"state norm {nrm:.3e} exceeds {DIVERGENCE_LIMIT:g} at t = {t[i + 1]:.6g}")
        Y[:, i + 1] = C @ x
        if X is not None:
            X[:, i + 1] = x
        if defect is not None:
            max_def = max(max_def, defect(x))
    stats = {"steps": steps, "method": method, "dt": dt, "final_state_norm": float(np.linalg.norm(x))}
    if max_def is not None:
        stats["max_defect"] = float(max_def)
    stats["final_state"] = x
    return Trajectory(t=t, Y=Y, X=X, stats=stats)


def _shifted_identity(J, c):
    """``I - c J`` in the storage format of ``J``."""
    n = J.shape[0]
    if sp.issparse(J):
        return (sp.identity(n, format="csc") - c * J).tocsc()
    return np.eye(n) - c * J


def _factorize(M):
    if sp.issparse(M):
        return spla.splu(M).solve
    lu = sla.lu_factor(M)
    return lambda b: sla.lu_solve(lu, b)


def _cn_operators(A, dt):
    n = A.shape[0]
    if sp.issparse(A):
        I = sp.identity(n, format="csc")
        lhs = (I - 0.5 * dt * A).tocsc()
        rhs = (I + 0.5 * dt * A).tocsr()
        lu = spla.splu(lhs)
        return lu.solve, lambda x: rhs @ x
    I = np.eye(n)
    lu = sla.lu_factor(I - 0.5 * dt * A)
    rhs = I + 0.5 * dt * A
    return (lambda b: sla.lu_solve(lu, b)), (lambda x: rhs @ x)


# ------------------------------------------------------------- comparison
def _safe_ratio(num, den):
    if den > 0:
        return num / den
    return np.where(np.asarray(num) == 0, 0.0, np.inf)


def compare_outputs(full: Trajectory, reduced: Trajectory) -> dict:
    """Relative output errors between two trajectories on the same grid.

    Returns ``rel_err_t`` (``||y(t) - y_hat(t)|| / max_t ||y(t)||``),
    ``rel_L2`` (Frobenius norm over all samples) and ``rel_Linf``.
    """
    if full.t.shape != reduced.t.shape or not np.allclose(full.t, reduced.t, rtol=0, atol=1e-12):
        raise DimensionError("trajectories are sampled on different time grids")
    if full.Y.shape != reduced.Y.shape:
        raise DimensionError(f"output shapes differ: {full.Y.shape} vs {reduced.Y.shape}")
    diff = full.Y - reduced.Y
    err = np.linalg.norm(diff, axis=0)
    peak = float(np.max(np.linalg.norm(full.Y, axis=0))) if full.Y.size else 0.0
    rel_t = np.asarray(_safe_ratio(err, peak), dtype=float)
    rel_l2 = float(_safe_ratio(np.linalg.norm(diff), np.linalg.norm(full.Y)))
    rel_inf = float(_safe_ratio(np.max(err) if err.size else 0.0, peak))
    return {"rel_err_t": rel_t, "rel_L2": rel_l2, "rel_Linf": rel_inf}


# ------------------------------------------------------------ certificate
@dataclass(frozen=True)
class CertificateResult:
    """Outcome of :func:`lyapunov_certificate`.

    ``decreasing`` is true when ``F(x) = x^T Sigma_1 x`` drops at every step
    (by more than ``-tol F(x0)``; strictly for the default ``tol = 0``) and its
    time derivative is negative at every sample with ``x != 0``.
    """

    decreasing: bool
    t: np.ndarray
    F: np.ndarray
    dF: np.ndarray

    def __bool__(self) -> bool:
        return self.decreasing


def lyapunov_certificate(model, x0, t_span=(0.0, 5.0), dt: float = 1e-3, method: str = "rk4",
                         tol: float = 0.0) -> CertificateResult:
    """Check that ``x^T Sigma_1 x`` decreases along the autonomous reduced flow.

    Raises
    ------
    DomainError
        If ``||x0||`` is not below the stability radius of ``model``.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    r = model.radius
    if not np.linalg.norm(x0) < r:
        raise DomainError(f"||x0|| = {np.linalg.norm(x0):.6g} is not below the stability radius r = {r:.6g}")
    sys_hat = model.sys_hat
    Sigma1 = model.sigma[: model.n_hat]
    autonomous = sys_hat.replace(B=np.zeros_like(sys_hat.B))
    traj = integrate(autonomous, None, t_span, dt, method, x0=x0, store_states=True)
    X = traj.X
    F = np.einsum("i,it,it->t", Sigma1, X, X)
    ops = _Operators(autonomous)
    zero_u = np.zeros(autonomous.m)
    dF = np.array([2.0 * (Sigma1 * X[:, i]) @ ops.full(X[:, i], zero_u) for i in range(X.shape[1])])
    nonzero = np.linalg.norm(X, axis=0) > 0
    monotone = bool(np.all(np.diff(F) < tol * F[0]))
    negative = bool(np.all(dF[nonzero] < 0))
    return CertificateResult(monotone and negative, traj.t, F, dF)


__all__ = [
    "CertificateResult",
    "InputSignal",
    "NAMED_SIGNALS",
    "Trajectory",
    "compare_outputs",
    "integrate",
    "lyapunov_certificate",
    "qb_rhs",
]
