"""Benchmark quadratic-bilinear systems.

Every PDE benchmark is discretized by finite differences and turned into a
QB system by an exact lifting: auxiliary states equal to squares (or shifted
exponentials) of the primary states. Each generator comes with

* ``<family>_rhs``: the unlifted right-hand side,
* ``<family>_lift``: the map from primary to consistent lifted states,

so that the lifting can be checked against the original dynamics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Any

import numpy as np

from .core import HessianTensor, QBSystem
from .errors import DimensionError, DomainError


class _Coords:
    """Accumulates ``T[i, j, k] += value`` entries of a Hessian."""

    def __init__(self):
        self.i, self.j, self.k, self.v = [], [], [], []

    def add(self, i, j, k, value):
        i, j, k = np.broadcast_arrays(np.asarray(i), np.asarray(j), np.asarray(k))
        value = np.broadcast_to(np.asarray(value, dtype=float), i.shape)
        self.i.append(i.ravel())
        self.j.append(j.ravel())
        self.k.append(k.ravel())
        self.v.append(value.ravel())

    def tensor(self, n: int) -> HessianTensor:
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)  # noqa: E731
        return HessianTensor.from_coords(
            cat(self.i).astype(np.int64),
            cat(self.j).astype(np.int64),
            cat(self.k).astype(np.int64),
            cat(self.v),
            (n, n, n),
        )


# ----------------------------------------------------------- Chafee-Infante
def _ci_laplacian(k: int, dx: float) -> np.ndarray:
    """Second differences with Dirichlet data at x=0 and a mirrored ghost at x=L."""
    Lap = (np.diag(-2.0 * np.ones(k)) + np.diag(np.ones(k - 1), 1) + np.diag(np.ones(k - 1), -1))
    Lap[k - 1, k - 2] = 2.0
    return Lap / dx**2


def chafee_infante(k: int, L: float = 1.0, w_linear: float = 2.0) -> QBSystem:
    """Chafee-Infante equation ``v_t = v_xx + v - v^3`` as a QB system.

    Grid ``x_i = i L / k`` (``i = 1..k``), Dirichlet input ``v(0, t) = u(t)``
    and ``v_x(L, t) = 0`` through a mirrored ghost node. The lifted state is
    ``(v, w)`` with ``w_i = v_i^2``:

    * ``v_i' = lap_i + v_i - v_i w_i``
    * ``w_i' = 2 v_i lap_i + c w_i + (2 - c) v_i^2 - 2 w_i^2``

    with ``c = w_linear`` (default 2). In ``2 v_i lap_i`` the diagonal
    contribution ``2 Lap_ii v_i^2`` is written as ``2 Lap_ii w_i`` and kept in
    ``A``; this makes ``A`` Hurwitz, attracts trajectories to ``w = v^2`` and
    lets an implicit integrator absorb the stiff part. The output is ``v_k``.
    """
    if k < 3:
        raise DimensionError(f"Chafee-Infante needs k >= 3, got {k}")
    if L <= 0:
        raise DomainError("length must be positive")
    dx = L / k
    n = 2 * k
    v = np.arange(k)
    w = k + v
    Lap = _ci_laplacian(k, dx)
    A = np.zeros((n, n))
    A[:k, :k] = Lap + np.eye(k)
    A[w, w] = 2.0 * np.diag(Lap) + w_linear
    T = _Coords()
    T.add(v, v, w, -1.0)
    off = Lap - np.diag(np.diag(Lap))
    rows, cols = np.nonzero(off)
    T.add(w[rows], v[rows], v[cols], 2.0 * off[rows, cols])
    if w_linear != 2.0:
        T.add(w, v, v, 2.0 - w_linear)
    T.add(w, w, w, -2.0)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0 / dx**2
    N1 = np.zeros((n, n))
    N1[w[0], 0] = 2.0 / dx**2
    C = np.zeros((1, n))
    C[0, k - 1] = 1.0
    meta = {"family": "chafee_infante", "k": k, "L": L, "w_linear": w_linear}
    return QBSystem(A=A, H=T.tensor(n), N=(N1,), B=B, C=C, meta=meta)


def chafee_infante_rhs(v, u: float, L: float = 1.0) -> np.ndarray:
    """Unlifted semi-discrete right-hand side ``lap(v) + v - v^3``."""
    v = np.asarray(v, dtype=float)
    k = v.size
    dx = L / k
    lap = _ci_laplacian(k, dx) @ v
    lap[0] += u / dx**2
    return lap + v - v**3


def chafee_infante_lift(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.concatenate([v, v**2])


def chafee_infante_lifted_rhs(v, u: float, L: float = 1.0) -> np.ndarray:
    """Chain-rule derivative of the lifted state ``(v, v^2)``."""
    dv = chafee_infante_rhs(v, u, L)
    return np.concatenate([dv, 2 * np.asarray(v) * dv])


# ------------------------------------------------------- FitzHugh-Nagumo
FN_DEFAULTS = {"eps": 0.015, "h": 0.5, "gamma": 2.0, "q": 0.05}


def _fn_laplacian(k: int, dx: float) -> np.ndarray:
    """Cell-centred second differences with zero-flux ends."""
    Lap = (np.diag(-2.0 * np.ones(k)) + np.diag(np.ones(k - 1), 1) + np.diag(np.ones(k - 1), -1))
    Lap[0, 0] = Lap[-1, -1] = -1.0
    return Lap / dx**2


def fitzhugh_nagumo(
    k: int,
    L: float = 0.2,
    eps: float = 0.015,
    h: float = 0.5,
    gamma: float = 2.0,
    q: float = 0.05,
    z_damping: float | None = None,
) -> QBSystem:
    """FitzHugh-Nagumo system as a QB system of order ``3k``.

    ``eps v_t = eps^2 v_xx + f(v) - w + q``, ``w_t = h v - gamma w + q`` with
    ``f(v) = v (v - 0.1)(1 - v)``, flux input ``v_x(0, t) = i0(t)`` and
    ``v_x(L, t) = 0`` on ``k`` cells of width ``L / k``. The constant source
    ``q`` is carried by a second input that is identically one.

    The lifted state is ``(v, w, z)`` with ``z_i = v_i^2``; the cubic term
    becomes ``v z`` and

    ``z' = 2 eps v lap(v) + (-2 z^2 + 2.2 v z - 2 v w - (0.2 + c eps) v^2) / eps
    + c z + (2 q / eps) v u_2 + 2 v (B_1 u_1)``

    with ``c = z_damping`` (default ``-1 / eps``), which agrees with
    ``2 v v'`` on ``z = v^2`` and keeps both ``A`` and the manifold stable.
    As for Chafee-Infante, the diagonal part of ``2 eps v lap(v)`` is written
    as ``2 eps Lap_ii z_i`` and kept in ``A``.
    Inputs are ``(i0, 1)``; outputs are ``(v_1, w_1)``.
    """
    if k < 3:
        raise DimensionError(f"FitzHugh-Nagumo needs k >= 3, got {k}")
    if min(L, eps, h, gamma, q) <= 0:
        raise DomainError("all FitzHugh-Nagumo parameters must be positive")
    if z_damping is None:
        z_damping = -1.0 / eps
    dx = L / k
    n = 3 * k
    v = np.arange(k)
    w = k + v
    z = 2 * k + v
    Lap = _fn_laplacian(k, dx)
    A = np.zeros((n, n))
    A[:k, :k] = eps * Lap - (0.1 / eps) * np.eye(k)
    A[v, w] = -1.0 / eps
    A[w, v] = h
    A[w, w] = -gamma
    A[z, z] = z_damping + 2.0 * eps * np.diag(Lap)
    T = _Coords()
    T.add(v, v, z, -1.0 / eps)
    T.add(v, v, v, 1.1 / eps)
    off = Lap - np.diag(np.diag(Lap))
    rows, cols = np.nonzero(off)
    T.add(z[rows], v[rows], v[cols], 2.0 * eps * off[rows, cols])
    T.add(z, z, z, -2.0 / eps)
    T.add(z, v, z, 2.2 / eps)
    T.add(z, v, w, -2.0 / eps)
    T.add(z, v, v, -0.2 / eps - z_damping)
    B = np.zeros((n, 2))
    B[0, 0] = -eps / dx
    B[v, 1] = q / eps
    B[w, 1] = q
    N1 = np.zeros((n, n))
    N1[z[0], 0] = -2.0 * eps / dx
    N2 = np.zeros((n, n))
    N2[z, v] = 2.0 * q / eps
    C = np.zeros((2, n))
    C[0, 0] = 1.0
    C[1, k] = 1.0
    meta = {
        "family": "fitzhugh_nagumo",
        "k": k,
        "L": L,
        "eps": eps,
        "h": h,
        "gamma": gamma,
        "q": q,
        "z_damping": z_damping,
    }
    return QBSystem(A=A, H=T.tensor(n), N=(N1, N2), B=B, C=C, meta=meta)


def fitzhugh_nagumo_rhs(v, w, i0: float, L: float = 0.2, eps: float = 0.015, h: float = 0.5,
                        gamma: float = 2.0, q: float = 0.05, source: float = 1.0):
    """Unlifted semi-discrete right-hand side ``(v', w')``."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    k = v.size
    dx = L / k
    lap = _fn_laplacian(k, dx) @ v
    lap[0] -= i0 / dx
    f = v * (v - 0.1) * (1 - v)
    dv = eps * lap + (f - w + q * source) / eps
    dw = h * v - gamma * w + q * source
    return dv, dw


def fitzhugh_nagumo_lift(v, w) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.concatenate([v, np.asarray(w, dtype=float), v**2])


def fitzhugh_nagumo_lifted_rhs(v, w, i0: float, source: float = 1.0, **params) -> np.ndarray:
    dv, dw = fitzhugh_nagumo_rhs(v, w, i0, source=source, **params)
    return np.concatenate([dv, dw, 2 * np.asarray(v) * dv])


# -------------------------------------------------------------- RC ladder
RC_EXPONENT = 40.0


def _rc_incidence(k: int) -> np.ndarray:
    """``delta = D v``: ``delta_0 = v_1`` and ``delta_j = v_j - v_{j+1}``."""
    D = np.zeros((k, k))
    D[0, 0] = 1.0
    r = np.arange(1, k)
    D[r, r - 1] = 1.0
    D[r, r] = -1.0
    return D


def rc_ladder(k: int) -> QBSystem:
    """Nonlinear RC ladder with ``k`` unit capacitors as a QB system of order ``2k``.

    Element ``j`` carries the current ``g(delta_j) = exp(40 delta_j) - delta_j - 1``
    where ``delta = D v`` are the element voltages (node 1 to ground, then
    between consecutive nodes). A current source ``u`` feeds node 1:
    ``v' = -D^T g(D v) + e_1 u`` and ``y = v_1``.

    With ``y_j = exp(40 delta_j) - 1`` we get ``g = y - delta`` and
    ``y' = 40 (1 + y) * (D v')``, so ``x = (v, y)`` obeys QB dynamics with the
    origin as equilibrium. The linear part has ``k`` zero eigenvalues.
    """
    if k < 2:
        raise DimensionError(f"RC ladder needs k >= 2, got {k}")
    D = _rc_incidence(k)
    n = 2 * k
    c = RC_EXPONENT
    v = np.arange(k)
    yv = k + v
    # v' = D^T D v - D^T y + e1 u
    Lv = np.hstack([D.T @ D, -D.T])  # k x n
    A = np.zeros((n, n))
    A[:k] = Lv
    A[k:] = c * D @ Lv
    # y' quadratic part: c * y_j * (D v')_j with (D v')_j = (D Lv x)_j + D[j,0] u
    DL = D @ Lv
    T = _Coords()
    rows, cols = np.nonzero(DL)
    T.add(yv[rows], yv[rows], cols, c * DL[rows, cols])
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    B[k:, 0] = c * D[:, 0]
    N1 = np.zeros((n, n))
    N1[yv, yv] = c * D[:, 0]
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    meta = {"family": "rc_ladder", "k": k}
    return QBSystem(A=A, H=T.tensor(n), N=(N1,), B=B, C=C, meta=meta)


def rc_ladder_rhs(v, u: float) -> np.ndarray:
    """Unlifted right-hand side ``-D^T g(D v) + e_1 u``."""
    v = np.asarray(v, dtype=float)
    D = _rc_incidence(v.size)
    delta = D @ v
    g = np.expm1(RC_EXPONENT * delta) - delta
    dv = -D.T @ g
    dv[0] += u
    return dv


def rc_ladder_lift(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    D = _rc_incidence(v.size)
    return np.concatenate([v, np.expm1(RC_EXPONENT * (D @ v))])


def rc_ladder_lifted_rhs(v, u: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    D = _rc_incidence(v.size)
    dv = rc_ladder_rhs(v, u)
    return np.concatenate([dv, RC_EXPONENT * np.exp(RC_EXPONENT * (D @ v)) * (D @ dv)])


# --------------------------------------------------------- manifold defect
def manifold_defect(sys: QBSystem, x) -> float:
    """Max-norm distance of ``x`` from the lifting manifold of a benchmark.

    Returns ``nan`` for systems without a known lifting.
    """
    x = np.asarray(x, dtype=float)
    family = sys.meta.get("family")
    k = sys.meta.get("k")
    if family == "chafee_infante":
        return float(np.max(np.abs(x[k:] - x[:k] ** 2)))
    if family == "fitzhugh_nagumo":
        return float(np.max(np.abs(x[2 * k :] - x[:k] ** 2)))
    if family == "rc_ladder":
        v = x[:k]
        delta = np.concatenate([v[:1], v[:-1] - v[1:]])
        return float(np.max(np.abs(x[k:] - np.expm1(RC_EXPONENT * delta))))
    return float("nan")


# ---------------------------------------------------------------- scalar
@dataclass(frozen=True)
class ScalarExample:
    """Scalar QB system ``x' = a x + h x^2 + nn x u + b u``, ``y = c x``."""

    a: float
    h: float
    nn: float
    b: float
    c: float

    def __post_init__(self):
        if not self.a < 0:
            raise DomainError(f"scalar example needs a < 0, got a = {self.a}")


def scalar_system(ex: ScalarExample) -> QBSystem:
    """One-dimensional QB system of a :class:`ScalarExample`."""
    if not isinstance(ex, ScalarExample):
        ex = ScalarExample(*ex)
    return QBSystem(
        A=[[ex.a]],
        H=HessianTensor([[ex.h]], symmetric=True),
        N=(np.array([[ex.nn]]),),
        B=[[ex.b]],
        C=[[ex.c]],
        meta={"family": "scalar", **asdict(ex)},
    )


def scalar_gramians(ex: ScalarExample) -> dict:
    """Closed-form Gramians of the scalar system.

    ``P`` is the smallest nonnegative root of ``h^2 P^2 + (2a + nn^2) P + b^2 = 0``
    (the limit of the fixed-point iteration), ``Q = -c^2 / (2a + nn^2 + h^2 P)``.
    Truncated Gramians follow from the scalar Lyapunov chain. The entry
    ``P_printed`` evaluates ``-(-a - sqrt(a^2 - h^2 b^2)) / h^2`` as published,
    which has the opposite sign of ``P`` for ``nn = 0``.
    """
    a, h, nn, b, c = ex.a, ex.h, ex.nn, ex.b, ex.c
    s = 2 * a + nn**2
    if s >= 0:
        raise DomainError("2a + nn^2 must be negative for finite Gramians")
    if h == 0:
        P = -b * b / s
    else:
        disc = s * s - 4 * h * h * b * b
        if disc < -1e-14 * s * s:
            raise DomainError(f"no real Gramian: discriminant {disc:.3g} < 0")
        disc = max(disc, 0.0)
        # smaller root, cancellation-free
        P = 2 * b * b / (-s + math.sqrt(disc))
    Q = -c * c / (s + h * h * P)
    P1 = -b * b / (2 * a)
    Q1 = -c * c / (2 * a)
    PT = -(h * h * P1 * P1 + nn * nn * P1 + b * b) / (2 * a)
    QT = -(h * h * P1 * Q1 + nn * nn * Q1 + c * c) / (2 * a)
    out = {"P": P, "Q": Q, "P1": P1, "Q1": Q1, "P_T": PT, "Q_T": QT}
    if h != 0 and a * a - h * h * b * b >= 0:
        out["P_printed"] = -(-a - math.sqrt(a * a - h * h * b * b)) / (h * h)
    return out


def scalar_energy_functionals(ex: ScalarExample, x: float) -> dict:
    """Exact energy functionals of the scalar example and their quadratic forms.

    ``Lc = -(a x^2 + 2/3 h x^3) / b^2``,
    ``Lo = -(c^2 / 2h) (x - (a/h) log((a + h x) / a))`` (``-c^2 x^2 / 4a`` for
    ``h = 0``), together with ``x^2 / 2P``, ``Q x^2 / 2``, ``x^2 / 2P_T`` and
    ``Q_T x^2 / 2``. Only valid for ``nn = 0``.
    """
    if not isinstance(ex, ScalarExample):
        ex = ScalarExample(*ex)
    if ex.nn != 0:
        raise DomainError("closed-form energy functionals require nn = 0")
    if ex.b == 0:
        raise DomainError("closed-form energy functionals require b != 0")
    a, h, b, c = ex.a, ex.h, ex.b, ex.c
    x = float(x)
    Lc = -(a * x * x + 2.0 / 3.0 * h * x**3) / (b * b)
    if h == 0:
        Lo = -c * c * x * x / (4 * a)
    else:
        ratio = (a + h * x) / a
        if ratio <= 0:
            bound = -a / h
            interval = f"x < {bound:g}" if h > 0 else f"x > {bound:g}"
            raise DomainError(f"logarithm undefined at x = {x:g}; admissible interval is {interval}")
        Lo = -(c * c / (2 * h)) * (x - (a / h) * math.log1p(h * x / a))
    g = scalar_gramians(ex)
    return {
        "Lc": Lc,
        "Lo": Lo,
        "Lc_quad": x * x / (2 * g["P"]),
        "Lo_quad": g["Q"] * x * x / 2,
        "Lc_trunc": x * x / (2 * g["P_T"]),
        "Lo_trunc": g["Q_T"] * x * x / 2,
    }


# -------------------------------------------------------------- ModelSpec
FAMILIES = ("chafee_infante", "fitzhugh_nagumo", "rc_ladder", "scalar")


@dataclass(frozen=True)
class ModelSpec:
    """Serializable description of a benchmark system."""

    family: str
    k: int = 0
    L: float | None = None
    params: dict = field(default_factory=dict)
    shift: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown model family {self.family!r}; choose from {FAMILIES}")
        if self.family in ("chafee_infante", "fitzhugh_nagumo") and self.k < 3:
            raise DomainError(f"{self.family} needs k >= 3")
        if self.family == "rc_ladder" and self.k < 2:
            raise DomainError("rc_ladder needs k >= 2")
        if self.L is not None and self.L <= 0:
            raise DomainError("length L must be positive")
        if self.shift < 0:
            raise DomainError("shift must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelSpec":
        known = {"family", "k", "L", "params", "shift"}
        extra = set(d) - known
        if extra:
            raise DomainError(f"unknown model fields: {sorted(extra)}")
        return cls(
            family=d["family"],
            k=int(d.get("k", 0)),
            L=None if d.get("L") is None else float(d["L"]),
            params=dict(d.get("params", {})),
            shift=float(d.get("shift", 0.0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"family": self.family, "k": self.k, "L": self.L, "params": dict(self.params), "shift": self.shift}

    def build(self) -> QBSystem:
        return build_model(self)


def build_model(spec: ModelSpec) -> QBSystem:
    """Instantiate the QB system described by ``spec``."""
    p = dict(spec.params)
    if spec.family == "chafee_infante":
        sys = chafee_infante(spec.k, 1.0 if spec.L is None else spec.L, **p)
    elif spec.family == "fitzhugh_nagumo":
        sys = fitzhugh_nagumo(spec.k, 0.2 if spec.L is None else spec.L, **p)
    elif spec.family == "rc_ladder":
        sys = rc_ladder(spec.k, **p)
    else:
        sys = scalar_system(ScalarExample(**p))
    return sys.replace(meta={**sys.meta, "spec": spec.to_dict()})
