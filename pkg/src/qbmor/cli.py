"""Command-line driver.

Every failure ends with exit code 2 (usage), 3 (numerical) or 4 (I/O) and a
single JSON line ``{"error": ..., "message": ..., "exit_code": ...}`` on
standard error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import mmio
from .balancing import balance_and_reduce, hankel_values
from .errors import DomainError, FormatError, QBMORError
from .gramians import GramianPair, convergence_report, iterate_gramians, truncated_gramians
from .models import (
    FAMILIES,
    ModelSpec,
    ScalarExample,
    build_model,
    scalar_energy_functionals,
    scalar_gramians,
)
from .simulate import NAMED_SIGNALS, InputSignal, Trajectory, compare_outputs, integrate

log = logging.getLogger("qbmor")


class UsageError(QBMORError):
    exit_code = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers
def _parse_params(items) -> dict:
    params = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"parameter {item!r} is not of the form key=value")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def _load_signal(spec: str) -> InputSignal:
    if spec in NAMED_SIGNALS:
        return InputSignal.named(spec)
    if spec == "zero":
        return InputSignal.zero()
    path = Path(spec)
    if not path.is_file():
        raise UsageError(
            f"signal {spec!r} is neither a known name ({', '.join(sorted(NAMED_SIGNALS))}, zero) "
            "nor an existing CSV file"
        )
    header, data = mmio.read_csv(path)
    if data.shape[1] != 2:
        raise FormatError(f"{path}: signal table needs two columns (t, u), found {data.shape[1]}")
    return InputSignal.sampled(data[:, 0], data[:, 1])


def _signals(specs) -> list[InputSignal]:
    out = []
    for spec in specs:
        out.extend(_load_signal(s.strip()) for s in spec.split(",") if s.strip())
    return out


def save_gramians(pair: GramianPair, directory) -> Path:
    """Write Gramian factors and their report to ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    mmio.save_factor(pair.R, out / "R.mtx")
    mmio.save_factor(pair.S, out / "S.mtx")
    if pair.linear is not None:
        mmio.save_factor(pair.linear[0], out / "P1_factor.mtx")
        mmio.save_factor(pair.linear[1], out / "Q1_factor.mtx")
    mmio.write_json(
        out / "report.json",
        {
            "kind": pair.kind,
            "iterations": pair.iterations,
            "residuals": list(pair.residuals),
            "shift": pair.shift,
            "rank_R": pair.R.rank,
            "rank_S": pair.S.rank,
            "history": [list(h) for h in pair.history],
        },
    )
    return out


def load_gramians(directory) -> GramianPair:
    """Inverse of :func:`save_gramians`."""
    d = Path(directory)
    report = mmio.read_json(d / "report.json")
    linear = None
    if (d / "P1_factor.mtx").is_file() and (d / "Q1_factor.mtx").is_file():
        linear = (mmio.load_factor(d / "P1_factor.mtx"), mmio.load_factor(d / "Q1_factor.mtx"))
    return GramianPair(
        R=mmio.load_factor(d / "R.mtx"),
        S=mmio.load_factor(d / "S.mtx"),
        kind=report.get("kind", "truncated"),
        iterations=int(report.get("iterations", 0)),
        residuals=tuple(report.get("residuals", (math.nan, math.nan))),
        shift=float(report.get("shift", 0.0)),
        linear=linear,
    )


def _compute_gramians(sys_, kind, tau, shift, rel_tol, max_iter) -> GramianPair:
    if kind == "truncated":
        return truncated_gramians(sys_, shift=shift)
    if kind == "iterated":
        return iterate_gramians(sys_, tau=tau, rel_tol=rel_tol, max_iter=max_iter, shift=shift)
    raise UsageError(f"unknown Gramian kind {kind!r}; use truncated or iterated")


def _write_hsv(pair: GramianPair, path) -> np.ndarray:
    sigma = hankel_values(pair)
    norm = sigma / sigma[0] if sigma.size and sigma[0] > 0 else sigma
    mmio.write_csv(path, ["index", "sigma", "sigma_normalized"], [np.arange(1, sigma.size + 1), sigma, norm])
    return sigma


def _save_reduced(model, directory) -> Path:
    out = Path(directory)
    mmio.save_system(model.sys_hat, out, provenance="reduced")
    mmio.write_matrix(out / "V.mtx", model.V)
    mmio.write_matrix(out / "W.mtx", model.W)
    mmio.write_json(
        out / "reduction.json",
        {
            "n_hat": model.n_hat,
            "sigma": model.sigma.tolist(),
            "radius": model.radius,
            "projector_error": model.projector_error(),
            "source": model.source_meta,
        },
    )
    return out


def _write_trajectory(traj: Trajectory, path) -> None:
    header = ["t"] + [f"y{i + 1}" for i in range(traj.Y.shape[0])]
    mmio.write_csv(path, header, [traj.t, *traj.Y])


def _read_trajectory(path) -> Trajectory:
    header, data = mmio.read_csv(path)
    if not header or header[0] != "t":
        raise FormatError(f"{path}: first column must be 't'")
    return Trajectory(t=data[:, 0], Y=data[:, 1:].T)


def _simulate(sys_, signals, t_end, dt, method) -> Trajectory:
    if not t_end > 0:
        raise DomainError("t-end must be positive")
    u = signals if signals else None
    return integrate(sys_, u, (0.0, float(t_end)), float(dt), method, store_states=False)


def _write_errors(full, red, path) -> dict:
    err = compare_outputs(full, red)
    mmio.write_csv(path, ["t", "rel_err"], [full.t, err["rel_err_t"]])
    return {"rel_L2": err["rel_L2"], "rel_Linf": err["rel_Linf"]}


# ------------------------------------------------------------ subcommands
def cmd_model_build(args) -> dict:
    spec = ModelSpec(family=args.family, k=args.k, L=args.L, params=_parse_params(args.param), shift=args.shift)
    sys_ = build_model(spec)
    mmio.save_system(sys_, args.out, provenance=spec.to_dict())
    log.info("model %s: n=%d m=%d p=%d", spec.family, sys_.n, sys_.m, sys_.p)
    return {"n": sys_.n, "m": sys_.m, "p": sys_.p, "out": str(args.out)}


def cmd_gramians(args) -> dict:
    sys_ = mmio.load_system(args.system)
    pair = _compute_gramians(sys_, args.kind, args.tau, args.shift, args.rel_tol, args.max_iter)
    save_gramians(pair, args.out)
    log.info("gramians: kind=%s ranks=%d/%d", pair.kind, pair.R.rank, pair.S.rank)
    return {"kind": pair.kind, "iterations": pair.iterations, "residuals": list(pair.residuals)}


def cmd_hsv(args) -> dict:
    sigma = _write_hsv(load_gramians(args.gramians), args.out)
    return {"count": int(sigma.size), "sigma_1": float(sigma[0]) if sigma.size else 0.0}


def cmd_reduce(args) -> dict:
    sys_ = mmio.load_system(args.system)
    pair = load_gramians(args.gramians)
    model = balance_and_reduce(sys_, pair, args.n_hat)
    _save_reduced(model, args.out)
    return {"n_hat": model.n_hat, "radius": model.radius, "projector_error": model.projector_error()}


def cmd_simulate(args) -> dict:
    sys_ = mmio.load_system(args.system)
    traj = _simulate(sys_, _signals(args.signal), args.t_end, args.dt, args.method)
    _write_trajectory(traj, args.out)
    return {"steps": traj.stats.get("steps"), "out": str(args.out)}


def cmd_compare(args) -> dict:
    full = _read_trajectory(args.full)
    red = _read_trajectory(args.reduced)
    return _write_errors(full, red, args.out)


def cmd_diagnose(args) -> dict:
    sys_ = mmio.load_system(args.system)
    rep = convergence_report(sys_, shift=args.shift).as_dict()
    mmio.write_json(args.out, rep)
    return {k: rep[k] for k in ("cond_i", "cond_ii", "cond_iii", "cond_q")}


def cmd_scalar_demo(args) -> dict:
    ex = ScalarExample(*args.params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = scalar_gramians(ex)
    xs = np.linspace(-1.0, 1.0, args.points)
    keys = ("Lc", "Lo", "Lc_quad", "Lo_quad", "Lc_trunc", "Lo_trunc")
    cols = {k: np.full(xs.size, np.nan) for k in keys}
    for i, x in enumerate(xs):
        try:
            vals = scalar_energy_functionals(ex, x)
        except DomainError:
            continue
        for k in keys:
            cols[k][i] = vals[k]
    mmio.write_csv(out / "energy.csv", ["x", *keys], [xs, *(cols[k] for k in keys)])
    note = None
    if "P_printed" in g:
        note = (
            "P_printed = -(-a - sqrt(a^2 - h^2 b^2)) / h^2 has the opposite sign of the "
            "Gramian P obtained from h^2 P^2 + 2a P + b^2 = 0; P is the smaller positive root."
        )
    mmio.write_json(out / "gramians.json", {"example": list(args.params), **g, "sign_note": note})
    return {"P": g["P"], "Q": g["Q"], "P_T": g["P_T"], "Q_T": g["Q_T"]}


def _require_positive(cfg: dict, key: str, section: str):
    if key in cfg and not (isinstance(cfg[key], (int, float)) and cfg[key] > 0):
        raise DomainError(f"config field {section}.{key} must be positive, got {cfg[key]!r}")


def cmd_run(args) -> dict:
    cfg = mmio.read_json(args.config)
    for section in ("model", "reduce", "simulate", "outputs"):
        if section not in cfg:
            raise FormatError(f"{args.config}: missing section {section!r}")
    g_cfg = dict(cfg.get("gramians", {}))
    s_cfg = dict(cfg["simulate"])
    r_cfg = dict(cfg["reduce"])
    for key in ("tau", "rel_tol", "max_iter"):
        _require_positive(g_cfg, key, "gramians")
    _require_positive(s_cfg, "dt", "simulate")
    _require_positive(r_cfg, "n_hat", "reduce")
    if g_cfg.get("shift", 0.0) < 0:
        raise DomainError("config field gramians.shift must be nonnegative")
    out = Path(cfg["outputs"])
    if not out.is_absolute():
        out = Path(args.config).resolve().parent / out
    out.mkdir(parents=True, exist_ok=True)

    model = cfg["model"]
    if isinstance(model, str):
        path = Path(model)
        if not path.is_absolute():
            path = Path(args.config).resolve().parent / path
        sys_ = mmio.load_system(path)
        default_shift = 0.0
    else:
        spec = ModelSpec.from_dict(model)
        sys_ = build_model(spec)
        default_shift = spec.shift
        mmio.save_system(sys_, out / "system", provenance=spec.to_dict())
    log.info("stage model: n=%d", sys_.n)

    pair = _compute_gramians(
        sys_,
        g_cfg.get("kind", "truncated"),
        float(g_cfg.get("tau", 1e-8)),
        float(g_cfg.get("shift", default_shift)),
        float(g_cfg.get("rel_tol", 1e-10)),
        int(g_cfg.get("max_iter", 200)),
    )
    save_gramians(pair, out / "gramians")
    _write_hsv(pair, out / "hsv.csv")
    log.info("stage gramians: kind=%s", pair.kind)

    reduced = balance_and_reduce(sys_, pair, int(r_cfg["n_hat"]))
    _save_reduced(reduced, out / "reduced")
    log.info("stage reduce: n_hat=%d", reduced.n_hat)

    signals = _signals(s_cfg.get("signals", []))
    t_span = s_cfg.get("t_span", [0.0, 1.0])
    if len(t_span) != 2 or t_span[1] <= t_span[0]:
        raise DomainError(f"simulate.t_span must be [t0, t1] with t1 > t0, got {t_span!r}")
    dt = float(s_cfg.get("dt", 1e-3))
    method = s_cfg.get("method", "rk4")
    u = signals if signals else None
    full = integrate(sys_, u, tuple(t_span), dt, method, store_states=False)
    red = integrate(reduced.sys_hat, u, tuple(t_span), dt, method, store_states=False)
    _write_trajectory(full, out / "full.csv")
    _write_trajectory(red, out / "reduced.csv")
    summary = _write_errors(full, red, out / "errors.csv")
    summary.update({"n": sys_.n, "n_hat": reduced.n_hat, "radius": reduced.radius})
    mmio.write_json(out / "summary.json", summary)
    log.info("stage simulate: rel_L2=%.3e", summary["rel_L2"])
    return summary


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qbmor", description="Balanced truncation for quadratic-bilinear systems.")
    p.add_argument("-v", "--verbose", action="store_true", help="log one line per stage")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    model = sub.add_parser("model", help="benchmark generators")
    msub = model.add_subparsers(dest="model_command", parser_class=_Parser)
    msub.required = True
    b = msub.add_parser("build", help="write a benchmark system")
    b.add_argument("--family", required=True, choices=FAMILIES)
    b.add_argument("--k", type=int, default=0)
    b.add_argument("--L", type=float, default=None)
    b.add_argument("--shift", type=float, default=0.0)
    b.add_argument("--param", action="append", metavar="KEY=VALUE", help="family parameter (repeatable)")
    b.add_argument("--out", required=True, type=Path)
    b.set_defaults(func=cmd_model_build)

    g = sub.add_parser("gramians", help="compute Gramian factors")
    g.add_argument("--system", required=True, type=Path)
    g.add_argument("--kind", choices=("truncated", "iterated"), default="truncated")
    g.add_argument("--tau", type=float, default=1e-8)
    g.add_argument("--shift", type=float, default=0.0)
    g.add_argument("--rel-tol", type=float, default=1e-10)
    g.add_argument("--max-iter", type=int, default=200)
    g.add_argument("--out", required=True, type=Path)
    g.set_defaults(func=cmd_gramians)

    h = sub.add_parser("hsv", help="singular values of S^T R")
    h.add_argument("--gramians", required=True, type=Path)
    h.add_argument("--out", required=True, type=Path)
    h.set_defaults(func=cmd_hsv)

    r = sub.add_parser("reduce", help="balanced truncation")
    r.add_argument("--system", required=True, type=Path)
    r.add_argument("--gramians", required=True, type=Path)
    r.add_argument("--n-hat", required=True, type=int)
    r.add_argument("--out", required=True, type=Path)
    r.set_defaults(func=cmd_reduce)

    s = sub.add_parser("simulate", help="integrate a system")
    s.add_argument("--system", required=True, type=Path)
    s.add_argument("--signal", action="append", default=[], help="signal name or CSV (t,u); one per input")
    s.add_argument("--t-end", required=True, type=float)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--method", choices=("rk4", "imex_cn", "ros2"), default="rk4")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="output error between two trajectories")
    c.add_argument("--full", required=True, type=Path)
    c.add_argument("--reduced", required=True, type=Path)
    c.add_argument("--out", required=True, type=Path)
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("diagnose", help="convergence conditions of the Gramian iteration")
    d.add_argument("--system", required=True, type=Path)
    d.add_argument("--shift", type=float, default=0.0)
    d.add_argument("--out", required=True, type=Path)
    d.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("scalar-demo", help="energy functionals of the scalar example")
    e.add_argument("--params", nargs=5, type=float, default=[-2.0, 1.0, 0.0, 2.0, 2.0],
                   metavar=("A", "H", "N", "B", "C"))
    e.add_argument("--points", type=int, default=201)
    e.add_argument("--out", required=True, type=Path)
    e.set_defaults(func=cmd_scalar_demo)

    run = sub.add_parser("run", help="full pipeline from a JSON config")
    run.add_argument("--config", required=True, type=Path)
    run.set_defaults(func=cmd_run)
    return p


def _thread_limit():
    value = os.environ.get("QBMOR_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        threads = int(value)
    except ValueError:
        threads = 0
    if threads < 1:
        raise UsageError(f"QBMOR_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def _fail(exc: BaseException, code: int, kind: str | None = None) -> int:
    payload = {"error": kind or type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None) -> int:
    """Run the command line; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 2)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="qbmor: %(message)s",
        stream=sys.stderr,
    )
    try:
        with _thread_limit():
            result = args.func(args)
    except QBMORError as exc:
        return _fail(exc, exc.exit_code)
    except (OSError, UnicodeDecodeError) as exc:
        return _fail(exc, 4, "IOError")
    except (ValueError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return _fail(exc, 3, "NumericalError")
    sys.stdout.write(json.dumps(mmio._jsonable(result), sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
