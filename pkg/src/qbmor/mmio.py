"""Matrix Market files, system manifests and CSV tables."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np
import scipy.io as sio
import scipy.sparse as sp

from .core import HessianTensor, LowRankFactor, QBSystem
from .errors import DimensionError, FormatError

FORMAT_VERSION = "1.0"
MANIFEST_NAME = "manifest.json"


# ------------------------------------------------------------ Matrix Market
def write_matrix(path, M, symmetric: bool = False) -> None:
    """Write a dense (array format) or sparse (coordinate format) matrix.

    Values are rendered with the shortest decimal string that round-trips, so
    :func:`read_matrix` recovers them bit-exactly. ``symmetric=True`` stores
    a symmetric matrix in the ``symmetric`` kind.
    """
    path = Path(path)
    if sp.issparse(M):
        data = sp.coo_matrix(M, dtype=float)
    else:
        data = np.atleast_2d(np.asarray(M, dtype=float))
        if data.ndim != 2:
            raise DimensionError(f"cannot write an array of shape {data.shape}")
    if symmetric:
        dense = data.toarray() if sp.issparse(data) else data
        if dense.shape[0] != dense.shape[1] or not np.array_equal(dense, dense.T):
            raise DimensionError("matrix flagged symmetric is not exactly symmetric")
    try:
        sio.mmwrite(str(path), data, symmetry="symmetric" if symmetric else "general")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc
    # scipy appends the extension when it is missing
    if not path.exists() and Path(str(path) + ".mtx").exists():
        os.replace(str(path) + ".mtx", path)


def read_matrix(path, dense: bool | None = None):
    """Read a Matrix Market file.

    Coordinate files give CSR matrices, array files dense arrays; ``dense``
    forces one or the other.
    """
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"matrix file {path} does not exist")
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", "replace").split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket" or header[1].lower() != "matrix":
        raise FormatError(f"{path}: malformed Matrix Market header")
    fmt, field, _ = (h.lower() for h in header[2:])
    if fmt not in ("coordinate", "array") or field not in ("real", "integer", "double"):
        raise FormatError(f"{path}: unsupported Matrix Market kind {' '.join(header[2:])}")
    try:
        M = sio.mmread(str(path))
    except (ValueError, OverflowError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if sp.issparse(M):
        M = sp.csr_matrix(M, dtype=float)
        if dense:
            return M.toarray()
        return M
    M = np.asarray(M, dtype=float)
    if dense is False:
        return sp.csr_matrix(M)
    return M


# ----------------------------------------------------------------- systems
def _system_paths(m: int) -> dict:
    paths = {"A": "A.mtx", "B": "B.mtx", "C": "C.mtx", "H": "H.mtx"}
    paths.update({f"N{k + 1}": f"N{k + 1}.mtx" for k in range(m)})
    return paths


def save_system(sys: QBSystem, directory, provenance="external") -> Path:
    """Write ``sys`` as Matrix Market files plus ``manifest.json``.

    The Hessian is stored as its sparse mode-1 unfolding.
    """
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FormatError(f"cannot create {out}: {exc}") from exc
    paths = _system_paths(sys.m)
    write_matrix(out / paths["A"], sys.A)
    write_matrix(out / paths["B"], sys.B)
    write_matrix(out / paths["C"], sys.C)
    H = sys.H.data if sys.H.is_sparse else sp.csr_matrix(sys.H.data)
    write_matrix(out / paths["H"], H)
    for k, Nk in enumerate(sys.N):
        write_matrix(out / paths[f"N{k + 1}"], sp.csr_matrix(Nk))
    manifest = {
        "version": FORMAT_VERSION,
        "dims": [sys.n, sys.m, sys.p],
        "paths": paths,
        "flags": {"hessian_symmetric": bool(sys.H.symmetric)},
        "provenance": provenance,
        "meta": _jsonable(sys.meta),
    }
    write_json(out / MANIFEST_NAME, manifest)
    return out


def _jsonable(obj):
    """Convert to plain JSON types; ``nan`` becomes ``null``, infinities ``"inf"``/``"-inf"``."""
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def read_manifest(directory) -> dict:
    """Load and validate ``manifest.json`` of a system directory."""
    path = Path(directory) / MANIFEST_NAME
    manifest = read_json(path)
    for key in ("version", "dims", "paths", "flags"):
        if key not in manifest:
            raise FormatError(f"{path}: missing field {key!r}")
    dims = manifest["dims"]
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(d, int) and d >= 0 for d in dims)):
        raise FormatError(f"{path}: dims must be three nonnegative integers, got {dims!r}")
    n, m, _ = dims
    if n < 1:
        raise FormatError(f"{path}: state dimension must be positive")
    missing = [key for key in _system_paths(m) if key not in manifest["paths"]]
    if missing:
        raise FormatError(f"{path}: paths lack entries {missing}")
    return manifest


def load_system(directory) -> QBSystem:
    """Read a system written by :func:`save_system` and check its dimensions."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    n, m, p = manifest["dims"]
    paths = manifest["paths"]

    def load(key, shape, dense=True):
        M = read_matrix(directory / paths[key], dense=dense)
        if M.shape != shape:
            raise FormatError(
                f"{paths[key]} has shape {M.shape}, but the manifest dims (n={n}, m={m}, p={p}) "
                f"require {shape}"
            )
        return M

    A = load("A", (n, n))
    B = load("B", (n, m)) if m else np.zeros((n, 0))
    C = load("C", (p, n)) if p else np.zeros((0, n))
    H = load("H", (n, n * n), dense=False)
    N = tuple(load(f"N{k + 1}", (n, n)) for k in range(m))
    try:
        return QBSystem(
            A=A,
            H=HessianTensor(H, symmetric=bool(manifest["flags"].get("hessian_symmetric", False))),
            N=N,
            B=B,
            C=C,
            meta=dict(manifest.get("meta") or {}),
        )
    except DimensionError as exc:
        raise FormatError(f"{directory}: {exc}") from exc


# ---------------------------------------------------------------- factors
def save_factor(F: LowRankFactor, path) -> None:
    """Store ``Z diag(D)^{1/2}`` as a dense array."""
    write_matrix(path, F.weighted())


def load_factor(path) -> LowRankFactor:
    return LowRankFactor(read_matrix(path, dense=True))


# ------------------------------------------------------------- JSON / CSV
def write_json(path, obj) -> None:
    try:
        Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{path} does not exist") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot parse {path}: {exc}") from exc


def write_csv(path, header, columns) -> None:
    """Write equal-length columns with a header row (``repr`` precision).

    Integer-typed columns are written as integers.
    """
    columns = [np.asarray(c).reshape(-1) for c in columns]
    columns = [c if np.issubdtype(c.dtype, np.integer) else c.astype(float) for c in columns]
    if len(header) != len(columns) or len({c.size for c in columns}) > 1:
        raise DimensionError("CSV header and columns do not match")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in zip(*columns):
                w.writerow([str(v) if isinstance(v, np.integer) else repr(float(v)) for v in row])
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Return the header and an ``(rows, cols)`` array."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry ({exc})") from exc
    if body and data.shape[1] != len(header):
        raise FormatError(f"{path}: rows have {data.shape[1]} fields, header has {len(header)}")
    return header, data.reshape(len(body), len(header))


__all__ = [
    "FORMAT_VERSION",
    "load_factor",
    "load_system",
    "read_csv",
    "read_json",
    "read_manifest",
    "read_matrix",
    "save_factor",
    "save_system",
    "write_csv",
    "write_json",
    "write_matrix",
]
