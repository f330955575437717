import json

import numpy as np
import pytest
import scipy.sparse as sp

from qbmor import (
    FormatError,
    chafee_infante,
    fitzhugh_nagumo,
    load_system,
    rc_ladder,
    read_matrix,
    save_system,
    solve_lyapunov,
    write_matrix,
)
from qbmor.cli import main
from qbmor.mmio import read_csv, read_json, write_csv, write_json


# ------------------------------------------------------------ Matrix Market
def test_identity_round_trip(tmp_path):
    write_matrix(tmp_path / "I.mtx", np.eye(2))
    np.testing.assert_array_equal(read_matrix(tmp_path / "I.mtx"), np.eye(2))


def test_vector_with_negative_entries(tmp_path):
    v = np.array([[-1.5], [2.0], [-3.25e-7]])
    write_matrix(tmp_path / "v.mtx", v)
    assert (tmp_path / "v.mtx").read_text().startswith("%%MatrixMarket matrix array real general")
    np.testing.assert_array_equal(read_matrix(tmp_path / "v.mtx"), v)


def test_extreme_values_round_trip_bit_exactly(tmp_path, rng):
    M = rng.standard_normal((4, 3)) * 10.0 ** rng.integers(-300, 300, (4, 3))
    M[0, 0] = 5e-324
    write_matrix(tmp_path / "m.mtx", M)
    np.testing.assert_array_equal(read_matrix(tmp_path / "m.mtx"), M)


def test_sparse_hessian_round_trip(tmp_path):
    H = chafee_infante(100).H.data
    write_matrix(tmp_path / "H.mtx", H)
    back = read_matrix(tmp_path / "H.mtx")
    assert sp.issparse(back) and back.shape == (200, 40000)
    assert (back != H).nnz == 0
    np.testing.assert_array_equal(np.sort(back.indices), np.sort(H.tocsr().indices))


def test_symmetric_kind(tmp_path):
    S = np.array([[2.0, 1.0], [1.0, 3.0]])
    write_matrix(tmp_path / "s.mtx", S, symmetric=True)
    assert "symmetric" in (tmp_path / "s.mtx").read_text().splitlines()[0]
    np.testing.assert_array_equal(read_matrix(tmp_path / "s.mtx"), S)


@pytest.mark.parametrize(
    "text",
    [
        "hello\n1 1\n1.0\n",
        "%%MatrixMarket matrix array complex general\n1 1\n1.0 0.0\n",
        "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 3 1.0\n",
    ],
)
def test_malformed_files(tmp_path, text):
    p = tmp_path / "bad.mtx"
    p.write_text(text)
    with pytest.raises(FormatError):
        read_matrix(p)


def test_missing_matrix(tmp_path):
    with pytest.raises(FormatError):
        read_matrix(tmp_path / "none.mtx")


# ----------------------------------------------------------------- systems
@pytest.mark.parametrize("build", [lambda: chafee_infante(8), lambda: fitzhugh_nagumo(6), lambda: rc_ladder(5)])
def test_system_round_trip_bit_identical(tmp_path, build):
    sys_ = build()
    save_system(sys_, tmp_path / "s")
    back = load_system(tmp_path / "s")
    again = build()
    np.testing.assert_array_equal(back.A, again.A)
    np.testing.assert_array_equal(back.B, again.B)
    np.testing.assert_array_equal(back.C, again.C)
    assert (back.H.data != again.H.data).nnz == 0
    for Nb, Na in zip(back.N, again.N):
        np.testing.assert_array_equal(Nb, Na)
    assert back.meta["family"] == sys_.meta["family"]


def test_manifest_dimension_mismatch(tmp_path):
    save_system(rc_ladder(3), tmp_path / "s")
    m = read_json(tmp_path / "s" / "manifest.json")
    m["dims"][0] = 7
    write_json(tmp_path / "s" / "manifest.json", m)
    with pytest.raises(FormatError, match="manifest dims"):
        load_system(tmp_path / "s")


def test_manifest_missing_fields(tmp_path):
    save_system(rc_ladder(3), tmp_path / "s")
    m = read_json(tmp_path / "s" / "manifest.json")
    del m["paths"]["N1"]
    write_json(tmp_path / "s" / "manifest.json", m)
    with pytest.raises(FormatError, match="N1"):
        load_system(tmp_path / "s")


def test_csv_round_trip(tmp_path):
    write_csv(tmp_path / "a.csv", ["t", "y"], [[0.0, 0.1], [1.0 / 3.0, -2.0]])
    header, data = read_csv(tmp_path / "a.csv")
    assert header == ["t", "y"]
    assert data[0, 1] == 1.0 / 3.0


def test_json_non_finite_values(tmp_path):
    write_json(tmp_path / "r.json", {"a": float("nan"), "b": float("inf")})
    assert json.loads((tmp_path / "r.json").read_text()) == {"a": None, "b": "inf"}


# --------------------------------------------------------------------- CLI
def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_build_chafee_infante_500(tmp_path, capsys):
    code, out, _ = _run(capsys, "model", "build", "--family", "chafee_infante", "--k", 500, "--L", 1, "--out", tmp_path / "ci")
    assert code == 0 and json.loads(out)["n"] == 1000
    assert read_json(tmp_path / "ci" / "manifest.json")["dims"] == [1000, 1, 1]


def test_cli_linear_gramians_equal_linear_solutions(tmp_path, capsys):
    from qbmor import make_system

    A = np.array([[-1.0, 0.3], [0.0, -2.0]])
    sys_ = make_system(A, B=np.array([1.0, 1.0]), C=np.array([[1.0, 0.0]]))
    save_system(sys_, tmp_path / "lin")
    code, _, _ = _run(capsys, "gramians", "--system", tmp_path / "lin", "--out", tmp_path / "g")
    assert code == 0
    R = read_matrix(tmp_path / "g" / "R.mtx")
    P1 = solve_lyapunov(A, sys_.B @ sys_.B.T).X
    np.testing.assert_allclose(R @ R.T, P1, atol=1e-14)


def test_cli_pipeline(tmp_path, capsys):
    d = tmp_path
    assert _run(capsys, "model", "build", "--family", "chafee_infante", "--k", 10, "--out", d / "sys")[0] == 0
    assert _run(capsys, "gramians", "--system", d / "sys", "--out", d / "g")[0] == 0
    assert _run(capsys, "hsv", "--gramians", d / "g", "--out", d / "hsv.csv")[0] == 0
    header, hsv = read_csv(d / "hsv.csv")
    assert header == ["index", "sigma", "sigma_normalized"] and hsv[0, 2] == 1.0
    code, out, _ = _run(capsys, "reduce", "--system", d / "sys", "--gramians", d / "g", "--n-hat", 4, "--out", d / "red")
    assert code == 0 and json.loads(out)["projector_error"] < 1e-10
    for name, sysdir in (("full", "sys"), ("red", "red")):
        code, _, _ = _run(capsys, "simulate", "--system", d / sysdir, "--signal", "ci_u1", "--t-end", 1,
                          "--dt", 1e-3, "--method", "imex_cn", "--out", d / f"{name}.csv")
        assert code == 0
    code, out, _ = _run(capsys, "compare", "--full", d / "full.csv", "--reduced", d / "red.csv", "--out", d / "err.csv")
    assert code == 0 and json.loads(out)["rel_L2"] < 0.1
    code, _, _ = _run(capsys, "diagnose", "--system", d / "sys", "--out", d / "rep.json")
    assert code == 0 and "P_inf" in read_json(d / "rep.json")


def test_cli_sampled_signal_file(tmp_path, capsys):
    save_system(rc_ladder(3), tmp_path / "s")
    write_csv(tmp_path / "u.csv", ["t", "u"], [[0.0, 1.0], [0.0, 0.1]])
    code, _, err = _run(capsys, "simulate", "--system", tmp_path / "s", "--signal", tmp_path / "u.csv",
                        "--t-end", 0.5, "--out", tmp_path / "y.csv")
    assert code == 0, err


def test_cli_scalar_demo(tmp_path, capsys):
    code, out, _ = _run(capsys, "scalar-demo", "--out", tmp_path / "sd")
    res = json.loads(out)
    assert code == 0 and res["P"] == 2.0 and res["P_T"] == 1.25
    g = read_json(tmp_path / "sd" / "gramians.json")
    assert g["P_printed"] == -2.0 and "opposite sign" in g["sign_note"]
    header, data = read_csv(tmp_path / "sd" / "energy.csv")
    assert data.shape == (201, 7) and data[0, 0] == -1.0 and data[-1, 0] == 1.0


def test_cli_run_is_deterministic(tmp_path, capsys):
    cfg = {
        "model": {"family": "chafee_infante", "k": 12},
        "gramians": {"kind": "truncated"},
        "reduce": {"n_hat": 4},
        "simulate": {"signals": ["ci_u1"], "t_span": [0, 1], "dt": 1e-3, "method": "imex_cn"},
        "outputs": "out_a",
    }
    (tmp_path / "a.json").write_text(json.dumps(cfg))
    cfg["outputs"] = "out_b"
    (tmp_path / "b.json").write_text(json.dumps(cfg))
    assert _run(capsys, "run", "--config", tmp_path / "a.json")[0] == 0
    assert _run(capsys, "run", "--config", tmp_path / "b.json")[0] == 0
    for name in ("full.csv", "reduced.csv", "errors.csv", "hsv.csv"):
        assert (tmp_path / "out_a" / name).read_bytes() == (tmp_path / "out_b" / name).read_bytes()


def test_cli_run_validates_config(tmp_path, capsys):
    cfg = {"model": {"family": "rc_ladder", "k": 3}, "reduce": {"n_hat": -1}, "simulate": {}, "outputs": "o"}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, _, err = _run(capsys, "run", "--config", tmp_path / "c.json")
    assert code == 2 and "n_hat" in json.loads(err)["message"]


@pytest.mark.parametrize(
    "argv,code",
    [
        (["bogus"], 2),
        (["model", "build", "--family", "chafee_infante", "--k", "2", "--out", "x"], 2),
        (["hsv", "--gramians", "does/not/exist", "--out", "h.csv"], 4),
    ],
)
def test_cli_errors_are_single_json_lines(tmp_path, capsys, monkeypatch, argv, code):
    monkeypatch.chdir(tmp_path)
    got, out, err = _run(capsys, *argv)
    assert got == code
    lines = err.strip().splitlines()
    assert len(lines) == 1
    payload = json.loads(lines[0])
    assert payload["exit_code"] == code and payload["message"]


def test_cli_numeric_failure_exit_code(tmp_path, capsys):
    save_system(rc_ladder(3), tmp_path / "s")
    # the RC ladder has zero eigenvalues: Gramians need a shift
    code, _, err = _run(capsys, "gramians", "--system", tmp_path / "s", "--out", tmp_path / "g")
    assert code == 3 and json.loads(err)["error"] == "StabilityError"
    code, _, _ = _run(capsys, "gramians", "--system", tmp_path / "s", "--shift", 0.05, "--out", tmp_path / "g")
    assert code == 0


def test_thread_limit_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("QBMOR_THREADS", "1")
    assert _run(capsys, "scalar-demo", "--out", tmp_path / "sd")[0] == 0
    monkeypatch.setenv("QBMOR_THREADS", "many")
    assert _run(capsys, "scalar-demo", "--out", tmp_path / "sd")[0] == 2
