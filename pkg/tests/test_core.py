import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from qbmor import (
    DimensionError,
    HessianTensor,
    LowRankFactor,
    QBSystem,
    apply_quadratic,
    gamma_product,
    make_system,
    mode_products,
    mode_unfold,
    quadratic_jacobian,
    refold,
    shift_A,
    symmetrize,
)


def _dense_and_sparse(T):
    dense = HessianTensor.from_tensor(T)
    sparse = HessianTensor(sp.csr_matrix(dense.data), shape=T.shape)
    return dense, sparse


def test_unfolding_index_convention(rng):
    T = rng.standard_normal((2, 3, 4))
    H = HessianTensor.from_tensor(T)
    for i in range(2):
        for j in range(3):
            for k in range(4):
                assert H.data[i, j + k * 3] == T[i, j, k]
                assert mode_unfold(H, 2)[j, i + k * 2] == T[i, j, k]
                assert mode_unfold(H, 3)[k, i + j * 2] == T[i, j, k]


def test_mode1_times_kron_contracts_last_modes(rng):
    T = rng.standard_normal((3, 3, 3))
    H = HessianTensor.from_tensor(T)
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    expected = np.einsum("ijk,j,k->i", T, y, x)
    np.testing.assert_allclose(H.data @ np.kron(x, y), expected, rtol=1e-13)


@pytest.mark.parametrize("mode", [1, 2, 3])
@pytest.mark.parametrize("sparse", [False, True])
def test_refold_inverts_unfold(rng, mode, sparse):
    T = rng.standard_normal((2, 3, 4))
    H = _dense_and_sparse(T)[int(sparse)]
    M = mode_unfold(H, mode)
    back = refold(M, mode, T.shape)
    np.testing.assert_array_equal(back.to_tensor(), T)


def test_dual_identity_mode2(rng):
    n = 4
    H = HessianTensor(rng.standard_normal((n, n * n)))
    x, z = rng.standard_normal(n), rng.standard_normal(n)
    lhs = mode_unfold(H, 2) @ np.kron(x, z)
    rhs = (H.data @ np.kron(x[:, None], np.eye(n))).T @ z
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_symmetric_tensor_has_equal_mode2_and_mode3(rng):
    H = symmetrize(HessianTensor(rng.standard_normal((3, 9))))
    np.testing.assert_allclose(mode_unfold(H, 2), mode_unfold(H, 3), atol=1e-15)


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_symmetrize_preserves_quadratic_form(n, seed):
    rng = np.random.default_rng(seed)
    H = HessianTensor(rng.standard_normal((n, n * n)))
    Hs = symmetrize(H)
    u, v = rng.standard_normal(n), rng.standard_normal(n)
    np.testing.assert_allclose(Hs.data @ np.kron(u, u), H.data @ np.kron(u, u), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(Hs.data @ np.kron(u, v), Hs.data @ np.kron(v, u), rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(symmetrize(Hs).data, Hs.data)


def test_symmetrize_sparse_matches_dense(rng):
    T = rng.standard_normal((3, 3, 3)) * (rng.random((3, 3, 3)) < 0.4)
    d, s = _dense_and_sparse(T)
    np.testing.assert_allclose(symmetrize(s).toarray(), symmetrize(d).toarray(), atol=1e-15)


@pytest.mark.parametrize("sparse", [False, True])
def test_apply_quadratic_matches_kron(rng, sparse):
    T = rng.standard_normal((5, 5, 5)) * (rng.random((5, 5, 5)) < 0.5)
    H = _dense_and_sparse(T)[int(sparse)]
    x = rng.standard_normal(5)
    np.testing.assert_allclose(apply_quadratic(H, x), H.toarray() @ np.kron(x, x), rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("sparse", [False, True])
def test_quadratic_jacobian_matches_finite_differences(rng, sparse):
    T = rng.standard_normal((4, 4, 4))
    H = _dense_and_sparse(T)[int(sparse)]
    x = rng.standard_normal(4)
    J = quadratic_jacobian(H, x)
    J = J.toarray() if sp.issparse(J) else J
    h = 1e-6
    fd = np.column_stack(
        [(apply_quadratic(H, x + h * e) - apply_quadratic(H, x - h * e)) / (2 * h) for e in np.eye(4)]
    )
    np.testing.assert_allclose(J, fd, rtol=1e-7, atol=1e-8)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 3), st.integers(0, 3),
       st.booleans(), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_gamma_product_matches_explicit_kron(nz, nx, r, s, sparse, seed):
    rng = np.random.default_rng(seed)
    q = 3
    M = rng.standard_normal((q, nx * nz)) * (rng.random((q, nx * nz)) < 0.6)
    Z, X = rng.standard_normal((nz, r)), rng.standard_normal((nx, s))
    got = gamma_product(sp.csr_matrix(M) if sparse else M, Z, X)
    assert got.shape == (q, r * s)
    if r * s:
        np.testing.assert_allclose(got, M @ np.kron(Z, X), rtol=1e-12, atol=1e-12)


def test_gamma_product_rejects_mismatched_factors(rng):
    with pytest.raises(DimensionError):
        gamma_product(rng.standard_normal((2, 6)), np.ones((2, 1)), np.ones((2, 1)))


def test_mode_products_identities(rng):
    n1, n2, n3 = 3, 4, 2
    T = rng.standard_normal((n1, n2, n3))
    H = HessianTensor.from_tensor(T)
    Xt = rng.standard_normal((2, n1))
    Yt = rng.standard_normal((3, n3))
    Zt = rng.standard_normal((2, n2))
    F = mode_products(H, Xt, Yt, Zt)
    expected = np.einsum("ijk,pi,bj,ak->pba", T, Xt, Zt, Yt)
    np.testing.assert_allclose(F.to_tensor(), expected, rtol=1e-12, atol=1e-13)
    X, Y, Z = Xt.T, Yt.T, Zt.T
    np.testing.assert_allclose(F.data, Xt @ H.data @ np.kron(Y, Z), rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(mode_unfold(F, 2), Zt @ mode_unfold(H, 2) @ np.kron(Y, X), rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(mode_unfold(F, 3), Yt @ mode_unfold(H, 3) @ np.kron(Z, X), rtol=1e-12, atol=1e-13)


def test_mode_products_sparse_equals_dense(rng):
    T = rng.standard_normal((4, 4, 4)) * (rng.random((4, 4, 4)) < 0.3)
    d, s = _dense_and_sparse(T)
    W = rng.standard_normal((4, 2))
    np.testing.assert_allclose(
        mode_products(s, W.T, W.T, W.T).data, mode_products(d, W.T, W.T, W.T).data, atol=1e-13
    )


def test_hessian_is_read_only(rng):
    H = HessianTensor(rng.standard_normal((2, 4)))
    with pytest.raises(ValueError):
        H.data[0, 0] = 1.0


def test_hessian_shape_validation():
    with pytest.raises(DimensionError):
        HessianTensor(np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        HessianTensor(np.zeros((2, 6)), shape=(2, 2, 3), symmetric=True)


def test_from_coords_sums_duplicates():
    H = HessianTensor.from_coords([0, 0], [1, 1], [0, 0], [1.0, 2.0], (2, 2, 2))
    assert H.nnz == 1
    assert H.to_tensor()[0, 1, 0] == 3.0


def test_norm2_sparse_and_dense_agree(rng):
    M = rng.standard_normal((3, 9))
    assert HessianTensor(M).norm2() == pytest.approx(np.linalg.norm(M, 2), rel=1e-12)
    assert HessianTensor(sp.csr_matrix(M)).norm2() == pytest.approx(np.linalg.norm(M, 2), rel=1e-12)


def test_qbsystem_symmetrizes_hessian(rng):
    sys_ = make_system(-np.eye(2), H=rng.standard_normal((2, 4)), B=np.ones(2), C=np.ones((1, 2)))
    assert sys_.H.symmetric
    np.testing.assert_allclose(mode_unfold(sys_.H, 2), mode_unfold(sys_.H, 3), atol=1e-15)
    assert (sys_.n, sys_.m, sys_.p) == (2, 1, 1)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(A=np.zeros((2, 3)), H=None, N=(), B=np.zeros((2, 0)), C=np.zeros((0, 2))),
        dict(A=-np.eye(2), H=None, N=(), B=np.ones((3, 1)), C=np.ones((1, 2))),
        dict(A=-np.eye(2), H=None, N=(), B=np.ones((2, 1)), C=np.ones((1, 2))),
        dict(A=-np.eye(2), H=None, N=(np.eye(3),), B=np.ones((2, 1)), C=np.ones((1, 2))),
        dict(A=-np.eye(2), H=np.zeros((2, 9)), N=(np.eye(2),), B=np.ones((2, 1)), C=np.ones((1, 2))),
        dict(A=-np.eye(2), H=None, N=(np.eye(2),), B=np.ones((2, 1)), C=np.ones((1, 3))),
    ],
)
def test_qbsystem_rejects_inconsistent_dimensions(kwargs):
    with pytest.raises(DimensionError):
        QBSystem(**kwargs)


def test_shift_A_records_shift():
    sys_ = make_system(np.zeros((2, 2)), B=np.ones(2), C=np.ones((1, 2)))
    shifted = shift_A(sys_, 0.05)
    np.testing.assert_array_equal(shifted.A, -0.05 * np.eye(2))
    assert shifted.meta["shift"] == 0.05


def test_shift_of_scalar_example():
    sys_ = make_system([[0.0]], B=[[1.0]], C=[[1.0]])
    assert shift_A(sys_, 0.05).A[0, 0] == -0.05


def test_low_rank_factor(rng):
    Z = rng.standard_normal((4, 2))
    F = LowRankFactor(Z, D=[4.0, 1.0])
    np.testing.assert_allclose(F.dense(), Z @ np.diag([4.0, 1.0]) @ Z.T, rtol=1e-13)
    assert (F.n, F.rank) == (4, 2)
    with pytest.raises(DimensionError):
        LowRankFactor(Z, D=[-1.0, 1.0])
    assert LowRankFactor.empty(3).rank == 0
