import numpy as np
import pytest

from qbmor import (
    DimensionError,
    DomainError,
    ModelSpec,
    ScalarExample,
    build_model,
    chafee_infante,
    fitzhugh_nagumo,
    integrate,
    manifold_defect,
    qb_rhs,
    rc_ladder,
    scalar_energy_functionals,
    scalar_system,
)
from qbmor.models import (
    chafee_infante_lift,
    chafee_infante_lifted_rhs,
    fitzhugh_nagumo_lift,
    fitzhugh_nagumo_lifted_rhs,
    rc_ladder_lift,
    rc_ladder_lifted_rhs,
)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("k", [3, 10, 50])
def test_chafee_infante_lifting_exact(rng, k):
    sys_ = chafee_infante(k)
    for _ in range(10):
        v, u = rng.uniform(-1.5, 1.5, k), rng.uniform(-3, 3)
        x = chafee_infante_lift(v)
        assert _rel(qb_rhs(sys_, x, [u]), chafee_infante_lifted_rhs(v, u)) < 1e-12


@pytest.mark.parametrize("k", [3, 10, 50])
def test_fitzhugh_nagumo_lifting_exact(rng, k):
    sys_ = fitzhugh_nagumo(k)
    for _ in range(10):
        v, w = rng.uniform(-0.5, 1.2, k), rng.uniform(-0.2, 0.3, k)
        i0, src = rng.uniform(-1, 1), rng.uniform(0, 2)
        x = fitzhugh_nagumo_lift(v, w)
        assert _rel(qb_rhs(sys_, x, [i0, src]), fitzhugh_nagumo_lifted_rhs(v, w, i0, source=src)) < 1e-12


@pytest.mark.parametrize("k", [2, 5, 20])
def test_rc_ladder_lifting_exact(rng, k):
    sys_ = rc_ladder(k)
    for _ in range(10):
        v, u = rng.uniform(-0.05, 0.05, k), rng.uniform(-1, 1)
        x = rc_ladder_lift(v)
        assert _rel(qb_rhs(sys_, x, [u]), rc_ladder_lifted_rhs(v, u)) < 1e-10


def test_benchmark_dimensions():
    assert chafee_infante(500).n == 1000
    assert fitzhugh_nagumo(500).n == 1500
    ci, fn, rc = chafee_infante(7), fitzhugh_nagumo(7), rc_ladder(7)
    assert (ci.n, ci.m, ci.p) == (14, 1, 1)
    assert (fn.n, fn.m, fn.p) == (21, 2, 2)
    assert (rc.n, rc.m, rc.p) == (14, 1, 1)


@pytest.mark.parametrize("family", [chafee_infante, fitzhugh_nagumo, rc_ladder])
def test_origin_is_equilibrium(family):
    sys_ = family(6)
    np.testing.assert_array_equal(qb_rhs(sys_, np.zeros(sys_.n), np.zeros(sys_.m)), 0.0)


def test_fitzhugh_nagumo_constant_drive():
    k = 5
    f = qb_rhs(fitzhugh_nagumo(k), np.zeros(3 * k), [0.0, 1.0])
    np.testing.assert_allclose(f[:k], 0.05 / 0.015)
    np.testing.assert_allclose(f[k : 2 * k], 0.05)
    np.testing.assert_array_equal(f[2 * k :], 0.0)


@pytest.mark.parametrize("k,L", [(5, 1.0), (40, 1.0), (100, 1.0), (100, 1.5)])
def test_pde_linear_parts_are_hurwitz(k, L):
    assert np.max(np.linalg.eigvals(chafee_infante(k, L).A).real) < 0
    assert np.max(np.linalg.eigvals(fitzhugh_nagumo(k, L / 5).A).real) < 0


def test_chafee_infante_origin_loses_stability_on_long_domains():
    # slowest diffusion mode decays like (pi / 2L)^2, which drops below the
    # unit growth rate once L > pi / 2
    assert np.max(np.linalg.eigvals(chafee_infante(100, 2.0).A).real) > 0


@pytest.mark.parametrize("k", [2, 6, 15])
def test_rc_ladder_is_semistable(k):
    ev = np.linalg.eigvals(rc_ladder(k).A)
    assert np.max(ev.real) < 1e-10
    assert np.sum(np.abs(ev) < 1e-10) == k


@pytest.mark.parametrize("family,k", [(chafee_infante, 2), (fitzhugh_nagumo, 2), (rc_ladder, 1)])
def test_too_small_grids_rejected(family, k):
    with pytest.raises(DimensionError):
        family(k)


def test_manifold_stays_invariant_under_accurate_integration():
    sys_ = chafee_infante(10)
    v0 = 0.3 * np.sin(np.linspace(0.1, 3.0, 10))
    traj = integrate(
        sys_, lambda t: [np.sin(t)], (0.0, 1.0), 1e-4, "rk4",
        x0=chafee_infante_lift(v0), defect=lambda x: manifold_defect(sys_, x),
    )
    assert traj.stats["max_defect"] <= 1e-6


def test_manifold_defect_unknown_family():
    assert np.isnan(manifold_defect(scalar_system(ScalarExample(-1, 0, 0, 1, 1)), np.zeros(1)))


def test_model_spec_round_trip():
    spec = ModelSpec("fitzhugh_nagumo", k=4, params={"eps": 0.02})
    again = ModelSpec.from_json(__import__("json").dumps(spec.to_dict()))
    assert again == spec
    assert build_model(again).meta["eps"] == 0.02


@pytest.mark.parametrize(
    "d",
    [
        {"family": "heat", "k": 5},
        {"family": "chafee_infante", "k": 2},
        {"family": "chafee_infante", "k": 5, "L": -1.0},
        {"family": "rc_ladder", "k": 5, "shift": -0.1},
        {"family": "rc_ladder", "k": 5, "colour": "red"},
    ],
)
def test_model_spec_validation(d):
    with pytest.raises(DomainError):
        ModelSpec.from_dict(d)


def test_scalar_spec_builds():
    sys_ = ModelSpec("scalar", params=dict(a=-2.0, h=1.0, nn=0.0, b=2.0, c=2.0)).build()
    assert sys_.A[0, 0] == -2.0 and sys_.H.toarray()[0, 0] == 1.0


def test_scalar_example_requires_negative_a():
    with pytest.raises(DomainError):
        ScalarExample(0.0, 1.0, 0.0, 1.0, 1.0)


def test_energy_functionals_closed_form():
    ex = ScalarExample(-2.0, 1.0, 0.0, 2.0, 2.0)
    x = 0.2
    vals = scalar_energy_functionals(ex, x)
    assert vals["Lc"] == pytest.approx(x**2 / 2 - x**3 / 6)
    assert vals["Lo"] == pytest.approx(-2.0 * (x + 2.0 * np.log(1 - x / 2)))
    assert vals["Lc_quad"] == pytest.approx(x**2 / 4)
    assert vals["Lo_trunc"] == pytest.approx(1.25 * x**2 / 2)


def test_energy_functional_log_domain():
    with pytest.raises(DomainError, match="x < 2"):
        scalar_energy_functionals(ScalarExample(-2.0, 1.0, 0.0, 2.0, 2.0), 2.5)
    with pytest.raises(DomainError):
        scalar_energy_functionals(ScalarExample(-2.0, 1.0, 0.5, 2.0, 2.0), 0.1)
