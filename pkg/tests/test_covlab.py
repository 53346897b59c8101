import numpy as np
import pytest
from numpy.testing import assert_allclose

from mrts import covlab
from mrts.errors import CollinearBasisError, MrtsError, ShapeError
from mrts.tps import radial_kernel


@pytest.fixture(scope="module")
def grid1():
    return covlab.trapezoid_grid(1, 201)


def test_bisquare_values():
    assert covlab.bisquare([0.3], [0.3], 0.5) == 1.0
    assert covlab.bisquare([0.8], [0.3], 0.5) == 0.0
    assert covlab.bisquare([0.3 + 0.5 / np.sqrt(2)], [0.3], 0.5) == pytest.approx(0.25)
    with pytest.raises(MrtsError):
        covlab.bisquare([0.0], [0.0], 0.0)
    with pytest.raises(MrtsError):
        covlab.BisquareBasis(np.zeros((2, 1)), np.array([1.0, -1.0]))


def test_trapezoid_weights():
    g = covlab.trapezoid_grid(2, 5)
    assert g.weights.sum() == pytest.approx(1.0)
    f = g.points[:, 0] * g.points[:, 1]
    assert g.weights @ f == pytest.approx(0.25)


def test_example1_recovery(grid1):
    F = covlab.example1_basis().evaluate(grid1.points)
    C0 = covlab.reference_covariance("example1")
    assert covlab.ise(F, covlab.EXAMPLE1_M, C0, grid1) < 1e-10
    M = covlab.best_M_ise(F, C0, grid1)
    assert_allclose(M, covlab.EXAMPLE1_M, atol=1e-6)


def test_zero_M_gives_integrated_square(grid1):
    C0 = covlab.reference_covariance("deformed_exponential")
    F = covlab.poor_basis_f2().evaluate(grid1.points)
    # independent double loop over the trapezoid rule
    x = grid1.points[:, 0]
    w = grid1.weights
    total = 0.0
    for i in range(0, len(x)):
        row = np.exp(-2 * np.abs((x[i] + 0.5) ** -1.5 - (x + 0.5) ** -1.5))
        total += w[i] * np.sum(w * row**2)
    assert covlab.ise(F, np.zeros((6, 6)), C0, grid1) == pytest.approx(total, rel=1e-12)


def test_zero_target(grid1):
    F = covlab.poor_basis_f1().evaluate(grid1.points)
    M = covlab.best_M_ise(F, np.zeros((201, 201)), grid1)
    assert np.all(M == 0)


def test_superset_basis(grid1):
    C0 = covlab.reference_covariance("example1")
    F = covlab.example1_basis(shift=0.0, count=7).evaluate(grid1.points)
    _, e = covlab.best_M_ise(F, C0, grid1, return_ise=True)
    assert e < 1e-8


def test_radius_half_is_exact(grid1):
    C0 = covlab.reference_covariance("example1")
    _, e = covlab.best_M_ise(covlab.example1_basis(radius=0.5).evaluate(grid1.points), C0, grid1, True)
    assert e < 1e-8


def test_errors(grid1):
    F = covlab.example1_basis().evaluate(grid1.points)
    with pytest.raises(ShapeError):
        covlab.ise(F, np.zeros((6, 5)), covlab.reference_covariance("example1"), grid1)
    with pytest.raises(CollinearBasisError):
        covlab.best_M_ise(np.hstack([F, F[:, :1]]), covlab.reference_covariance("example1"), grid1)
    with pytest.raises(MrtsError):
        covlab.reference_covariance("matern")
    with pytest.raises(MrtsError):
        covlab.bisquare_layout("layout7")


def test_tps_grid_basis():
    assert covlab.conventional_tps_basis(3).K == 12
    assert [covlab.conventional_tps_basis(L).K for L in (3, 5, 7, 9, 11, 13)] == [12, 28, 52, 84, 124, 172]
    b = covlab.conventional_tps_basis(3)
    F = b.evaluate(b.centers[:1])
    assert F[0, 3] == 0.0
    s = np.array([[0.1, 0.9]])
    expected = radial_kernel(np.linalg.norm(s - b.centers, axis=1), 2)
    assert_allclose(b.evaluate(s)[0, 3:], expected)
    assert_allclose(b.evaluate(s)[0, :3], [1, 0.1, 0.9])


def test_layout_sizes():
    assert [covlab.bisquare_layout(n).K for n in covlab.LAYOUT_NAMES] == [8, 13, 14, 18, 20, 21]


def test_reference_covariances():
    c = covlab.reference_covariance("exponential2d")
    assert c([0, 0], [3, 4]) == pytest.approx(20 * np.exp(-2.0))
    d = covlab.reference_covariance("deformed_exponential")
    assert d([0.1], [0.7]) == pytest.approx(np.exp(-2 * abs(0.6**-1.5 - 1.2**-1.5)))
    rng = np.random.default_rng(0)
    for kind in ("example1", "deformed_exponential"):
        C = covlab.reference_covariance(kind)
        A = rng.uniform(size=(20, 1))
        M = C.matrix(A)
        assert_allclose(M, M.T, atol=1e-14)
        assert np.all(np.diag(M) > 0)


def test_quadrature_convergence():
    C0 = covlab.reference_covariance("example1")
    for basis in (covlab.poor_basis_f1(), covlab.poor_basis_f2(), covlab.example1_basis(radius=0.4)):
        vals = []
        for size in (101, 201):
            g = covlab.trapezoid_grid(1, size)
            vals.append(covlab.best_M_ise(basis.evaluate(g.points), C0, g, True)[1])
        assert abs(vals[0] - vals[1]) < 0.02 * vals[1]


def test_projection_optimality(rng):
    g = covlab.trapezoid_grid(1, 51)
    F = covlab.BisquareBasis(np.array([[0.2], [0.5], [0.8]]), np.full(3, 0.4)).evaluate(g.points)
    for _ in range(5):
        A = rng.standard_normal((3, 3))
        target = F @ (A + A.T) @ F.T  # indefinite target forces the projection
        M, e = covlab.best_M_ise(F, target, g, True)
        assert np.linalg.eigvalsh(M).min() >= -1e-10
        for _ in range(100):
            B = 0.1 * rng.standard_normal((3, 3))
            w, V = np.linalg.eigh(M + B + B.T)
            cand = (V * np.clip(w, 0, None)) @ V.T
            assert covlab.ise(F, cand, target, g) >= e - 1e-10


def test_idempotence(grid1):
    F = covlab.poor_basis_f2().evaluate(grid1.points)
    M = covlab.best_M_ise(F, covlab.reference_covariance("example1"), grid1)
    M2 = covlab.best_M_ise(F, F @ M @ F.T, grid1)
    assert_allclose(M2, M, atol=1e-8)


def test_basis_round_trip():
    b = covlab.bisquare_layout("layout3")
    c = covlab.BisquareBasis.from_dict(b.to_dict())
    assert np.array_equal(b.centers, c.centers) and np.array_equal(b.radii, c.radii)


def test_control_sets():
    assert covlab.unit_controls_1d().n == 50
    c = covlab.unit_controls_2d()
    assert c.n == 324
    assert c.coords.min() == pytest.approx(1 / 36)
