import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from conftest import random_locs
from mrts.errors import (
    ConstraintViolationError,
    DegenerateGeometryError,
    DimensionError,
    DuplicateLocationError,
)
from mrts.tps import (
    LocationSet,
    build_system,
    design_matrix,
    kernel_matrix,
    read_locations,
    roughness,
    tps_kernel,
)


def test_kernel_values():
    assert tps_kernel([0.5], [0.0]) == pytest.approx(0.5**3 / 12, rel=1e-15)
    assert tps_kernel([1.0, 0.0], [0.0, 0.0]) == 0.0
    assert tps_kernel([2.0, 0.0, 0.0], [0.0, 0.0, 0.0]) == pytest.approx(-0.25)
    assert tps_kernel([0.3, 0.4], [0.3, 0.4]) == 0.0
    r = 0.7
    assert tps_kernel([r, 0.0], [0.0, 0.0]) == pytest.approx(r * r * np.log(r) / (8 * np.pi))


def test_kernel_rejects_dimension():
    with pytest.raises(DimensionError):
        tps_kernel(np.zeros(4), np.ones(4))
    with pytest.raises(DimensionError):
        LocationSet(np.random.default_rng(0).uniform(size=(10, 4)))


def test_location_validation():
    with pytest.raises(DuplicateLocationError):
        LocationSet(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(DegenerateGeometryError):
        LocationSet(np.array([[0.0], [1.0]]))  # n must exceed d + 1
    # points on x2 = 0 leave the x2 column of X identically zero
    with pytest.raises(DegenerateGeometryError):
        LocationSet(np.column_stack([np.arange(5.0), np.zeros(5)]))


def test_read_locations_header_optional(tmp_path):
    a = tmp_path / "a.csv"
    a.write_text("x1,x2\n0,0\n1,0\n0,1\n1,1\n")
    b = tmp_path / "b.csv"
    b.write_text("0,0\n1,0\n0,1\n1,1\n")
    assert np.array_equal(read_locations(a).coords, read_locations(b).coords)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_system_invariants(d):
    locs = random_locs(25, d, seed=d)
    sys_ = build_system(locs)
    n = locs.n
    Q = sys_.Q
    scale = np.abs(sys_.X).max()
    assert np.all(sys_.X[:, 0] == 1.0)
    assert np.array_equal(sys_.Phi, sys_.Phi.T)
    assert np.all(np.diag(sys_.Phi) == 0.0)
    assert np.abs(Q @ sys_.X).max() < 1e-10 * scale
    assert_allclose(Q @ Q, Q, atol=1e-10)
    assert_allclose(Q, Q.T, atol=1e-12)
    assert np.trace(Q) == pytest.approx(n - d - 1, abs=1e-10)
    w = np.linalg.eigvalsh(sys_.QPhiQ)
    assert np.sum(w > 1e-10 * w.max()) == n - d - 1


@pytest.mark.parametrize("n,d", [(40, 1), (120, 2), (200, 3)])
def test_trick_matches_naive_product(n, d):
    sys_ = build_system(random_locs(n, d, seed=n))
    Q = sys_.Q
    naive = Q @ sys_.Phi @ Q
    err = np.linalg.norm(sys_.QPhiQ - naive) / np.linalg.norm(naive)
    assert err < 1e-9


def test_rank_on_regular_1d_grid():
    sys_ = build_system(LocationSet(np.arange(1, 51) / 50.0))
    w = np.linalg.eigvalsh(sys_.QPhiQ)
    assert np.sum(w > 1e-10 * w.max()) == 48


def test_qphiq_is_psd(rng):
    sys_ = build_system(random_locs(40, 2, seed=3))
    lam_max = np.linalg.eigvalsh(sys_.QPhiQ).max()
    for _ in range(100):
        a = rng.standard_normal(40)
        assert a @ sys_.QPhiQ @ a >= -1e-10 * (a @ a) * lam_max


def test_roughness_zero_and_constraint():
    sys_ = build_system(random_locs(10, 1, seed=4))
    assert roughness(np.zeros(10), sys_) == 0.0
    with pytest.raises(ConstraintViolationError):
        roughness(np.ones(10), sys_)


def test_roughness_first_eigenpair():
    sys_ = build_system(random_locs(15, 2, seed=5))
    w, V = np.linalg.eigh(sys_.QPhiQ)
    assert roughness(V[:, -1] / w[-1], sys_) == pytest.approx(1.0 / w[-1], rel=1e-10)


def test_roughness_matches_1d_quadrature(rng):
    # f'' = sum_i alpha_i |s - s_i| / 2 and vanishes outside the hull when X' alpha = 0
    s = np.sort(rng.uniform(size=10))
    sys_ = build_system(LocationSet(s))
    alpha = sys_.Q @ rng.standard_normal(10)

    def f2(x):
        return 0.5 * np.sum(alpha * np.abs(x - s))

    J, _ = integrate.quad(lambda x: f2(x) ** 2, s[0], s[-1], points=s[1:-1], epsabs=0, epsrel=1e-12, limit=200)
    assert roughness(alpha, sys_) == pytest.approx(J, rel=1e-4)


def test_kernel_matrix_symmetry():
    c = random_locs(12, 3, seed=6).coords
    K = kernel_matrix(c, c)
    assert np.array_equal(K, K.T)
    assert design_matrix(c).shape == (12, 4)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(5, 30), d=st.integers(1, 3), seed=st.integers(0, 2**32 - 1))
def test_projector_property(n, d, seed):
    if n <= d + 1:
        return
    sys_ = build_system(random_locs(n, d, seed=seed))
    Q = sys_.Q
    assert np.abs(Q @ sys_.X).max() < 1e-10 * max(1.0, np.abs(sys_.X).max()) * n
    assert np.trace(Q) == pytest.approx(n - d - 1, abs=1e-9)
