import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_locs
from mrts.basis import MrtsBasis, compute_basis, top_eigenpairs
from mrts.errors import BasisRangeError, RankExhaustedError, ShapeError
from mrts.estimation import DataPanel, fit_ml, model_covariance
from mrts.tps import LocationSet, build_system, kernel_matrix, roughness


def direct_eval(locs, lam, v, s):
    """Per-site formula with no cached pieces."""
    c = locs.coords
    X = np.column_stack([np.ones(len(c)), c])
    x = np.concatenate([[1.0], s])
    phi = kernel_matrix(s[None, :], c)[0]
    Phi = kernel_matrix(c, c)
    g = phi - Phi @ X @ np.linalg.solve(X.T @ X, x)
    return g @ v / lam


def test_polynomial_only_basis():
    locs = random_locs(8, 2, seed=0)
    b = compute_basis(locs, 3)
    assert b.eigvecs.shape == (8, 0)
    s = np.array([[0.3, 0.7]])
    assert_allclose(b.evaluate(s), [[1.0, 0.3, 0.7]])


def test_range_errors():
    locs = random_locs(8, 2, seed=0)
    with pytest.raises(BasisRangeError):
        compute_basis(locs, 2)
    with pytest.raises(BasisRangeError):
        compute_basis(locs, 9)


def test_rank_exhausted_on_near_duplicate():
    # a pair 1e-6 apart leaves an eigenvalue near 1e-13 relative
    pts = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 0.5 + 1e-6])
    compute_basis(LocationSet(pts), 5)
    with pytest.raises(RankExhaustedError):
        compute_basis(LocationSet(pts), 6)


def test_shape_error_on_sites():
    b = compute_basis(random_locs(10, 2, seed=1), 5)
    with pytest.raises(ShapeError):
        b.evaluate(np.zeros((3, 3)))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_eigenvector_identity(d):
    locs = random_locs(30, d, seed=10 + d)
    b = compute_basis(locs, 12)
    F = b.at_controls()
    assert_allclose(F[:, d + 1 :], b.eigvecs, atol=1e-8)
    # cached evaluation agrees with the formula evaluated site by site
    for i in (0, 7, 29):
        for k in range(b.K - d - 1):
            assert direct_eval(locs, b.eigvals[k], b.eigvecs[:, k], locs.coords[i]) == pytest.approx(
                F[i, d + 1 + k], abs=1e-8
            )
    new = np.random.default_rng(d).uniform(size=(4, d))
    Fn = b.evaluate(new)
    for i in range(4):
        assert Fn[i, d + 1] == pytest.approx(direct_eval(locs, b.eigvals[0], b.eigvecs[:, 0], new[i]), abs=1e-10)


def test_orthogonality_and_gram():
    b = compute_basis(random_locs(40, 2, seed=2), 15)
    F = b.at_controls()
    X = F[:, :3]
    assert np.abs(X.T @ F[:, 3:]).max() < 1e-10
    G = b.gram_at_controls()
    assert_allclose(G[3:, 3:], np.eye(12), atol=1e-8)
    assert_allclose(G, G.T, atol=1e-12)
    assert np.linalg.eigvalsh(G).min() > -1e-10


def test_polynomial_gram_1d():
    s = np.array([0.0, 0.5, 1.0])
    b = compute_basis(LocationSet(s), 2)
    assert_allclose(b.gram_at_controls(), [[3, s.sum()], [s.sum(), (s**2).sum()]], atol=1e-14)


def test_regular_1d_family():
    b = compute_basis(LocationSet(np.arange(1, 51) / 50.0), 50)
    assert b.eigvecs.shape[1] == 48
    assert np.all(np.diff(b.eigvals) <= 0)
    # smoothest first: sign changes of the k-th function increase with k
    changes = [np.sum(np.diff(np.sign(b.eigvecs[:, k])) != 0) for k in range(6)]
    assert changes == sorted(changes)


def test_roughness_ordering():
    locs = random_locs(25, 2, seed=3)
    sys_ = build_system(locs)
    b = compute_basis(sys_, 25)
    # f_{d+1+k} has TPS coefficient alpha = v_k / lambda_k
    J = [roughness(b.eigvecs[:, k] / b.eigvals[k], sys_) for k in range(b.K - 3)]
    assert_allclose(J, 1.0 / b.eigvals, rtol=1e-8)
    assert np.all(np.diff(J) >= 0)


def test_minimality_against_competitors(rng):
    locs = random_locs(20, 2, seed=4)
    sys_ = build_system(locs)
    w, V = np.linalg.eigh(sys_.QPhiQ)
    keep = w > 1e-10 * w.max()
    w, V = w[keep][::-1], V[:, keep][:, ::-1]
    J1 = roughness(V[:, 0] / w[0], sys_)
    for _ in range(100):
        c = rng.standard_normal(len(w))
        c /= np.linalg.norm(c)  # unit norm at the control points
        alpha = V @ (c / w)
        assert roughness(alpha, sys_) >= J1 - 1e-10


def test_spanning_natural_splines(rng):
    locs = random_locs(18, 2, seed=5)
    sys_ = build_system(locs)
    b = compute_basis(sys_, 18)
    alpha = sys_.Q @ rng.standard_normal(18)
    beta = rng.standard_normal(3)
    g = sys_.Phi @ alpha + sys_.X @ beta
    F = b.at_controls()
    coef, *_ = np.linalg.lstsq(F, g, rcond=None)
    assert np.linalg.norm(F @ coef - g) < 1e-8


def test_sign_flip_invariance(rng):
    locs = random_locs(25, 2, seed=6)
    b = compute_basis(locs, 8)
    flip = np.array([1, -1, 1, -1, -1])
    b2 = MrtsBasis(locs, 8, b.eigvals, b.eigvecs * flip, b.proj_coeffs * flip)
    Z = rng.standard_normal((25, 10)) * 2
    panel = DataPanel(Z, locs)
    f1, f2 = fit_ml(panel, b, 0.5), fit_ml(panel, b2, 0.5)
    for _ in range(100):
        s, t = rng.uniform(size=2), rng.uniform(size=2)
        assert model_covariance(f1, s, t) == pytest.approx(model_covariance(f2, s, t), abs=1e-10)


def test_sign_convention():
    b = compute_basis(random_locs(30, 2, seed=7), 10)
    V = b.eigvecs
    idx = np.argmax(np.abs(V), axis=0)
    assert np.all(V[idx, np.arange(V.shape[1])] > 0)


def test_serialization_round_trip(tmp_path):
    b = compute_basis(random_locs(30, 2, seed=8), 10)
    path = tmp_path / "b.json"
    b.save(path)
    c = MrtsBasis.load(path)
    for name in ("eigvals", "eigvecs", "proj_coeffs"):
        assert np.array_equal(getattr(b, name), getattr(c, name))
    assert np.array_equal(b.locs.coords, c.locs.coords)


def test_truncate_is_nested():
    b = compute_basis(random_locs(30, 2, seed=9), 12)
    s = np.random.default_rng(0).uniform(size=(5, 2))
    assert np.array_equal(b.truncate(7).evaluate(s), b.evaluate(s, 7))


def test_lanczos_matches_dense():
    sys_ = build_system(random_locs(620, 2, seed=11))
    w1, V1 = top_eigenpairs(sys_.QPhiQ, 20)
    w2, V2 = top_eigenpairs(sys_.QPhiQ, 20, dense_limit=10_000)
    assert_allclose(w1, w2, rtol=1e-10)
    assert_allclose(np.abs(V1.T @ V2), np.eye(20), atol=1e-6)
    resid = np.linalg.norm(sys_.QPhiQ @ V1 - V1 * w1, axis=0)
    assert resid.max() <= 1e-8 * w1[0]


def test_ties_are_flagged():
    g = np.arange(1, 6) / 6.0
    pts = np.array([[a, b] for a in g for b in g])  # square symmetry gives repeated eigenvalues
    b = compute_basis(LocationSet(pts), 10)
    assert len(b.ties) > 0
    for i, j in b.ties:
        assert j == i + 1
