import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isoreg import geometry as geo
from isoreg.errors import ContractViolation, DataFormatError, DegenerateInputError
from isoreg.numcore import make_rng

SYMMETRIC4 = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
ANISO4 = np.array([[2.0, 0], [-2, 0], [0, 1], [0, -1]])


def brute_isotropy(V):
    """Independent route: LAPACK eigenvectors and a plain Python Z sum."""
    Vc = V - V.mean(axis=0)
    _, C = np.linalg.eigh(Vc.T @ Vc)
    zs = []
    for k in range(C.shape[1]):
        for sign in (1.0, -1.0):
            c = sign * C[:, k]
            zs.append(math.fsum(math.exp(float(c @ v)) for v in Vc))
    return min(zs) / max(zs)


def random_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


# -- center ---------------------------------------------------------------

def test_center_simple():
    assert geo.center([[1.0], [3.0]]).tolist() == [[-1.0], [1.0]]


def test_center_idempotent():
    V = geo.center(make_rng(0).normal(size=(8, 3)))
    np.testing.assert_allclose(geo.center(V), V, atol=1e-12)


def test_center_column_sums():
    V = geo.center(make_rng(1).normal(size=(8, 3)) * 5 + 2)
    assert np.abs(V.sum(axis=0)).max() <= 1e-10


# -- eigen ----------------------------------------------------------------

def test_eigen_diagonal():
    b = geo.symmetric_eigen(np.diag([2.0, 8.0]))
    np.testing.assert_allclose(b.values, [8, 2])
    np.testing.assert_allclose(np.abs(b.vectors), [[0, 1], [1, 0]], atol=1e-12)


def test_eigen_identity():
    np.testing.assert_allclose(geo.symmetric_eigen(np.eye(3)).values, 1.0)


def test_eigen_2x2():
    b = geo.symmetric_eigen(np.array([[2.0, 1], [1, 2]]))
    np.testing.assert_allclose(b.values, [3, 1], atol=1e-12)
    s = 1 / math.sqrt(2)
    assert abs(abs(b.vectors[:, 0] @ [s, s]) - 1) < 1e-12
    assert abs(abs(b.vectors[:, 1] @ [s, -s]) - 1) < 1e-12


def test_eigen_rejects_asymmetric():
    with pytest.raises(ContractViolation):
        geo.symmetric_eigen(np.array([[1.0, 2], [0, 1]]))


@pytest.mark.parametrize("d", [1, 2, 3, 7, 16, 33, 64])
def test_eigen_invariants(d):
    rng = make_rng(d)
    X = rng.normal(size=(d, d))
    S = X + X.T
    b = geo.symmetric_eigen(S)
    assert np.all(np.diff(b.values) <= 0)
    np.testing.assert_allclose(np.linalg.norm(b.vectors, axis=0), 1.0, atol=1e-10)
    off = b.vectors.T @ b.vectors - np.eye(d)
    assert np.abs(off).max() <= 1e-8
    assert np.linalg.norm(b.reconstruct() - S) <= 1e-8
    np.testing.assert_allclose(b.values, np.sort(np.linalg.eigvalsh(S))[::-1], atol=1e-9)


# -- partition function / isotropy -----------------------------------------

def test_partition_function_examples():
    assert geo.partition_function([1, 0], SYMMETRIC4) == pytest.approx(math.e + 1 / math.e + 2)
    assert geo.partition_function([0.6, 0.8], np.zeros((5, 2))) == pytest.approx(5.0)
    assert geo.partition_function([1, 0], ANISO4) == pytest.approx(math.e ** 2 + math.e ** -2 + 2)


def test_partition_function_overflow_guard():
    V = np.array([[800.0, 0], [-800, 0]])
    assert geo.log_partition_function([1, 0], V) == pytest.approx(800.0)


def test_partition_function_needs_unit_vector():
    with pytest.raises(ContractViolation):
        geo.partition_function([1, 1], SYMMETRIC4)


def test_isotropy_symmetric():
    assert abs(geo.isotropy(SYMMETRIC4) - 1.0) <= 1e-12


def test_isotropy_anisotropic():
    expected = (math.e + 1 / math.e + 2) / (math.e ** 2 + math.e ** -2 + 2)
    assert geo.isotropy(ANISO4) == pytest.approx(expected, abs=1e-12)
    assert geo.isotropy(ANISO4) == pytest.approx(0.5340, abs=1e-4)


def test_isotropy_gaussian_approaches_one_with_n():
    means = [np.mean([geo.isotropy(make_rng(s).normal(size=(n, 8))) for s in range(10)])
             for n in (100, 1000, 10_000)]
    assert means[0] < means[1] < means[2]
    assert means[1] >= 0.75


@pytest.mark.xfail(strict=True, reason=(
    "finite-sample noise in Z: n=1000 standard Gaussians in d=8 score ~0.80-0.86"))
def test_isotropy_gaussian_monte_carlo_095():
    vals = [geo.isotropy(make_rng(s).normal(size=(1000, 8))) for s in range(10)]
    assert min(vals) >= 0.95


def test_isotropy_degenerate():
    with pytest.raises(DegenerateInputError):
        geo.isotropy(np.ones((5, 3)))
    with pytest.raises(DegenerateInputError):
        geo.isotropy(np.ones((1, 3)))


def test_isotropy_matches_brute_force():
    for s in range(20):
        rng = make_rng(s)
        n, d = int(rng.integers(3, 40)), int(rng.integers(2, 9))
        V = rng.normal(size=(n, d)) * rng.uniform(0.1, 2.0, size=d)
        assert geo.isotropy(V) == pytest.approx(brute_isotropy(V), abs=1e-9)


def test_isotropy_rotation_invariant():
    for s in range(10):
        rng = make_rng(50 + s)
        V = rng.normal(size=(30, 5)) * [3, 1, 1, 0.5, 0.2]
        R = random_orthogonal(5, rng)
        assert geo.isotropy(V @ R) == pytest.approx(geo.isotropy(V), abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 50.0), st.integers(0, 10_000))
def test_isotropy_in_unit_interval_for_any_scale(alpha, seed):
    V = make_rng(seed).normal(size=(12, 3))
    val = geo.isotropy(alpha * V)
    assert 0.0 <= val <= 1.0


# -- covariance / correlation ------------------------------------------------

def test_covariance_examples():
    assert np.array_equal(geo.covariance([[1.0, 2], [1, 2]]), np.zeros((2, 2)))
    np.testing.assert_allclose(geo.covariance([[1.0, 1], [-1, -1]]), [[2, 2], [2, 2]])


def test_covariance_two_pass_oracle():
    V = make_rng(4).normal(size=(16, 4))
    n, d = V.shape
    mean = [sum(V[:, j]) / n for j in range(d)]
    C = np.array([[sum((V[i, a] - mean[a]) * (V[i, b] - mean[b]) for i in range(n)) / (n - 1)
                   for b in range(d)] for a in range(d)])
    np.testing.assert_allclose(geo.covariance(V), C, atol=1e-12, rtol=0)


def test_covariance_needs_two_rows():
    with pytest.raises(DegenerateInputError):
        geo.covariance([[1.0, 2.0]])


def test_correlation_linearly_dependent():
    x = make_rng(5).normal(size=20)
    R = geo.correlation(np.stack([x, 2 * x], axis=1))
    assert abs(R[0, 1] - 1) <= 1e-6


def test_correlation_orthogonal_design():
    V = np.array([[1.0, 5], [-1, 5], [1, -5], [-1, -5]])
    assert abs(geo.correlation(V)[0, 1]) <= 1e-15


def test_correlation_pearson_oracle():
    V = make_rng(6).normal(size=(32, 5))
    R = geo.correlation(V)
    for i in range(5):
        for j in range(5):
            a, b = V[:, i] - V[:, i].mean(), V[:, j] - V[:, j].mean()
            cov = (a @ b) / 31
            ref = cov / math.sqrt((a @ a / 31 + 1e-8) * (b @ b / 31 + 1e-8))
            assert R[i, j] == pytest.approx(ref, abs=1e-10)
    assert np.all(np.abs(R) <= 1 + 1e-9)


def test_correlation_affine_invariant():
    rng = make_rng(7)
    V = rng.normal(size=(40, 4))
    a = rng.uniform(0.5, 3.0, size=4)
    c = rng.normal(size=4) * 10
    np.testing.assert_allclose(geo.correlation(V * a + c), geo.correlation(V), atol=1e-8)


# -- whitening -----------------------------------------------------------------

def test_whitening_on_white_data():
    rng = make_rng(8)
    V = geo.center(rng.normal(size=(64, 3)))
    L = np.linalg.cholesky(geo.covariance(V))
    V = V @ np.linalg.inv(L).T          # exact identity covariance
    wm = geo.fit_whitening(V)
    T = wm.transform
    np.testing.assert_allclose(T.T @ T, np.eye(3), atol=1e-8)
    np.testing.assert_allclose(geo.covariance(wm.apply(V)), np.eye(3), atol=1e-8)


def test_whitening_anisotropic_gaussian_covariance():
    V = make_rng(9).normal(size=(512, 2)) * [10.0, 1.0]
    C = geo.covariance(geo.fit_whitening(V).apply(V))
    assert np.abs(C - np.diag(np.diag(C))).max() <= 1e-8
    np.testing.assert_allclose(np.diag(C), 1.0, atol=1e-6)


def test_whitening_raises_isotropy():
    V = make_rng(9).normal(size=(512, 2)) * [10.0, 1.0]
    before = geo.isotropy(V)
    after = geo.isotropy(geo.fit_whitening(V).apply(V))
    assert before < 1e-10 < 0.9 < after


@pytest.mark.xfail(strict=True, reason=(
    "unit-variance samples keep third-moment noise in Z: whitened n=512 Gaussians "
    "score ~0.92-0.96, not >= 0.999"))
def test_whitening_anisotropic_gaussian_reaches_0999():
    V = make_rng(9).normal(size=(512, 2)) * [10.0, 1.0]
    assert geo.isotropy(geo.fit_whitening(V).apply(V)) >= 0.999


def test_whitening_four_point():
    assert geo.isotropy(geo.fit_whitening(ANISO4).apply(ANISO4)) == pytest.approx(1.0, abs=1e-6)


def test_apply_identity_map():
    V = make_rng(10).normal(size=(5, 3))
    wm = geo.WhiteningMap(np.zeros(3), np.eye(3))
    assert np.array_equal(geo.apply_whitening(wm, V), V)


def test_apply_dimension_mismatch():
    wm = geo.WhiteningMap(np.zeros(3), np.eye(3))
    with pytest.raises(ContractViolation):
        geo.apply_whitening(wm, np.ones((2, 4)))


def test_whitening_generalizes_to_held_out_split():
    rng = make_rng(11)
    mix = rng.normal(size=(6, 6))
    train = rng.normal(size=(4000, 6)) @ mix
    test = rng.normal(size=(4000, 6)) @ mix
    wm = geo.fit_whitening(train)
    W = wm.apply(test)
    np.testing.assert_allclose(geo.covariance(W), np.eye(6), atol=0.1)
    assert geo.isotropy(test) < 0.01 < 0.9 < geo.isotropy(W)


def test_whitening_property_n_ge_8d():
    for d in (2, 4, 8, 16):
        rng = make_rng(20 + d)
        V = rng.normal(size=(8 * d, d)) @ rng.normal(size=(d, d))
        C = geo.covariance(geo.fit_whitening(V).apply(V))
        assert np.abs(C - np.diag(np.diag(C))).max() <= 1e-8
        # the 1e-10 eigenvalue floor shifts small directions slightly
        np.testing.assert_allclose(np.diag(C), 1.0, rtol=1e-4)


# -- text format ---------------------------------------------------------------

def test_embedding_file_round_trip(tmp_path):
    V = make_rng(12).normal(size=(4, 3))
    p = tmp_path / "e.txt"
    geo.save_embeddings(p, V)
    assert p.read_bytes().split(b"\n")[0] == b"4 3"
    assert np.array_equal(geo.load_embeddings(p), V)


@pytest.mark.parametrize("text", ["", "2\n1 2\n", "2 2\n1 2\n", "1 2\n1 x\n", "1 2\n1 2 3\n"])
def test_embedding_file_malformed(tmp_path, text):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    with pytest.raises(DataFormatError):
        geo.load_embeddings(p)
