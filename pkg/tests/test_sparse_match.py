import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import nnls as scipy_nnls

from _oracles import RandomRankOne, brute_force_two
from shrinkmatch.dictionary import SpatialDictionary, SparseCoefficients, vec
from shrinkmatch.signal_model import SystemDims
from shrinkmatch.sparse_match import (NnlsError, NnOmpParams, OmpTrace, correlate_all, match_covariance, nn_omp,
                                      nnls, nnls_gram)


def test_two_sparse_matches_brute_force():
    rng = np.random.default_rng(2024)
    for trial in range(100):
        D = int(rng.integers(20, 101))
        dictionary = RandomRankOne(side=6, size=D, seed=trial)
        pair = rng.choice(D, size=2, replace=False)
        vals = rng.uniform(0.5, 2.0, size=2)
        target = sum(v * dictionary.atom_matrix(i) for i, v in zip(pair, vals))
        res, bf_pair, bf_x = brute_force_two(dictionary, target)
        assert res < 1e-8
        trace = OmpTrace()
        got = nn_omp(dictionary, target, NnOmpParams(tau_omp=1e-12), trace)
        npt.assert_array_equal(got.support, sorted(bf_pair))
        order = np.argsort(bf_pair)
        npt.assert_allclose(got.values, np.asarray(bf_x)[order], atol=1e-6)
        assert np.all(np.diff(trace.residual_norms) <= 1e-9 * trace.residual_norms[0])


def test_residual_monotone_on_noisy_target():
    rng = np.random.default_rng(3)
    dictionary = RandomRankOne(side=5, size=60, seed=9)
    for _ in range(20):
        X = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        trace = OmpTrace()
        nn_omp(dictionary, X @ X.conj().T, NnOmpParams(max_support=20), trace)
        assert np.all(np.diff(trace.residual_norms) <= 1e-12)
        assert trace.stop_reason in ("converged", "no_improving_atom", "max_support")


def test_zero_target_returns_empty():
    dictionary = RandomRankOne(side=4, size=10, seed=0)
    trace = OmpTrace()
    out = nn_omp(dictionary, np.zeros((4, 4)), trace=trace)
    assert len(out) == 0 and trace.stop_reason == "no_improving_atom"


def test_negative_definite_target_selects_nothing():
    sd = SpatialDictionary(SystemDims(N_R=3, B=8))
    assert len(nn_omp(sd, -np.eye(3))) == 0


def test_max_support_respected():
    dictionary = RandomRankOne(side=6, size=50, seed=1)
    rng = np.random.default_rng(0)
    target = sum(dictionary.atom_matrix(i) for i in rng.choice(50, 10, replace=False))
    trace = OmpTrace()
    out = nn_omp(dictionary, target, NnOmpParams(max_support=3, tau_omp=1e-12), trace)
    assert len(trace.selected) == 3 and len(out) <= 3
    assert trace.stop_reason == "max_support"


def test_min_correlation_floor_stops_early():
    sd = SpatialDictionary(SystemDims(N_R=4, B=16))
    target = 1e-3 * sd.atom_matrix(3)
    assert len(nn_omp(sd, target, NnOmpParams(min_correlation=1.0))) == 0
    npt.assert_array_equal(nn_omp(sd, target).support, [3])


def test_match_covariance_removes_noise():
    sd = SpatialDictionary(SystemDims(N_R=4, B=16))
    cov = 2.0 * sd.atom_matrix(5) + 0.7 * np.eye(4)
    out = match_covariance(cov, 0.7, sd, NnOmpParams(tau_omp=1e-12))
    npt.assert_array_equal(out.support, [5])
    npt.assert_allclose(out.values, [2.0])
    with pytest.raises(ValueError):
        match_covariance(np.eye(3), 0.1, sd)


def test_bad_targets_rejected():
    sd = SpatialDictionary(SystemDims(N_R=2, B=4))
    with pytest.raises(ValueError):
        nn_omp(sd, np.eye(3))
    with pytest.raises(ValueError):
        nn_omp(sd, np.full((2, 2), np.nan))


def test_correlate_all_formula():
    sd = SpatialDictionary(SystemDims(N_R=3, B=6))
    R = sd.atom_matrix(2) - 0.5 * sd.atom_matrix(4)
    eps = correlate_all(sd, R)
    corr = np.array([np.real(np.vdot(sd.atom(i), vec(R))) for i in range(6)])
    expected = np.sum(np.abs(R) ** 2) - np.maximum(corr, 0) ** 2 / sd.norms_sq()
    npt.assert_allclose(eps, expected)
    assert np.argmin(eps) == 2


def test_params_validation():
    with pytest.raises(ValueError):
        NnOmpParams(tau_omp=0)
    with pytest.raises(ValueError):
        NnOmpParams(max_support=0)
    with pytest.raises(ValueError):
        NnOmpParams(min_correlation=-1)


def _kkt_ok(A, b, x, tol=1e-8):
    w = A.T @ (b - A @ x)
    scale = max(1.0, np.abs(A.T @ b).max())
    return np.all(x >= 0) and np.all(w <= tol * scale) and np.all(np.abs(w[x > 0]) <= tol * scale)


@given(st.integers(1, 25), st.integers(1, 25), st.integers(0, 2**31))
def test_nnls_against_scipy(m, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    x = nnls(A, b)
    assert _kkt_ok(A, b, x)
    if m >= n:
        ref = scipy_nnls(A, b)[0]
        npt.assert_allclose(np.linalg.norm(A @ x - b), np.linalg.norm(A @ ref - b), atol=1e-8)


def test_nnls_hand_case():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    npt.assert_allclose(nnls(A, np.array([2.0, -1.0])), [2.0, 0.0])


def test_nnls_iteration_cap():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((10, 8))
    b = A @ np.abs(rng.standard_normal(8))
    with pytest.raises(NnlsError):
        nnls(A, b, max_iter=1)


def test_nnls_shape_checks():
    with pytest.raises(ValueError):
        nnls(np.ones((3, 2)), np.ones(2))
    with pytest.raises(ValueError):
        nnls_gram(np.eye(2), np.ones(3))


def test_sparse_coefficients_kind_preserved():
    sd = SpatialDictionary(SystemDims(N_R=3, B=6))
    out = nn_omp(sd, sd.atom_matrix(1))
    assert isinstance(out, SparseCoefficients) and out.kind == "spatial"
