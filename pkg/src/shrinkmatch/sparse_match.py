"""Nonnegative orthogonal matching pursuit over an atom dictionary.

Targets are Hermitian matrices and atoms are vectorized Hermitian matrices,
so every inner product used here is the real Frobenius pairing
``Re <m_d, r>``; least-squares refits are carried out in that real geometry.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dictionary import AtomDictionary, SparseCoefficients, vec


class NnlsError(RuntimeError):
    pass


@dataclass(frozen=True)
class NnOmpParams:
    """Stopping rules of the greedy loop.

    ``min_correlation`` is an absolute floor on the normalized correlation
    ``<m_d, r> / ||m_d||``; the loop stops when no atom exceeds it.  The
    default of zero stops only when no atom correlates positively.
    """

    tau_omp: float = 1e-3
    max_support: int = 64
    eps_supp: float = 1e-6
    min_correlation: float = 0.0

    def __post_init__(self):
        if self.tau_omp <= 0:
            raise ValueError("tau_omp must be positive")
        if self.max_support < 1:
            raise ValueError("max_support must be >= 1")
        if self.min_correlation < 0:
            raise ValueError("min_correlation must be nonnegative")


@dataclass
class OmpTrace:
    """Per-iteration diagnostics of one NN-OMP run."""

    selected: list[int] = field(default_factory=list)
    residual_norms: list[float] = field(default_factory=list)
    stop_reason: str = ""


def nnls_gram(G: np.ndarray, h: np.ndarray, max_iter: int | None = None, tol: float | None = None) -> np.ndarray:
    """Lawson-Hanson active set on the normal equations.

    Minimizes ``x^T G x - 2 h^T x`` over ``x >= 0`` for a symmetric positive
    semidefinite ``G``; equivalent to ``min ||A x - b||`` with ``G = A^T A``
    and ``h = A^T b``.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float).reshape(-1)
    n = h.size
    if G.shape != (n, n):
        raise ValueError("Gram matrix and right-hand side disagree")
    if max_iter is None:
        max_iter = 3 * n + 30
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.max(np.abs(h), initial=0.0))) * max(1.0, float(np.max(np.abs(np.diag(G)), initial=0.0)))
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = h - G @ x
    iters = 0
    while not passive.all() and np.max(np.where(passive, -np.inf, w)) > tol:
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            iters += 1
            if iters > max_iter:
                raise NnlsError(f"NNLS did not converge in {max_iter} iterations (active set {np.flatnonzero(passive)})")
            idx = np.flatnonzero(passive)
            z = np.zeros(n)
            z[idx] = _solve_psd(G[np.ix_(idx, idx)], h[idx])
            if np.all(z[idx] > 0):
                x = z
                break
            neg = idx[z[idx] <= 0]
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol * 1e-3
            x[~passive] = 0.0
            if not passive.any():
                break
        w = h - G @ x
    return x


def _solve_psd(G: np.ndarray, h: np.ndarray) -> np.ndarray:
    try:
        c = np.linalg.cholesky(G)
        return np.linalg.solve(c.T, np.linalg.solve(c, h))
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(G, h, rcond=None)[0]


def nnls(A: np.ndarray, b: np.ndarray, max_iter: int | None = None) -> np.ndarray:
    """``argmin ||A x - b||_2`` subject to ``x >= 0`` for real ``A`` and ``b``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != b.size:
        raise ValueError("A must be an m x n matrix matching b")
    return nnls_gram(A.T @ A, A.T @ b, max_iter=max_iter)


def correlate_all(dictionary: AtomDictionary, R: np.ndarray) -> np.ndarray:
    """Residual energy left after a one-atom nonnegative fit, per atom.

    ``eps(d) = ||r||^2 - max(<m_d, r>, 0)^2 / ||m_d||^2``.
    """
    corr = dictionary.correlate(R)
    gain = np.maximum(corr, 0.0) ** 2 / dictionary.norms_sq()
    return float(np.sum(np.abs(R) ** 2)) - gain


def nn_omp(dictionary: AtomDictionary, target: np.ndarray, params: NnOmpParams = NnOmpParams(),
           trace: OmpTrace | None = None) -> SparseCoefficients:
    """Greedy nonnegative sparse fit of a Hermitian ``target`` matrix.

    Each iteration adds the atom with the smallest one-atom residual among
    those not yet selected (lowest index on ties), refits all selected
    coefficients by NNLS and updates the residual.  The loop ends when the
    coefficient vector changes by at most ``tau_omp`` relative, when
    ``max_support`` atoms are selected, or when no remaining atom has a
    normalized correlation above ``min_correlation``.
    """
    target = np.asarray(target, dtype=complex)
    n = dictionary.side
    if target.shape != (n, n):
        raise ValueError(f"target must be {n}x{n}, got {target.shape}")
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite")
    trace = trace if trace is not None else OmpTrace()
    b = vec(target)
    norms = dictionary.norms_sq()
    energy = float(np.sum(np.abs(target) ** 2))
    trace.residual_norms.append(np.sqrt(energy))

    support: list[int] = []
    cols = np.empty((b.size, 0), dtype=complex)
    gram = np.empty((0, 0))
    rhs = np.empty(0)
    x = np.empty(0)
    residual = target
    cap = min(params.max_support, dictionary.size)
    trace.stop_reason = "max_support"
    while len(support) < cap:
        corr = dictionary.correlate(residual)
        score = np.maximum(corr, 0.0) / np.sqrt(norms)
        eps = float(np.sum(np.abs(residual) ** 2)) - score**2
        eps[support] = np.inf
        score[support] = -np.inf
        best = int(np.argmin(eps))
        if not score[best] > params.min_correlation:
            trace.stop_reason = "no_improving_atom"
            break
        support.append(best)
        trace.selected.append(best)
        a = dictionary.atoms([best])
        cross = np.real(cols.conj().T @ a[:, 0])
        gram = np.block([[gram, cross[:, None]], [cross[None, :], np.real(np.vdot(a[:, 0], a[:, 0]))]])
        rhs = np.append(rhs, np.real(np.vdot(a[:, 0], b)))
        cols = np.hstack([cols, a])
        prev = np.append(x, 0.0)
        x = nnls_gram(gram, rhs)
        residual = target - (cols @ x).reshape(n, n, order="F")
        rnorm = float(np.linalg.norm(residual))
        if rnorm > trace.residual_norms[-1] * (1 + 1e-9) + 1e-12 * np.sqrt(energy):
            raise AssertionError("NN-OMP residual increased")
        trace.residual_norms.append(rnorm)
        if np.sum((x - prev) ** 2) <= params.tau_omp * np.sum(prev**2):
            trace.stop_reason = "converged"
            break
    coeffs = SparseCoefficients(support, x, dictionary.kind) if support else SparseCoefficients.empty(dictionary.kind)
    coeffs = SparseCoefficients(coeffs.support[coeffs.values > 0], coeffs.values[coeffs.values > 0], coeffs.kind)
    return coeffs.pruned(params.eps_supp)


def match_covariance(cov: np.ndarray, noise_var: float, dictionary: AtomDictionary,
                     params: NnOmpParams = NnOmpParams(), trace: OmpTrace | None = None) -> SparseCoefficients:
    """Fit ``cov - noise_var I`` with nonnegative dictionary coefficients."""
    cov = np.asarray(cov)
    if cov.shape != (dictionary.side, dictionary.side):
        raise ValueError(f"covariance is {cov.shape}, dictionary atoms are {dictionary.side}x{dictionary.side}")
    return nn_omp(dictionary, cov - noise_var * np.eye(dictionary.side), params, trace)
