"""Shrinkage-regularized fixed-point covariance estimation for ``K < d``.

The estimator iterates a trace-normalized fixed point pulled towards the
identity by a data-driven shrinkage coefficient, then rescales the converged
iterate by an estimate of the covariance trace.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

log = logging.getLogger(__name__)


class ShrinkageError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShrinkageParams:
    tau_min: float = 1e-4
    max_iters: int = 200

    def __post_init__(self):
        if self.tau_min <= 0:
            raise ValueError("tau_min must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class ShrinkageResult:
    """Converged estimate.

    ``cov`` is rescaled to the estimated trace; ``normalized`` is the last
    trace-``d`` iterate.
    """

    cov: np.ndarray
    normalized: np.ndarray
    gamma: float
    iters: int
    trace_estimate: float
    converged: bool


def _as_matrix(Y) -> np.ndarray:
    Y = getattr(Y, "data", Y)
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 2:
        raise ValueError("observations must be a d x K matrix")
    return Y


def trace_estimate(Y) -> float:
    """Mean squared norm of the observation columns."""
    Y = _as_matrix(Y)
    if Y.shape[1] == 0:
        raise ValueError("empty observation set")
    return float(np.mean(np.sum(np.abs(Y) ** 2, axis=0)))


def _column_norms_sq(Y: np.ndarray) -> np.ndarray:
    norms = np.sum(np.abs(Y) ** 2, axis=0)
    if np.any(norms == 0):
        raise ValueError("zero-norm observation column")
    return norms


def shrinkage_coefficient(Y) -> float:
    """Shrinkage weight towards the identity, clamped to ``[0, 1]``.

    Zero when there are at least as many samples as dimensions.
    """
    Y = _as_matrix(Y)
    d, K = Y.shape
    norms = _column_norms_sq(Y)
    if K >= d:
        return 0.0
    Z = Y / np.sqrt(norms)
    # tr(R R^H) with R = (d/K) Z Z^H, via the K x K Gram matrix
    G = Z.conj().T @ Z
    t = (d / K) ** 2 * float(np.sum(np.abs(G) ** 2))
    num = d**2 - t / d
    den = d**2 - K * d - K + (K + (K - 1) / d) * t
    if den == 0:
        return 1.0
    return float(np.clip(num / den, 0.0, 1.0))


def fixed_point_estimate(Y, trace: float, gamma: float, params: ShrinkageParams = ShrinkageParams(),
                         callback: Callable[[np.ndarray], None] | None = None) -> ShrinkageResult:
    """Run the shrinkage fixed point from the identity.

    ``callback`` receives every trace-normalized iterate.  With ``gamma == 0``
    and ``K < d`` the iterates are singular and :class:`ShrinkageError` is
    raised.  Hitting ``max_iters`` returns the last iterate with
    ``converged=False``.
    """
    Y = _as_matrix(Y)
    d, K = Y.shape
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    _column_norms_sq(Y)
    sigma = np.eye(d, dtype=complex)
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        try:
            chol = linalg.cholesky(sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise ShrinkageError(f"iterate {it - 1} is not positive definite") from exc
        Z = linalg.solve_triangular(chol, Y, lower=True)
        quad = np.sum(np.abs(Z) ** 2, axis=0)
        W = Y / np.sqrt(quad)
        tilde = (1.0 - gamma) * (d / K) * (W @ W.conj().T) + gamma * np.eye(d)
        tilde = 0.5 * (tilde + tilde.conj().T)
        nxt = d * tilde / np.real(np.trace(tilde))
        if callback is not None:
            callback(nxt)
        change = np.sum(np.abs(nxt - sigma) ** 2)
        ref = np.sum(np.abs(sigma) ** 2)
        sigma = nxt
        if change <= params.tau_min * ref:
            converged = True
            break
    if not converged:
        log.warning("shrinkage fixed point stopped after %d iterations without converging", it)
    return ShrinkageResult(
        cov=(trace / d) * sigma,
        normalized=sigma,
        gamma=gamma,
        iters=it,
        trace_estimate=trace,
        converged=converged,
    )


def shrinkage_estimate(Y, params: ShrinkageParams = ShrinkageParams()) -> ShrinkageResult:
    """Trace estimate, shrinkage coefficient and fixed point in one call."""
    return fixed_point_estimate(Y, trace_estimate(Y), shrinkage_coefficient(Y), params)
