"""Detection metrics, covariance error and baseline estimators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .signal_model import beta_to_degrees, steering

UNMATCHED_PENALTY = 0.5
UNMATCHED_PENALTY_DEG = 90.0


@dataclass
class TrialOutcome:
    """What one Monte-Carlo run detected against what was there."""

    truth_subcarriers: set[int]
    detected_subcarriers: set[int]
    truth_aoas: list[float] = field(default_factory=list)
    detected_aoas: list[float] = field(default_factory=list)
    nmse: dict[str, float] = field(default_factory=dict)
    scenario_id: str = ""
    seed: int | None = None


@dataclass
class MetricsReport:
    p_fa: np.ndarray
    p_md: np.ndarray
    rho_t: float
    rho_i: float
    trials: int
    nmse: dict[str, float] = field(default_factory=dict)
    aoa_rmse: float | None = None


def _check_set(s: Iterable[int], N: int) -> set[int]:
    s = {int(c) for c in s}
    if any(c < 0 or c >= N for c in s):
        raise ValueError(f"subcarrier index outside [0, {N})")
    return s


def subcarrier_confusion(detected, truth, N: int) -> tuple[np.ndarray, np.ndarray]:
    """False-alarm and missed-detection indicators per subcarrier."""
    det = np.zeros(N, dtype=bool)
    tru = np.zeros(N, dtype=bool)
    det[list(_check_set(detected, N))] = True
    tru[list(_check_set(truth, N))] = True
    return (det & ~tru).astype(int), (~det & tru).astype(int)


def aggregate_metrics(trials: Sequence[TrialOutcome], N: int) -> MetricsReport:
    """Per-subcarrier false-alarm/missed-detection rates and the two aggregates.

    ``rho_t = 1 - mean_c P_FA(c)`` and ``rho_i = sum_c P_MD(c)``.
    """
    if not trials:
        raise ValueError("at least one trial is required")
    fa = np.zeros(N)
    md = np.zeros(N)
    for t in trials:
        f, m = subcarrier_confusion(t.detected_subcarriers, t.truth_subcarriers, N)
        fa += f
        md += m
    n = len(trials)
    p_fa, p_md = fa / n, md / n
    nmse = {}
    keys = sorted({k for t in trials for k in t.nmse})
    for k in keys:
        vals = [t.nmse[k] for t in trials if k in t.nmse]
        nmse[k] = float(np.mean(vals))
    return MetricsReport(p_fa, p_md, float(1.0 - p_fa.mean()), float(p_md.sum()), n, nmse)


def normalized_mse(sigma_true: np.ndarray, sigma_hat: np.ndarray) -> float:
    """``||S - S_hat||_F^2 / ||S||_F^2``."""
    sigma_true = np.asarray(sigma_true)
    sigma_hat = np.asarray(sigma_hat)
    if sigma_true.shape != sigma_hat.shape:
        raise ValueError("shape mismatch")
    den = float(np.sum(np.abs(sigma_true) ** 2))
    if den == 0:
        raise ZeroDivisionError("true covariance is zero")
    return float(np.sum(np.abs(sigma_true - sigma_hat) ** 2)) / den


def sample_covariance(Y) -> np.ndarray:
    """``(1/K) sum_r y_r y_r^H``."""
    Y = np.asarray(getattr(Y, "data", Y))
    if Y.ndim == 1:
        Y = Y[:, None]
    S = Y @ Y.conj().T / Y.shape[1]
    return 0.5 * (S + S.conj().T)


def music_spectrum(cov: np.ndarray, n_sources: int, B: int) -> np.ndarray:
    """MUSIC pseudo-spectrum ``1 / ||E_n^H e_r(b/B)||^2`` on the ``B``-point grid."""
    n_r = cov.shape[0]
    if not 0 <= n_sources < n_r:
        raise ValueError(f"n_sources must lie in [0, N_R={n_r})")
    _, vecs = np.linalg.eigh(0.5 * (cov + cov.conj().T))
    En = vecs[:, : n_r - n_sources]
    E = steering(np.arange(B) / B, n_r)
    proj = np.sum(np.abs(En.conj().T @ E) ** 2, axis=0)
    return 1.0 / np.maximum(proj, np.finfo(float).tiny)


def music_aoa(cov: np.ndarray, n_sources: int, B: int) -> list[int]:
    """Grid indices of the ``n_sources`` strongest MUSIC peaks.

    Peaks are local maxima on the circular grid.  When fewer peaks exist
    than sources, the remaining slots take the largest remaining grid values.
    """
    spec = music_spectrum(cov, n_sources, B)
    if n_sources == 0:
        return []
    left, right = np.roll(spec, 1), np.roll(spec, -1)
    peaks = np.flatnonzero((spec >= left) & (spec > right))
    order = peaks[np.argsort(-spec[peaks], kind="stable")]
    picked = list(order[:n_sources])
    if len(picked) < n_sources:
        rest = [b for b in np.argsort(-spec, kind="stable") if b not in set(picked)]
        picked += rest[: n_sources - len(picked)]
    return sorted(int(b) for b in picked)


def circular_distance(a, b) -> np.ndarray:
    """Distance on the unit circle of normalized spatial frequencies."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 1.0
    return np.minimum(d, 1.0 - d)


def _assign(detected: np.ndarray, truth: np.ndarray):
    cost = circular_distance(truth[:, None], detected[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    return rows, cols, cost


def aoa_squared_errors(detected, truth) -> np.ndarray:
    """Squared errors of each true angle after optimal one-to-one assignment.

    Angles are normalized spatial frequencies in ``[0, 1)``.  True angles
    left without a partner score the half-period penalty.  Extra detections
    are not scored.
    """
    detected = np.asarray(list(detected), dtype=float)
    truth = np.asarray(list(truth), dtype=float)
    err = np.full(truth.size, UNMATCHED_PENALTY**2)
    if truth.size and detected.size:
        rows, cols, cost = _assign(detected, truth)
        err[rows] = cost[rows, cols]
    return err


def aoa_squared_errors_deg(detected, truth) -> np.ndarray:
    """Same assignment as :func:`aoa_squared_errors`, scored in physical ULA degrees.

    Unmatched true angles score 90 degrees.
    """
    detected = np.asarray(list(detected), dtype=float)
    truth = np.asarray(list(truth), dtype=float)
    err = np.full(truth.size, UNMATCHED_PENALTY_DEG**2)
    if truth.size and detected.size:
        rows, cols, _ = _assign(detected, truth)
        err[rows] = (beta_to_degrees(truth[rows]) - beta_to_degrees(detected[cols])) ** 2
    return err


def aoa_rmse(detected, truth) -> float:
    """Root mean squared circular AoA error in normalized-frequency units."""
    err = aoa_squared_errors(detected, truth)
    return float(np.sqrt(err.mean())) if err.size else 0.0
