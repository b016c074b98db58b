"""Shrink-and-match covariance fitting and the separable spatial/temporal detector."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dictionary import (AtomDictionary, SparseCoefficients, SpatialDictionary,
                         TemporalDictionary, model_covariance)
from .shrinkage import ShrinkageParams, ShrinkageResult, shrinkage_estimate
from .signal_model import (ObservationSet, Scenario, SystemDims, collect_spatial_obs,
                           collect_temporal_obs, full_stream_length, steering)
from .sparse_match import NnOmpParams, OmpTrace, match_covariance

log = logging.getLogger(__name__)


class SensingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SensingParams:
    """Knobs shared by both detection stages.

    ``detect_threshold`` scales the noise floor below which no atom is
    accepted: an atom must reach a normalized correlation of
    ``detect_threshold * (trace / d) / sqrt(K)`` with the residual.  Zero
    disables the floor.  ``spatial_max_support=None`` caps the number of
    detected directions at ``N_R``.
    """

    shrink: ShrinkageParams = ShrinkageParams()
    spatial_omp: NnOmpParams = NnOmpParams(max_support=180)
    temporal_omp: NnOmpParams = NnOmpParams(max_support=64)
    spatial_max_support: int | None = None
    detect_threshold: float = 3.0
    threads: int = 1

    def __post_init__(self):
        if self.detect_threshold < 0:
            raise ValueError("detect_threshold must be nonnegative")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.spatial_max_support is not None and self.spatial_max_support < 1:
            raise ValueError("spatial_max_support must be >= 1")


@dataclass
class StageDiagnostics:
    iterations: int
    residual_norms: list[float]
    stop_reason: str
    gamma: float
    shrink_iters: int


@dataclass
class SensingReport:
    aoas: list[int]
    subcarriers_per_direction: list[set[int]]
    subcarriers: set[int]
    spatial_coeffs: SparseCoefficients
    temporal_coeffs: list[SparseCoefficients]
    diagnostics: dict[str, StageDiagnostics | list[StageDiagnostics]] = field(default_factory=dict)

    @classmethod
    def idle(cls, spatial_coeffs: SparseCoefficients, diag=None) -> "SensingReport":
        return cls([], [], set(), spatial_coeffs, [], {"spatial": diag} if diag else {})

    def to_rows(self) -> list[tuple[str, str]]:
        rows = [("aoas", " ".join(map(str, self.aoas))),
                ("subcarriers", " ".join(map(str, sorted(self.subcarriers))))]
        for b, cs in zip(self.aoas, self.subcarriers_per_direction):
            rows.append((f"subcarriers[b={b}]", " ".join(map(str, sorted(cs)))))
        return rows

    def to_dict(self) -> dict:
        return {
            "aoas": list(self.aoas),
            "subcarriers": sorted(self.subcarriers),
            "subcarriers_per_direction": [sorted(s) for s in self.subcarriers_per_direction],
            "spatial": {"support": self.spatial_coeffs.support.tolist(),
                        "values": self.spatial_coeffs.values.tolist()},
            "temporal": [{"support": c.support.tolist(), "values": c.values.tolist()}
                         for c in self.temporal_coeffs],
        }


def noise_floor(trace: float, d: int, K: int, threshold: float) -> float:
    return threshold * (trace / d) / np.sqrt(K)


def shrink_and_match(Y, dictionary: AtomDictionary, noise_var: float,
                     shrink_params: ShrinkageParams = ShrinkageParams(),
                     omp_params: NnOmpParams = NnOmpParams(),
                     detect_threshold: float = 0.0,
                     trace: OmpTrace | None = None) -> tuple[ShrinkageResult, SparseCoefficients]:
    """Shrinkage estimate of the covariance followed by a nonnegative dictionary fit.

    The denoised covariance is ``model_covariance(coeffs, noise_var, dictionary)``.
    """
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    data = getattr(Y, "data", Y)
    d, K = np.shape(data)
    if d != dictionary.side:
        raise ValueError(f"observations have d={d}, dictionary atoms are {dictionary.side}x{dictionary.side}")
    est = shrinkage_estimate(data, shrink_params)
    if detect_threshold > 0:
        floor = noise_floor(est.trace_estimate, d, K, detect_threshold)
        omp_params = replace(omp_params, min_correlation=max(omp_params.min_correlation, floor))
    coeffs = match_covariance(est.cov, noise_var, dictionary, omp_params, trace)
    return est, coeffs


def _diag(trace: OmpTrace, est: ShrinkageResult) -> StageDiagnostics:
    return StageDiagnostics(len(trace.selected), list(trace.residual_norms), trace.stop_reason,
                            est.gamma, est.iters)


def detect_aoas(Y_S, spatial_dict: SpatialDictionary, noise_var: float,
                params: SensingParams = SensingParams()) -> tuple[list[int], SparseCoefficients, StageDiagnostics]:
    """Grid indices of the detected directions of arrival."""
    if isinstance(Y_S, ObservationSet) and Y_S.kind != "spatial":
        raise ValueError(f"expected spatial observations, got {Y_S.kind}")
    cap = params.spatial_max_support or spatial_dict.dims.N_R
    omp = replace(params.spatial_omp, max_support=min(cap, params.spatial_omp.max_support, spatial_dict.size))
    trace = OmpTrace()
    est, coeffs = shrink_and_match(Y_S, spatial_dict, noise_var, params.shrink, omp,
                                   params.detect_threshold, trace)
    return [int(b) for b in coeffs.support], coeffs, _diag(trace, est)


def spatial_filter(aoas, dims: SystemDims) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Steering matrix of the detected directions, its pseudo-inverse and row energies.

    Returns ``(Phi, Phi_pinv, row_norms_sq)`` where ``row_norms_sq[l]`` is
    ``||phi_l||^2`` for row ``l`` of the pseudo-inverse.
    """
    aoas = list(aoas)
    if not aoas:
        raise ValueError("no directions to filter")
    if len(aoas) > dims.N_R:
        raise SensingError(f"{len(aoas)} directions exceed N_R={dims.N_R}; the spatial filter is underdetermined")
    Phi = np.column_stack([steering(b / dims.B, dims.N_R) for b in aoas])
    pinv = np.linalg.pinv(Phi)
    return Phi, pinv, np.sum(np.abs(pinv) ** 2, axis=1)


def subcarriers_of(coeffs: SparseCoefficients, dims: SystemDims) -> set[int]:
    return {int(i) % dims.N for i in coeffs.support}


def detect_subcarriers(blocks: np.ndarray, pinv: np.ndarray, temporal_dict: TemporalDictionary,
                       noise_var: float, params: SensingParams = SensingParams(),
                       row_norms_sq: np.ndarray | None = None):
    """Occupied subcarriers seen through each row of the spatial filter.

    ``blocks`` is the ``(K, N_R, M)`` stack from :func:`collect_temporal_obs`.
    Returns ``(per_direction_sets, union, coeffs, diagnostics)``.
    """
    blocks = np.asarray(blocks)
    if blocks.ndim != 3:
        raise ValueError("blocks must be a (K, N_R, M) array")
    if row_norms_sq is None:
        row_norms_sq = np.sum(np.abs(pinv) ** 2, axis=1)
    filtered = np.einsum("ln,knm->lmk", pinv, blocks)

    def one(l):
        trace = OmpTrace()
        est, coeffs = shrink_and_match(filtered[l], temporal_dict, noise_var * row_norms_sq[l],
                                       params.shrink, params.temporal_omp, params.detect_threshold, trace)
        return coeffs, _diag(trace, est)

    n = pinv.shape[0]
    if params.threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=min(params.threads, n)) as pool:
            results = list(pool.map(one, range(n)))
    else:
        results = [one(l) for l in range(n)]
    coeffs = [r[0] for r in results]
    per_dir = [subcarriers_of(c, temporal_dict.dims) for c in coeffs]
    union = set().union(*per_dir) if per_dir else set()
    return per_dir, union, coeffs, [r[1] for r in results]


def ssm(stream: np.ndarray, dims: SystemDims, noise_var: float, K: int,
        params: SensingParams = SensingParams(),
        spatial_dict: SpatialDictionary | None = None,
        temporal_dict: TemporalDictionary | None = None) -> SensingReport:
    """Separable detector on a received ``N_R x n`` stream.

    Uses ``K`` spatial snapshots and ``K`` temporal blocks drawn from the
    same stream.  No detected direction yields an idle report.
    """
    stream = np.asarray(stream)
    if stream.shape[1] < full_stream_length(dims, K):
        raise ValueError(f"stream too short for K={K}")
    spatial_dict = spatial_dict or SpatialDictionary(dims)
    temporal_dict = temporal_dict or TemporalDictionary(dims)
    Y_S = collect_spatial_obs(stream, dims, K)
    aoas, s_coeffs, s_diag = detect_aoas(Y_S, spatial_dict, noise_var, params)
    if not aoas:
        return SensingReport.idle(s_coeffs, s_diag)
    _, pinv, rows = spatial_filter(aoas, dims)
    blocks = collect_temporal_obs(stream, dims, K)
    per_dir, union, t_coeffs, t_diag = detect_subcarriers(blocks, pinv, temporal_dict, noise_var, params, rows)
    return SensingReport(aoas, per_dir, union, s_coeffs, t_coeffs, {"spatial": s_diag, "temporal": t_diag})


def ssm_scenario(scenario: Scenario, K: int, seed, params: SensingParams = SensingParams(),
                 **dicts) -> SensingReport:
    """Synthesize a stream for ``scenario`` and run :func:`ssm` on it."""
    from .signal_model import synthesize_rx

    stream = synthesize_rx(scenario, full_stream_length(scenario.dims, K), seed)
    return ssm(stream, scenario.dims, scenario.noise_var, K, params, **dicts)


def ssm_from_covariances(spatial_cov: np.ndarray, temporal_cov_fn, dims: SystemDims, noise_var: float,
                         params: SensingParams = SensingParams(),
                         spatial_dict: SpatialDictionary | None = None,
                         temporal_dict: TemporalDictionary | None = None) -> SensingReport:
    """Detection stages fed with known covariances instead of estimates.

    ``temporal_cov_fn(phi_row)`` returns the ``M x M`` covariance seen
    through one row of the spatial filter.
    """
    spatial_dict = spatial_dict or SpatialDictionary(dims)
    temporal_dict = temporal_dict or TemporalDictionary(dims)
    cap = params.spatial_max_support or dims.N_R
    s_coeffs = match_covariance(spatial_cov, noise_var, spatial_dict,
                                replace(params.spatial_omp, max_support=min(cap, params.spatial_omp.max_support)))
    aoas = [int(b) for b in s_coeffs.support]
    if not aoas:
        return SensingReport.idle(s_coeffs)
    _, pinv, rows = spatial_filter(aoas, dims)
    t_coeffs = [match_covariance(temporal_cov_fn(pinv[l]), noise_var * rows[l], temporal_dict, params.temporal_omp)
                for l in range(len(aoas))]
    per_dir = [subcarriers_of(c, dims) for c in t_coeffs]
    return SensingReport(aoas, per_dir, set().union(*per_dir), s_coeffs, t_coeffs)


def denoised_covariance(coeffs: SparseCoefficients, noise_var: float, dictionary: AtomDictionary) -> np.ndarray:
    return model_covariance(coeffs, noise_var, dictionary)
