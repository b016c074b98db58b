"""Monte-Carlo experiment suites with deterministic seeding.

Every trial derives its own seed from ``(seed, trial_index)``, draws one
scenario and reuses the same signal and unit-variance noise across the
whole SNR/K grid, so curves are compared on common random numbers.
Results are reduced in trial-index order whatever the worker count.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from ..dictionary import SpatialDictionary, TemporalDictionary, ground_truth_temporal, model_covariance
from ..metrics import (TrialOutcome, aggregate_metrics, aoa_squared_errors, aoa_squared_errors_deg,
                       music_aoa, normalized_mse, sample_covariance)
from ..sensing import detect_aoas, shrink_and_match, ssm
from ..signal_model import (Scenario, SystemDims, collect_spatial_obs, collect_temporal_obs, draw_scenario,
                            full_stream_length, spatial_stream_length, synthesize_signal)
from .config import ExperimentConfig

log = logging.getLogger(__name__)

HEADERS = {
    "throughput": ("snr_db", "K", "rho_T", "rho_I", "trials"),
    "mse": ("K", "estimator", "mean_nmse", "std_nmse"),
    "aoa": ("snr_db", "n_r", "method", "rmse_beta", "rmse_deg"),
}

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def trial_seed(master_seed: int, trial_index: int) -> int:
    """64-bit seed of one trial; distinct indices give distinct seeds."""
    return splitmix64(splitmix64(master_seed & _MASK64) ^ (trial_index & _MASK64))


class TrialError(RuntimeError):
    def __init__(self, index: int, message: str):
        super().__init__(f"trial {index}: {message}")
        self.index = index


@dataclass
class TrialResult:
    """Outcomes of one trial keyed by grid point."""

    index: int
    seed: int
    outcomes: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class ExperimentResult:
    kind: str
    header: tuple[str, ...]
    rows: list[tuple]
    errors: list[str]
    trials: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"experiment": self.kind, "trials": self.trials,
                           "rows": [dict(zip(self.header, r)) for r in self.rows],
                           "errors": self.errors}, indent=2, sort_keys=True) + "\n"

    def render(self, fmt: str) -> str:
        return self.to_json() if fmt == "json" else self.to_csv()


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


@lru_cache(maxsize=8)
def _spatial_dict(dims: SystemDims) -> SpatialDictionary:
    return SpatialDictionary(dims)


@lru_cache(maxsize=8)
def _temporal_dict(dims: SystemDims) -> TemporalDictionary:
    return TemporalDictionary(dims)


def _signal(config, scenario: Scenario, n: int, seed: int):
    return synthesize_signal(scenario, n, [seed, 1], config.constellation)


def _snr_to_var(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def _throughput_trial(config: ExperimentConfig, seed: int) -> dict:
    dims = config.dims
    scenario = draw_scenario(dims, [seed, 0], config.scenario_spec())
    k_max = max(config.K)
    signal, noise = _signal(config, scenario, full_stream_length(dims, k_max), seed)
    params = config.sensing_params()
    out = {}
    for snr in config.snr_db:
        var = _snr_to_var(snr)
        stream = signal + np.sqrt(var) * noise
        truth_aoas = [p.aoa / dims.B for p in scenario.paths]
        for K in config.K:
            rep = ssm(stream[:, : full_stream_length(dims, K)], dims, var, K, params,
                      _spatial_dict(dims), _temporal_dict(dims))
            out[(snr, K)] = TrialOutcome(scenario.occupied(), rep.subcarriers, truth_aoas,
                                         [b / dims.B for b in rep.aoas], seed=seed)
    return out


def _mse_trial(config: ExperimentConfig, seed: int) -> dict:
    dims = config.dims
    var = _snr_to_var(config.mse_snr_db)
    scenario = draw_scenario(dims, [seed, 0], config.scenario_spec()).with_noise(var)
    k_max = max(config.K)
    signal, noise = _signal(config, scenario, full_stream_length(dims, k_max), seed)
    blocks = collect_temporal_obs(signal + np.sqrt(var) * noise, dims, k_max)
    td = _temporal_dict(dims)
    truth = model_covariance(ground_truth_temporal(scenario), var, td)
    shrink = config.shrink_params()
    omp = config.sensing_params(threshold=config.estimate_threshold).temporal_omp
    out = {}
    for K in config.K:
        Y = blocks[:K, 0, :].T
        nmse = {}
        if "sample" in config.estimators:
            nmse["sample"] = normalized_mse(truth, sample_covariance(Y))
        if "shrink" in config.estimators or "sm" in config.estimators:
            est, coeffs = shrink_and_match(Y, td, var, shrink, omp, config.estimate_threshold)
            if "shrink" in config.estimators:
                nmse["shrink"] = normalized_mse(truth, est.cov)
            if "sm" in config.estimators:
                nmse["sm"] = normalized_mse(truth, model_covariance(coeffs, var, td))
        out[K] = TrialOutcome(scenario.occupied(), set(), nmse=nmse, seed=seed)
    return out


def _aoa_trial(config: ExperimentConfig, seed: int) -> dict:
    out = {}
    K = config.aoa_K
    for n_r in config.n_r:
        dims = replace(config.dims, N_R=n_r)
        scenario = draw_scenario(dims, [seed, 0], config.scenario_spec())
        signal, noise = _signal(config, scenario, spatial_stream_length(dims, K), seed)
        truth = [p.aoa / dims.B for p in scenario.paths]
        n_src = len(set(p.aoa for p in scenario.paths))
        params = config.sensing_params(dims, threshold=config.estimate_threshold)
        for snr in config.snr_db:
            var = _snr_to_var(snr)
            Y = collect_spatial_obs(signal + np.sqrt(var) * noise, dims, K)
            aoas, _, _ = detect_aoas(Y, _spatial_dict(dims), var, params)
            mu = music_aoa(sample_covariance(Y), min(n_src, n_r - 1), dims.B)
            out[(snr, n_r)] = {}
            for method, found in (("sm", aoas), ("music", mu)):
                found = np.asarray(found) / dims.B
                out[(snr, n_r)][method] = (float(aoa_squared_errors(found, truth).mean()),
                                           float(aoa_squared_errors_deg(found, truth).mean()))
    return out


_TRIALS = {"throughput": _throughput_trial, "mse": _mse_trial, "aoa": _aoa_trial}


def run_trial(config: ExperimentConfig, trial_index: int) -> dict:
    """Outcomes of one trial of ``config.experiment``, keyed by grid point.

    Raises :class:`TrialError` carrying the trial index on failure.
    """
    seed = trial_seed(config.seed, trial_index)
    try:
        return _TRIALS[config.experiment](config, seed)
    except Exception as exc:  # noqa: BLE001 - reported per trial
        raise TrialError(trial_index, f"{type(exc).__name__}: {exc}") from exc


def _safe_trial(args) -> TrialResult:
    config, index = args
    seed = trial_seed(config.seed, index)
    try:
        return TrialResult(index, seed, run_trial(config, index))
    except TrialError as exc:
        return TrialResult(index, seed, error=str(exc))


def _collect(config: ExperimentConfig) -> list[TrialResult]:
    jobs = [(config, i) for i in range(config.n_trials)]
    if config.threads == 1:
        results = [_safe_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_safe_trial, jobs, chunksize=max(1, len(jobs) // (4 * config.threads))))
    return sorted(results, key=lambda r: r.index)


def _reduce_throughput(config, ok) -> list[tuple]:
    rows = []
    for snr in config.snr_db:
        for K in config.K:
            rep = aggregate_metrics([r.outcomes[(snr, K)] for r in ok], config.dims.N)
            rows.append((float(snr), K, rep.rho_t, rep.rho_i, rep.trials))
    return rows


def _reduce_mse(config, ok) -> list[tuple]:
    rows = []
    for K in config.K:
        for est in (e for e in ("sample", "shrink", "sm") if e in config.estimators):
            vals = np.array([r.outcomes[K].nmse[est] for r in ok])
            rows.append((K, est, float(vals.mean()), float(vals.std())))
    return rows


def _reduce_aoa(config, ok) -> list[tuple]:
    rows = []
    for snr in config.snr_db:
        for n_r in config.n_r:
            for method in ("sm", "music"):
                errs = np.array([r.outcomes[(snr, n_r)][method] for r in ok])
                rmse = np.sqrt(errs.mean(axis=0))
                rows.append((float(snr), n_r, method, float(rmse[0]), float(rmse[1])))
    return rows


_REDUCE = {"throughput": _reduce_throughput, "mse": _reduce_mse, "aoa": _reduce_aoa}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run all trials and reduce them into the suite's CSV rows.

    Failed trials are reported in ``errors`` and left out of the averages.
    """
    results = _collect(config)
    ok = [r for r in results if r.error is None]
    errors = [r.error for r in results if r.error is not None]
    for e in errors:
        log.warning("%s", e)
    if not ok:
        raise RuntimeError(f"all {config.n_trials} trials failed; first error: {errors[0]}")
    return ExperimentResult(config.experiment, HEADERS[config.experiment],
                            _REDUCE[config.experiment](config, ok), errors, len(ok))
