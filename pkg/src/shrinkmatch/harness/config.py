"""Flat ``key = value`` experiment configuration.

Blank lines and text after ``#`` are ignored.  List values are comma
separated.  Unknown keys are rejected so that typos surface early.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

from ..shrinkage import ShrinkageParams
from ..signal_model import ScenarioSpec, SystemDims
from ..sparse_match import NnOmpParams
from ..sensing import SensingParams

EXPERIMENTS = ("throughput", "mse", "aoa")
ESTIMATORS = ("sample", "shrink", "sm")
PRESETS = ("desk", "scaled", "paper")
DEFAULT_TRIALS = {"throughput": 100, "mse": 100, "aoa": 1000}


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _int_or_list(text: str):
    vals = _int_list(text)
    return vals[0] if len(vals) == 1 else vals


_DIM_KEYS = {f.name: f.type for f in fields(SystemDims)}

_PARSERS = {
    "experiment": str,
    "trials": int,
    "seed": int,
    "format": str,
    "threads": int,
    "snr_db": _float_list,
    "K": _int_list,
    "n_r": _int_list,
    "mse_snr_db": float,
    "aoa_K": int,
    "subcarriers_per_pu": _int_or_list,
    "min_aoa_sep_deg": float,
    "constellation": str,
    "estimators": _str_list,
    "tau_min": float,
    "max_shrink_iters": int,
    "tau_omp": float,
    "eps_supp": float,
    "spatial_max_support": int,
    "temporal_max_support": int,
    "detect_threshold": float,
    "estimate_threshold": float,
    "ifft_norm": str,
}
for _k in _DIM_KEYS:
    _PARSERS.setdefault(_k, int)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run needs; see ``docs/config.md`` for the keys."""

    dims: SystemDims = SystemDims()
    experiment: str = "throughput"
    trials: int | None = None
    seed: int = 0
    format: str = "csv"
    threads: int = 1
    snr_db: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0)
    K: tuple[int, ...] = (20, 30)
    n_r: tuple[int, ...] = (4, 8)
    mse_snr_db: float = 0.0
    aoa_K: int = 20
    subcarriers_per_pu: int | tuple[int, ...] = 6
    min_aoa_sep_deg: float = 10.0
    constellation: str = "qpsk"
    estimators: tuple[str, ...] = ESTIMATORS
    tau_min: float = 1e-4
    max_shrink_iters: int = 200
    tau_omp: float = 1e-3
    eps_supp: float = 1e-6
    spatial_max_support: int | None = None
    temporal_max_support: int = 64
    detect_threshold: float = 3.0
    estimate_threshold: float = 0.0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.trials is not None and self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for name in ("snr_db", "K", "n_r", "estimators"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be a nonempty list")
        if any(k < 1 for k in self.K) or self.aoa_K < 1:
            raise ConfigError("sample counts must be >= 1")
        if any(n < 1 for n in self.n_r):
            raise ConfigError("n_r entries must be >= 1")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ConfigError(f"unknown estimators {sorted(bad)}")
        if self.constellation not in ("qpsk", "gaussian"):
            raise ConfigError("constellation must be qpsk or gaussian")
        try:
            self.shrink_params()
            self.sensing_params()
            self.scenario_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def n_trials(self) -> int:
        """``trials``, or the suite default (100, or 1000 for ``aoa``) when unset."""
        return self.trials if self.trials is not None else DEFAULT_TRIALS[self.experiment]

    def scenario_spec(self, snr_db: float = 0.0) -> ScenarioSpec:
        counts = self.subcarriers_per_pu
        return ScenarioSpec(subcarriers_per_pu=counts, snr_db=snr_db, min_aoa_sep_deg=self.min_aoa_sep_deg)

    def shrink_params(self) -> ShrinkageParams:
        return ShrinkageParams(tau_min=self.tau_min, max_iters=self.max_shrink_iters)

    def spatial_cap(self, dims: SystemDims | None = None) -> int:
        dims = dims or self.dims
        cap = self.spatial_max_support or min(dims.B, 2 * dims.I * dims.L)
        return min(cap, dims.N_R)

    def sensing_params(self, dims: SystemDims | None = None, threshold: float | None = None) -> SensingParams:
        dims = dims or self.dims
        cap = self.spatial_cap(dims)
        return SensingParams(
            shrink=self.shrink_params(),
            spatial_omp=NnOmpParams(tau_omp=self.tau_omp, max_support=cap, eps_supp=self.eps_supp),
            temporal_omp=NnOmpParams(tau_omp=self.tau_omp, max_support=self.temporal_max_support,
                                     eps_supp=self.eps_supp),
            spatial_max_support=cap,
            detect_threshold=self.detect_threshold if threshold is None else threshold,
        )

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict = {}
    dims: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values or key in dims:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from exc
        if key in _DIM_KEYS:
            dims[key] = parsed
        else:
            values[key] = parsed
    try:
        return ExperimentConfig(dims=SystemDims(**dims), **values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    """Read a config file, or a shipped preset when ``path`` is a preset name."""
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        text = resources.files("shrinkmatch.configs").joinpath(f"{path}.cfg").read_text()
        return parse_config_text(text, f"{path}.cfg")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config_text(text, str(path))
