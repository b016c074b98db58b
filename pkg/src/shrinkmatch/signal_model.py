"""Asynchronous MIMO-OFDM primary-user signals at a secondary-user array.

Each primary user (PU) transmits cyclic-prefixed OFDM symbols on its own
subcarrier set, through ``L`` on-grid multipath components with a discrete
delay, Doppler index, angle of arrival and angle of departure.  The receiver
sees the superposition plus white Gaussian noise, with an unknown symbol
misalignment per PU.

Conventions used throughout the package:

* angles live on the normalized spatial-frequency grid ``beta = b / B``;
* matrices are vectorized column-major, and stacked observations are ordered
  time-major with the antenna index running fastest (``time (x) antenna``).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

OBS_MAGIC = b"SSMOBS1\x00"
OBS_KINDS = ("full", "spatial", "temporal")


class ScenarioError(ValueError):
    """Raised when a scenario cannot be drawn or is inconsistent."""


@dataclass(frozen=True)
class SystemDims:
    """System dimensions.

    ``ifft_norm`` selects the scaling of the prefixed IFFT matrix:
    ``"unitary"`` uses entries ``exp(j2pi nk/N)/sqrt(N)``, ``"unit"`` uses
    unit-modulus entries so that every transmitted time sample has unit power.
    """

    N: int = 64
    L_p: int = 8
    N_T: int = 2
    N_R: int = 12
    B: int = 180
    A: int = 180
    P: int = 3
    p_l: int = -1
    P_I: int = 4
    I: int = 4
    L: int = 2
    ifft_norm: str = "unitary"

    def __post_init__(self):
        for name in ("N", "L_p", "N_T", "N_R", "B", "A", "P", "P_I", "I", "L"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.L_p > self.N:
            raise ValueError("cyclic prefix longer than the symbol")
        if self.ifft_norm not in ("unitary", "unit"):
            raise ValueError(f"unknown ifft_norm {self.ifft_norm!r}")

    @property
    def M(self) -> int:
        return self.N + self.L_p

    @property
    def dopplers(self) -> np.ndarray:
        return np.arange(self.p_l, self.p_l + self.P)


@dataclass(frozen=True)
class PuPath:
    pu: int
    path: int
    gain_var: float
    delay: int
    doppler: int
    aoa: int
    aod: int


@dataclass(frozen=True)
class Scenario:
    """Ground truth for one sensing experiment."""

    dims: SystemDims
    offsets: tuple[int, ...]
    paths: tuple[PuPath, ...]
    subcarriers: tuple[tuple[int, ...], ...]
    noise_var: float

    def __post_init__(self):
        d = self.dims
        if len(self.offsets) != len(self.subcarriers):
            raise ScenarioError("one offset and one subcarrier set per PU")
        for t in self.offsets:
            if not 0 <= t < d.M:
                raise ScenarioError(f"misalignment {t} outside [0, {d.M})")
        for cs in self.subcarriers:
            if any(not 0 <= c < d.N for c in cs):
                raise ScenarioError("subcarrier index out of range")
        for p in self.paths:
            if not 0 <= p.pu < len(self.offsets):
                raise ScenarioError(f"path refers to unknown PU {p.pu}")
            if p.gain_var < 0:
                raise ScenarioError("negative path gain variance")
            if not 0 <= p.delay < d.L_p:
                raise ScenarioError(f"delay {p.delay} outside [0, {d.L_p})")
            if not d.p_l <= p.doppler < d.p_l + d.P:
                raise ScenarioError(f"Doppler {p.doppler} outside the grid")
            if not 0 <= p.aoa < d.B or not 0 <= p.aod < d.A:
                raise ScenarioError("angle index outside the grid")
        if self.noise_var < 0:
            raise ScenarioError("negative noise variance")

    @property
    def num_pus(self) -> int:
        return len(self.offsets)

    def displacement(self, path: PuPath) -> int:
        """Symbol displacement ``(t_i + q) mod M`` seen in each window."""
        return (self.offsets[path.pu] + path.delay) % self.dims.M

    def occupied(self) -> set[int]:
        return set().union(*map(set, self.subcarriers)) if self.subcarriers else set()

    def with_noise(self, noise_var: float) -> "Scenario":
        return replace(self, noise_var=float(noise_var))

    def to_dict(self) -> dict:
        return {
            "dims": self.dims.__dict__.copy(),
            "offsets": list(self.offsets),
            "paths": [p.__dict__.copy() for p in self.paths],
            "subcarriers": [list(c) for c in self.subcarriers],
            "noise_var": self.noise_var,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        return cls(
            dims=SystemDims(**data["dims"]),
            offsets=tuple(data["offsets"]),
            paths=tuple(PuPath(**p) for p in data["paths"]),
            subcarriers=tuple(tuple(c) for c in data["subcarriers"]),
            noise_var=float(data["noise_var"]),
        )


@dataclass(frozen=True)
class ScenarioSpec:
    """Randomization settings for :func:`draw_scenario`.

    ``subcarriers_per_pu`` is either one count shared by all PUs or one count
    per PU.
    """

    subcarriers_per_pu: int | tuple[int, ...] = 4
    snr_db: float = 10.0
    min_aoa_sep_deg: float = 10.0
    max_tries: int = 1000


@dataclass
class ObservationSet:
    """A ``d x K`` matrix of observation vectors of one flavor."""

    data: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in OBS_KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 2:
            raise ValueError("observation data must be 2-D")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("observation data must be finite")

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def K(self) -> int:
        return self.data.shape[1]

    def check_dims(self, dims: SystemDims) -> None:
        expected = {"full": dims.M * dims.N_R, "spatial": dims.N_R, "temporal": dims.M}[self.kind]
        if self.d != expected:
            raise ValueError(f"{self.kind} observations need d={expected}, got {self.d}")


def steering(beta, n: int) -> np.ndarray:
    """Uniform linear array response ``[1, e^{j2pi beta}, ...]``.

    A scalar ``beta`` gives a length-``n`` vector, an array of betas gives one
    column per entry.
    """
    beta = np.asarray(beta, dtype=float)
    k = np.arange(n)
    if beta.ndim == 0:
        return np.exp(2j * np.pi * beta * k)
    return np.exp(2j * np.pi * np.multiply.outer(k, beta))


def build_prefixed_ifft(dims: SystemDims) -> np.ndarray:
    """``N x M`` IFFT matrix with its last ``L_p`` columns prepended."""
    N = dims.N
    n = np.arange(N)
    W = np.exp(2j * np.pi * np.outer(n, n) / N)
    if dims.ifft_norm == "unitary":
        W /= np.sqrt(N)
    return np.hstack([W[:, N - dims.L_p:], W])


def doppler_phase(p: int, m, dims: SystemDims) -> np.ndarray:
    return np.exp(2j * np.pi * p * np.asarray(m) / (dims.P_I * dims.N))


def _subcarrier_counts(spec: ScenarioSpec, n_pus: int) -> tuple[int, ...]:
    counts = spec.subcarriers_per_pu
    if isinstance(counts, (int, np.integer)):
        return (int(counts),) * n_pus
    counts = tuple(int(c) for c in counts)
    if len(counts) != n_pus:
        raise ScenarioError(f"need {n_pus} subcarrier counts, got {len(counts)}")
    return counts


def beta_to_degrees(beta) -> np.ndarray:
    """Physical angle of a half-wavelength ULA, ``beta = (1 + cos theta)/2 mod 1``."""
    beta = np.mod(np.asarray(beta, dtype=float), 1.0)
    return np.degrees(np.arccos(np.clip(2.0 * beta - 1.0, -1.0, 1.0)))


def angular_gap_degrees(beta_a, beta_b) -> np.ndarray:
    """Circular separation of two normalized spatial frequencies, scaled to 180 degrees per period."""
    d = np.abs(np.asarray(beta_a, dtype=float) - np.asarray(beta_b, dtype=float)) % 1.0
    return 180.0 * np.minimum(d, 1.0 - d)


def draw_scenario(dims: SystemDims, rng_seed, spec: ScenarioSpec = ScenarioSpec()) -> Scenario:
    """Draw a random scenario following the simulation protocol.

    Misalignments, delays and Dopplers are uniform on their grids, every path
    has unit gain variance, each PU occupies a uniformly random subset of
    subcarriers and the AoA grid indices are rejection-sampled so that all
    pairs are more than ``spec.min_aoa_sep_deg`` apart on the circular angle grid.
    """
    rng = np.random.default_rng(rng_seed)
    n_paths = dims.I * dims.L
    counts = _subcarrier_counts(spec, dims.I)
    if any(not 0 <= c <= dims.N for c in counts):
        raise ScenarioError("subcarrier count outside [0, N]")

    offsets = tuple(int(t) for t in rng.integers(0, dims.M, size=dims.I))
    delays = rng.integers(0, dims.L_p, size=n_paths)
    dopplers = rng.integers(dims.p_l, dims.p_l + dims.P, size=n_paths)
    aods = rng.integers(0, dims.A, size=n_paths)

    aoas = None
    for _ in range(spec.max_tries):
        cand = rng.choice(dims.B, size=n_paths, replace=False) if n_paths <= dims.B else None
        if cand is None:
            break
        beta = cand / dims.B
        gaps = angular_gap_degrees(beta[:, None], beta[None, :])
        if n_paths == 1 or np.min(gaps[np.triu_indices(n_paths, 1)]) > spec.min_aoa_sep_deg:
            aoas = cand
            break
    if aoas is None:
        raise ScenarioError(
            f"could not place {n_paths} AoAs {spec.min_aoa_sep_deg} deg apart on a {dims.B}-point grid"
        )

    subcarriers = tuple(
        tuple(sorted(int(c) for c in rng.choice(dims.N, size=n, replace=False))) for n in counts
    )
    paths = tuple(
        PuPath(
            pu=i,
            path=ell,
            gain_var=1.0,
            delay=int(delays[i * dims.L + ell]),
            doppler=int(dopplers[i * dims.L + ell]),
            aoa=int(aoas[i * dims.L + ell]),
            aod=int(aods[i * dims.L + ell]),
        )
        for i in range(dims.I)
        for ell in range(dims.L)
    )
    return Scenario(dims, offsets, paths, subcarriers, noise_var=10.0 ** (-spec.snr_db / 10.0))


def gen_symbols(scenario: Scenario, pu: int, k: int, rng: np.random.Generator,
                constellation: str = "qpsk") -> np.ndarray:
    """Frequency-domain data ``A_{i,k}`` (``N_T x N``) for one OFDM symbol.

    Columns of unused subcarriers are zero; used ones carry zero-mean symbols
    with covariance ``I / (N_T |C_i|)``.  The symbol index only names the draw.
    """
    return gen_symbol_block(scenario, pu, 1, rng, constellation)[0]


def gen_symbol_block(scenario: Scenario, pu: int, count: int, rng: np.random.Generator,
                     constellation: str = "qpsk") -> np.ndarray:
    """``count`` consecutive symbols of PU ``pu`` as a ``(count, N_T, N)`` array."""
    d = scenario.dims
    used = np.asarray(scenario.subcarriers[pu], dtype=int)
    out = np.zeros((count, d.N_T, d.N), dtype=complex)
    if used.size == 0:
        return out
    scale = 1.0 / np.sqrt(d.N_T * used.size)
    shape = (count, d.N_T, used.size)
    if constellation == "qpsk":
        bits = rng.integers(0, 2, size=(2,) + shape)
        sym = ((2 * bits[0] - 1) + 1j * (2 * bits[1] - 1)) / np.sqrt(2)
    elif constellation == "gaussian":
        sym = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    else:
        raise ValueError(f"unknown constellation {constellation!r}")
    out[:, :, used] = scale * sym
    return out


@dataclass
class _PuDraw:
    first_symbol: int
    symbols: np.ndarray  # (n_symbols, N_T, N)
    fading: dict = field(default_factory=dict)  # path index -> (n_symbols,)


def _symbol_span(scenario: Scenario, pu: int, num_samples: int) -> tuple[int, int]:
    M = scenario.dims.M
    t = scenario.offsets[pu]
    first = -((t + scenario.dims.L_p) // M) - 1
    last = num_samples // M + 1
    return first, last - first + 1


def render_rx(scenario: Scenario, num_samples: int, draws: Sequence[_PuDraw],
              noise: np.ndarray | None = None) -> np.ndarray:
    """Received stream for explicitly given symbols, fading and noise.

    ``draws[i]`` holds the symbols of PU ``i`` starting at symbol index
    ``first_symbol`` and the per-symbol fading of each of its paths (keyed by
    the path's position in ``scenario.paths``).
    """
    d = scenario.dims
    M = d.M
    F = build_prefixed_ifft(d)
    tau = np.arange(num_samples)
    y = np.zeros((d.N_R, num_samples), dtype=complex)
    for idx, path in enumerate(scenario.paths):
        draw = draws[path.pu]
        D = scenario.offsets[path.pu] + path.delay
        e_t = steering(path.aod / d.A, d.N_T)
        # time-domain samples of every symbol, projected on the AoD: (n_sym, M)
        x = np.tensordot(e_t.conj(), draw.symbols, axes=(0, 1)) @ F
        k = (tau - D) // M - draw.first_symbol
        if k.min() < 0 or k.max() >= draw.symbols.shape[0]:
            raise ScenarioError("symbol draw does not cover the requested stream")
        local = (tau - D) % M
        h = np.asarray(draw.fading[idx])[k]
        s = h * x[k, local] * doppler_phase(path.doppler, tau, d)
        y += np.outer(steering(path.aoa / d.B, d.N_R), s)
    if noise is not None:
        y += noise
    return y


def draw_pus(scenario: Scenario, num_samples: int, rng: np.random.Generator,
             constellation: str = "qpsk") -> list[_PuDraw]:
    draws = []
    for i in range(scenario.num_pus):
        first, count = _symbol_span(scenario, i, num_samples)
        symbols = gen_symbol_block(scenario, i, count, rng, constellation)
        draws.append(_PuDraw(first, symbols))
    for idx, path in enumerate(scenario.paths):
        draw = draws[path.pu]
        n = draw.symbols.shape[0]
        g = np.sqrt(path.gain_var / 2.0)
        draw.fading[idx] = g * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return draws


def unit_noise(dims: SystemDims, num_samples: int, rng: np.random.Generator) -> np.ndarray:
    shape = (dims.N_R, num_samples)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def synthesize_signal(scenario: Scenario, num_samples: int, rng_seed,
                      constellation: str = "qpsk") -> tuple[np.ndarray, np.ndarray]:
    """Noise-free stream and a unit-variance noise stream drawn from one seed.

    Keeping the two apart lets SNR sweeps reuse a single realization.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    draws = draw_pus(scenario, num_samples, rng, constellation)
    signal = render_rx(scenario, num_samples, draws)
    return signal, unit_noise(scenario.dims, num_samples, rng)


def synthesize_rx(scenario: Scenario, num_samples: int, rng_seed,
                  constellation: str = "qpsk") -> np.ndarray:
    """Received ``N_R x num_samples`` stream with block fading and AWGN."""
    signal, noise = synthesize_signal(scenario, num_samples, rng_seed, constellation)
    return signal + np.sqrt(scenario.noise_var) * noise


def full_stream_length(dims: SystemDims, K: int) -> int:
    return (K - 1) * 2 * dims.M + dims.M


def spatial_stream_length(dims: SystemDims, K: int) -> int:
    return (K - 1) * dims.M + 1


def _check_stream(stream: np.ndarray, dims: SystemDims, need: int, K: int) -> np.ndarray:
    stream = np.asarray(stream)
    if K < 1:
        raise ValueError("K must be >= 1")
    if stream.ndim != 2 or stream.shape[0] != dims.N_R:
        raise ValueError(f"stream must have shape (N_R={dims.N_R}, n)")
    if stream.shape[1] < need:
        raise ValueError(f"stream has {stream.shape[1]} samples, {need} needed for K={K}")
    return stream


def collect_temporal_obs(stream: np.ndarray, dims: SystemDims, K: int) -> np.ndarray:
    """Blocks ``Y_T(r) = [y[2rM], ..., y[2rM+M-1]]`` as a ``(K, N_R, M)`` array."""
    M = dims.M
    stream = _check_stream(stream, dims, full_stream_length(dims, K), K)
    starts = 2 * M * np.arange(K)
    return np.stack([stream[:, s:s + M] for s in starts])


def collect_full_obs(stream: np.ndarray, dims: SystemDims, K: int) -> ObservationSet:
    """Stacked windows spaced ``2M`` apart; column ``r`` is ``vec(Y_T(r))``."""
    blocks = collect_temporal_obs(stream, dims, K)
    data = blocks.transpose(0, 2, 1).reshape(K, -1).T
    return ObservationSet(data, "full")


def collect_spatial_obs(stream: np.ndarray, dims: SystemDims, K: int) -> ObservationSet:
    """Array snapshots ``y[0], y[M], ..., y[(K-1)M]``."""
    stream = _check_stream(stream, dims, spatial_stream_length(dims, K), K)
    return ObservationSet(stream[:, : (K - 1) * dims.M + 1: dims.M], "spatial")


def write_observations(path, obs: ObservationSet) -> None:
    data = np.asarray(obs.data, dtype=np.complex128)
    header = OBS_MAGIC + struct.pack("<III", OBS_KINDS.index(obs.kind), obs.d, obs.K)
    body = np.empty((obs.K, obs.d, 2), dtype="<f8")
    body[..., 0] = data.real.T
    body[..., 1] = data.imag.T
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_observations(path) -> ObservationSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != OBS_MAGIC:
        raise ValueError(f"{path}: not an observation file")
    kind, d, K = struct.unpack("<III", raw[8:20])
    if kind >= len(OBS_KINDS):
        raise ValueError(f"{path}: unknown observation kind {kind}")
    body = np.frombuffer(raw, dtype="<f8", offset=20)
    if body.size != 2 * d * K:
        raise ValueError(f"{path}: expected {d * K} complex values, found {body.size / 2:g}")
    vals = body.reshape(K, d, 2)
    return ObservationSet((vals[..., 0] + 1j * vals[..., 1]).T, OBS_KINDS[kind])
