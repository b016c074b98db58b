"""Over-complete atom dictionaries for the sparse covariance model.

A received covariance is modelled as a nonnegative combination of
vectorized Hermitian atoms plus white noise.  Four dictionary variants are
provided:

``spatial``   atoms ``e_r(b/B) e_r(b/B)^H`` for the array covariance;
``temporal``  atoms ``(Lambda(p) f_c f_c^H Lambda(p)^H) * Upsilon(v)``;
``joint``     the Kronecker product of a temporal and a spatial atom;
``general``   atoms built literally from shift matrices and a block-diagonal
              channel operator; desk-scale only, used to cross-check ``joint``.

Flat atom indices are 0-based.  Atoms are materialized on demand; a dense
copy is cached only when it fits in the configured memory budget.  Scoring
against a residual (``correlate``) uses the atom structure so the dense
temporal dictionary is never needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .signal_model import Scenario, SystemDims, build_prefixed_ifft, doppler_phase, steering

DEFAULT_DENSE_BUDGET = 256 * 2**20
GENERAL_ATOM_CAP = 10**6


def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).reshape(-1, order="F")


def unvec(x: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(x).reshape(n, n, order="F")


def shift_matrix(j: int, v: int, M: int) -> np.ndarray:
    """Shift matrices selecting the tail (``j=0``) or head (``j=1``) of a symbol."""
    if not 0 <= v < M:
        raise ValueError(f"v={v} outside [0, {M})")
    J = np.zeros((M, M))
    if j == 0:
        J[np.arange(v), M - v + np.arange(v)] = 1.0
    elif j == 1:
        J[v + np.arange(M - v), np.arange(M - v)] = 1.0
    else:
        raise ValueError("j must be 0 or 1")
    return J


def mask_matrix(v: int, M: int) -> np.ndarray:
    """Block-diagonal ones pattern with blocks of size ``v`` and ``M - v``."""
    if not 0 <= v < M:
        raise ValueError(f"v={v} outside [0, {M})")
    U = np.zeros((M, M))
    U[:v, :v] = 1.0
    U[v:, v:] = 1.0
    return U


def doppler_matrix(p: int, dims: SystemDims) -> np.ndarray:
    return np.diag(doppler_phase(p, np.arange(dims.M), dims))


def _check_range(name, value, lo, hi):
    if not lo <= value < hi:
        raise ValueError(f"{name}={value} outside [{lo}, {hi})")


def _doppler_subcarrier_vector(p: int, c: int, dims: SystemDims, F=None) -> np.ndarray:
    F = build_prefixed_ifft(dims) if F is None else F
    return doppler_phase(p, np.arange(dims.M), dims) * F[c]


def ula_channel(m: int, theta: tuple[int, int, int], dims: SystemDims) -> np.ndarray:
    """Quantized ULA channel matrix ``Psi(m, theta)`` for ``theta = (p, b, a)``."""
    p, b, a = theta
    return doppler_phase(p, m, dims) * np.outer(steering(b / dims.B, dims.N_R),
                                                steering(a / dims.A, dims.N_T).conj())


def general_atom_matrix(v: int, theta, c: int, dims: SystemDims,
                        channel: Callable | None = None) -> np.ndarray:
    M, NR, NT = dims.M, dims.N_R, dims.N_T
    channel = channel or ula_channel
    _check_range("v", v, 0, M)
    _check_range("c", c, 0, dims.N)
    F = build_prefixed_ifft(dims)
    f = F[c]
    T = np.zeros((M * NR, M * NT), dtype=complex)
    for m in range(M):
        T[m * NR:(m + 1) * NR, m * NT:(m + 1) * NT] = channel(m, theta, dims)
    core = T @ np.kron(np.outer(f, f.conj()), np.eye(NT)) @ T.conj().T
    out = np.zeros((M * NR, M * NR), dtype=complex)
    for j in (0, 1):
        S = np.kron(shift_matrix(j, v, M), np.eye(NR))
        out += S @ core @ S.T
    return out


def general_atom(v: int, theta, c: int, dims: SystemDims, channel: Callable | None = None) -> np.ndarray:
    """``vec(Pi^0 + Pi^1)`` for displacement ``v``, channel parameters ``theta`` and subcarrier ``c``."""
    return vec(general_atom_matrix(v, theta, c, dims, channel))


def temporal_atom_matrix(v: int, p: int, c: int, dims: SystemDims) -> np.ndarray:
    _check_range("v", v, 0, dims.M)
    _check_range("p", p, dims.p_l, dims.p_l + dims.P)
    _check_range("c", c, 0, dims.N)
    g = _doppler_subcarrier_vector(p, c, dims)
    return np.outer(g, g.conj()) * mask_matrix(v, dims.M)


def temporal_atom(v: int, p: int, c: int, dims: SystemDims) -> np.ndarray:
    return vec(temporal_atom_matrix(v, p, c, dims))


def spatial_atom_matrix(b: int, dims: SystemDims) -> np.ndarray:
    _check_range("b", b, 0, dims.B)
    e = steering(b / dims.B, dims.N_R)
    return np.outer(e, e.conj())


def spatial_atom(b: int, dims: SystemDims) -> np.ndarray:
    return vec(spatial_atom_matrix(b, dims))


def ula_atom_matrix(v: int, p: int, c: int, b: int, dims: SystemDims) -> np.ndarray:
    return np.kron(temporal_atom_matrix(v, p, c, dims), spatial_atom_matrix(b, dims))


def ula_atom(v: int, p: int, c: int, b: int, dims: SystemDims) -> np.ndarray:
    """Joint (time x antenna) atom of the separable ULA dictionary."""
    return vec(ula_atom_matrix(v, p, c, b, dims))


def temporal_index(v: int, p: int, c: int, dims: SystemDims) -> int:
    """Flat temporal index ``v P N + (p - p_l) N + c``."""
    _check_range("v", v, 0, dims.M)
    _check_range("p", p, dims.p_l, dims.p_l + dims.P)
    _check_range("c", c, 0, dims.N)
    return (v * dims.P + (p - dims.p_l)) * dims.N + c


def joint_index(v: int, p: int, c: int, b: int, dims: SystemDims) -> int:
    """Flat joint index ``v P N B + (p - p_l) N B + c B + b``."""
    _check_range("b", b, 0, dims.B)
    return temporal_index(v, p, c, dims) * dims.B + b


@dataclass
class SparseCoefficients:
    """Nonnegative coefficients on a dictionary support (0-based flat indices)."""

    support: np.ndarray
    values: np.ndarray
    kind: str

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.int64).reshape(-1)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.support.shape != self.values.shape:
            raise ValueError("support and values must align")
        order = np.argsort(self.support, kind="stable")
        self.support, self.values = self.support[order], self.values[order]
        if np.any(np.diff(self.support) == 0):
            raise ValueError("duplicate support indices")
        if np.any(self.values < 0):
            raise ValueError("coefficients must be nonnegative")

    def __len__(self):
        return self.support.size

    @classmethod
    def empty(cls, kind: str) -> "SparseCoefficients":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), kind)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], kind: str) -> "SparseCoefficients":
        acc: dict[int, float] = {}
        for idx, val in pairs:
            acc[int(idx)] = acc.get(int(idx), 0.0) + float(val)
        items = sorted((k, v) for k, v in acc.items() if v > 0)
        return cls([k for k, _ in items], [v for _, v in items], kind)

    def dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.support] = self.values
        return out

    def pruned(self, rel_tol: float) -> "SparseCoefficients":
        if not len(self):
            return self
        keep = self.values > rel_tol * self.values.max()
        return SparseCoefficients(self.support[keep], self.values[keep], self.kind)


class AtomDictionary:
    """Indexed family of Hermitian ``n x n`` atoms.

    Subclasses define ``size``, ``side``, ``atom_matrix`` and usually a
    structured ``correlate``.  ``materialize`` is ``"auto"`` (cache a dense
    copy when it fits ``dense_budget`` bytes), ``"dense"`` or ``"on-demand"``.
    """

    kind = "abstract"

    def __init__(self, dims: SystemDims, materialize: str = "auto",
                 dense_budget: int = DEFAULT_DENSE_BUDGET):
        if materialize not in ("auto", "dense", "on-demand"):
            raise ValueError(f"unknown materialization policy {materialize!r}")
        self.dims = dims
        self.materialize = materialize
        self.dense_budget = dense_budget
        self._dense = None
        self._norms = None

    size: int
    side: int

    def __len__(self):
        return self.size

    @property
    def atom_dim(self) -> int:
        return self.side * self.side

    def memory_estimate(self) -> int:
        """Bytes needed to hold the dense complex dictionary."""
        return self.size * self.atom_dim * 16

    def atom_matrix(self, idx: int) -> np.ndarray:
        raise NotImplementedError

    def params(self, idx: int) -> tuple:
        raise NotImplementedError

    def atom(self, idx: int) -> np.ndarray:
        return vec(self.atom_matrix(idx))

    def atoms(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        if self._dense is not None:
            return self._dense[:, indices]
        out = np.empty((self.atom_dim, indices.size), dtype=complex)
        for j, idx in enumerate(indices):
            out[:, j] = self.atom(int(idx))
        return out

    def _use_dense(self) -> bool:
        if self.materialize == "dense":
            return True
        return self.materialize == "auto" and self.memory_estimate() <= self.dense_budget

    def dense(self) -> np.ndarray:
        """Dense ``atom_dim x size`` matrix (cached under the memory policy)."""
        if self._dense is not None:
            return self._dense
        full = np.empty((self.atom_dim, self.size), dtype=complex)
        for idx in range(self.size):
            full[:, idx] = self.atom(idx)
        if self._use_dense():
            self._dense = full
        return full

    def norms_sq(self) -> np.ndarray:
        if self._norms is None:
            self._norms = self._norms_sq()
        return self._norms

    def _norms_sq(self) -> np.ndarray:
        if self._use_dense():
            return np.sum(np.abs(self.dense()) ** 2, axis=0)
        return np.array([np.sum(np.abs(self.atom_matrix(i)) ** 2) for i in range(self.size)])

    def correlate(self, R: np.ndarray) -> np.ndarray:
        """Real Frobenius pairing ``Re <m_d, vec(R)>`` for every atom."""
        R = np.asarray(R)
        if R.shape != (self.side, self.side):
            raise ValueError(f"residual must be {self.side}x{self.side}")
        if self._use_dense():
            return np.real(vec(R).conj() @ self.dense())
        return self._correlate(R)

    def _correlate(self, R: np.ndarray) -> np.ndarray:
        r = vec(R)
        return np.array([np.real(np.vdot(self.atom(i), r)) for i in range(self.size)])

    def synthesize(self, coeffs: SparseCoefficients) -> np.ndarray:
        """``unvec(M sigma)`` without the noise term."""
        self._check_kind(coeffs)
        if not len(coeffs):
            return np.zeros((self.side, self.side), dtype=complex)
        return unvec(self.atoms(coeffs.support) @ coeffs.values, self.side)

    def _check_kind(self, coeffs: SparseCoefficients):
        if coeffs.kind != self.kind:
            raise ValueError(f"{coeffs.kind} coefficients used with a {self.kind} dictionary")
        if len(coeffs) and (coeffs.support.min() < 0 or coeffs.support.max() >= self.size):
            raise ValueError("coefficient index outside the dictionary")


class SpatialDictionary(AtomDictionary):
    kind = "spatial"

    def __init__(self, dims: SystemDims, **kw):
        super().__init__(dims, **kw)
        self.size = dims.B
        self.side = dims.N_R
        self._E = steering(np.arange(dims.B) / dims.B, dims.N_R)

    def index(self, b: int) -> int:
        _check_range("b", b, 0, self.dims.B)
        return b

    def params(self, idx: int) -> tuple[int]:
        _check_range("index", idx, 0, self.size)
        return (idx,)

    def atom_matrix(self, idx: int) -> np.ndarray:
        e = self._E[:, idx]
        return np.outer(e, e.conj())

    def _norms_sq(self):
        return np.full(self.size, float(self.dims.N_R) ** 2)

    def _correlate(self, R):
        return np.real(np.einsum("ab,ac,cb->b", self._E.conj(), R, self._E))


class TemporalDictionary(AtomDictionary):
    """Atoms ``(g g^H) * Upsilon(v)`` with ``g = Lambda(p) f_c``; index ``(v, p, c)``."""

    kind = "temporal"

    def __init__(self, dims: SystemDims, **kw):
        super().__init__(dims, **kw)
        self.size = dims.M * dims.P * dims.N
        self.side = dims.M
        F = build_prefixed_ifft(dims)
        m = np.arange(dims.M)
        lam = np.stack([doppler_phase(p, m, dims) for p in dims.dopplers])  # (P, M)
        # row k = (p - p_l) * N + c
        self._G = (lam[:, None, :] * F[None, :, :]).reshape(dims.P * dims.N, dims.M)

    def index(self, v: int, p: int, c: int) -> int:
        return temporal_index(v, p, c, self.dims)

    def params(self, idx: int) -> tuple[int, int, int]:
        d = self.dims
        _check_range("index", idx, 0, self.size)
        v, rest = divmod(idx, d.P * d.N)
        pp, c = divmod(rest, d.N)
        return v, pp + d.p_l, c

    def atom_matrix(self, idx: int) -> np.ndarray:
        v, p, c = self.params(idx)
        g = self._G[(p - self.dims.p_l) * self.dims.N + c]
        return np.outer(g, g.conj()) * mask_matrix(v, self.dims.M)

    def _block_energy(self) -> np.ndarray:
        """``(M, P*N)`` squared norms: head block energy^2 + tail block energy^2."""
        e = np.abs(self._G) ** 2
        head = np.concatenate([np.zeros((e.shape[0], 1)), np.cumsum(e, axis=1)[:, :-1]], axis=1)
        tail = e.sum(axis=1, keepdims=True) - head
        return (head**2 + tail**2).T

    def _norms_sq(self):
        return self._block_energy().reshape(-1)

    def _masked_quadratic_forms(self, R: np.ndarray) -> np.ndarray:
        """``(M, P*N)`` array of ``Re sum_{m,n in same block of v} conj(g_m) R_mn g_n``."""
        return _masked_forms(self._G, R[None])[0]

    def _correlate(self, R):
        return self._masked_quadratic_forms(R).reshape(-1)


def _masked_forms(G: np.ndarray, Rs: np.ndarray) -> np.ndarray:
    """Masked quadratic forms for a stack of ``M x M`` matrices.

    Returns ``(len(Rs), M, K)`` with entry ``[s, v, k]`` equal to the real part
    of ``g_k^H (R_s * Upsilon(v)) g_k``.  Block sums for every ``v`` come from
    2-D prefix sums of ``conj(g_m) R_mn g_n``.
    """
    W = G.conj()[None, :, :, None] * Rs[:, None, :, :] * G[None, :, None, :]  # (S, K, M, M)
    W = W.real
    C = W.cumsum(axis=2).cumsum(axis=3)
    diag = np.einsum("skmm->skm", C)  # sum over [0, m] x [0, m]
    head = np.concatenate([np.zeros(diag.shape[:2] + (1,)), diag[..., :-1]], axis=2)
    Wr = W[:, :, ::-1, ::-1]
    Cr = Wr.cumsum(axis=2).cumsum(axis=3)
    diag_r = np.einsum("skmm->skm", Cr)  # sum over the last m+1 indices
    tail = diag_r[..., ::-1]  # tail[v] = sum over [v, M)
    return (head + tail).transpose(0, 2, 1)


class JointDictionary(AtomDictionary):
    """Separable ULA dictionary; index order ``(v, p, c, b)`` with ``b`` fastest."""

    kind = "joint"

    def __init__(self, dims: SystemDims, **kw):
        super().__init__(dims, **kw)
        self.temporal = TemporalDictionary(dims, materialize="on-demand")
        self.spatial = SpatialDictionary(dims, materialize="on-demand")
        self.size = self.temporal.size * dims.B
        self.side = dims.M * dims.N_R

    def index(self, v: int, p: int, c: int, b: int) -> int:
        return joint_index(v, p, c, b, self.dims)

    def params(self, idx: int) -> tuple[int, int, int, int]:
        _check_range("index", idx, 0, self.size)
        t, b = divmod(idx, self.dims.B)
        return self.temporal.params(t) + (b,)

    def atom_matrix(self, idx: int) -> np.ndarray:
        t, b = divmod(idx, self.dims.B)
        return np.kron(self.temporal.atom_matrix(t), self.spatial.atom_matrix(b))

    def _norms_sq(self):
        return np.multiply.outer(self.temporal.norms_sq(), self.spatial.norms_sq()).reshape(-1)

    def _correlate(self, R):
        d = self.dims
        R4 = R.reshape(d.M, d.N_R, d.M, d.N_R)
        E = self.spatial._E
        Rb = np.einsum("ab,manc,cb->bmn", E.conj(), R4, E)  # (B, M, M)
        out = np.empty((d.M, self.temporal._G.shape[0], d.B))
        chunk = max(1, int(2**24 // max(1, self.temporal._G.shape[0] * d.M * d.M)))
        for s in range(0, d.B, chunk):
            out[:, :, s:s + chunk] = _masked_forms(self.temporal._G, Rb[s:s + chunk]).transpose(1, 2, 0)
        return out.reshape(-1)


class GeneralDictionary(AtomDictionary):
    """Literal shift/channel-operator atoms, ``theta = (p, b, a)``; desk-scale only."""

    kind = "general"

    def __init__(self, dims: SystemDims, channel: Callable | None = None,
                 max_atoms: int = GENERAL_ATOM_CAP, **kw):
        super().__init__(dims, **kw)
        self.n_theta = dims.P * dims.B * dims.A
        self.size = dims.M * dims.N * self.n_theta
        if self.size > max_atoms:
            raise ValueError(f"general dictionary with {self.size} atoms exceeds the cap of {max_atoms}")
        self.side = dims.M * dims.N_R
        self.channel = channel

    def index(self, v: int, theta, c: int) -> int:
        d = self.dims
        p, b, a = theta
        _check_range("v", v, 0, d.M)
        _check_range("p", p, d.p_l, d.p_l + d.P)
        _check_range("b", b, 0, d.B)
        _check_range("a", a, 0, d.A)
        _check_range("c", c, 0, d.N)
        t = ((p - d.p_l) * d.B + b) * d.A + a
        return (v * self.n_theta + t) * d.N + c

    def params(self, idx: int):
        d = self.dims
        _check_range("index", idx, 0, self.size)
        rest, c = divmod(idx, d.N)
        v, t = divmod(rest, self.n_theta)
        pb, a = divmod(t, d.A)
        pp, b = divmod(pb, d.B)
        return v, (pp + d.p_l, b, a), c

    def atom_matrix(self, idx: int) -> np.ndarray:
        v, theta, c = self.params(idx)
        return general_atom_matrix(v, theta, c, self.dims, self.channel)


DICTIONARIES = {
    "spatial": SpatialDictionary,
    "temporal": TemporalDictionary,
    "joint": JointDictionary,
    "general": GeneralDictionary,
}


def make_dictionary(kind: str, dims: SystemDims, **kw) -> AtomDictionary:
    try:
        cls = DICTIONARIES[kind]
    except KeyError:
        raise ValueError(f"unknown dictionary kind {kind!r}") from None
    return cls(dims, **kw)


def spatial_dictionary(dims: SystemDims, **kw) -> SpatialDictionary:
    return SpatialDictionary(dims, **kw)


def coherence(dictionary: AtomDictionary, sample: int = 200, seed=0) -> float:
    """Largest normalized pairwise inner product over a random atom subset."""
    rng = np.random.default_rng(seed)
    n = min(sample, dictionary.size)
    idx = np.sort(rng.choice(dictionary.size, size=n, replace=False))
    A = dictionary.atoms(idx)
    A = A / np.linalg.norm(A, axis=0)
    G = np.abs(A.conj().T @ A)
    np.fill_diagonal(G, 0.0)
    return float(G.max()) if n > 1 else 0.0


def _per_sample_power(scenario: Scenario, pu: int) -> float:
    """Mean power of one received time sample of PU ``pu`` per unit path gain."""
    d = scenario.dims
    cs = list(scenario.subcarriers[pu])
    if not cs:
        return 0.0
    F = build_prefixed_ifft(d)
    return float(np.mean(np.abs(F[cs, 0]) ** 2))


def ground_truth_sigma(scenario: Scenario) -> SparseCoefficients:
    """Joint-dictionary coefficients ``N_T sigma_{i,l} gamma_{i,c}`` of a scenario."""
    d = scenario.dims
    pairs = []
    for path in scenario.paths:
        cs = scenario.subcarriers[path.pu]
        if not cs:
            continue
        gamma = 1.0 / (d.N_T * len(cs))
        v = scenario.displacement(path)
        for c in cs:
            pairs.append((joint_index(v, path.doppler, c, path.aoa, d), d.N_T * path.gain_var * gamma))
    return SparseCoefficients.from_pairs(pairs, "joint")


def ground_truth_spatial(scenario: Scenario) -> SparseCoefficients:
    """Spatial-dictionary coefficients: per-sample received power per AoA."""
    pairs = [(p.aoa, p.gain_var * _per_sample_power(scenario, p.pu)) for p in scenario.paths]
    return SparseCoefficients.from_pairs(pairs, "spatial")


def ground_truth_temporal(scenario: Scenario, phi: np.ndarray | None = None) -> SparseCoefficients:
    """Temporal coefficients after combining the antennas with the row ``phi``.

    ``phi=None`` selects antenna 0.  Each path is weighted by
    ``|phi e_r(b/B)|^2``.
    """
    d = scenario.dims
    phi = np.eye(d.N_R)[0] if phi is None else np.asarray(phi).reshape(-1)
    pairs = []
    for path in scenario.paths:
        cs = scenario.subcarriers[path.pu]
        if not cs:
            continue
        pi_b = abs(phi @ steering(path.aoa / d.B, d.N_R)) ** 2
        gamma = 1.0 / (d.N_T * len(cs))
        v = scenario.displacement(path)
        for c in cs:
            pairs.append((temporal_index(v, path.doppler, c, d), d.N_T * path.gain_var * gamma * pi_b))
    # paths nulled by the combiner leave round-off sized weights
    return SparseCoefficients.from_pairs(pairs, "temporal").pruned(1e-12)


def model_covariance(coeffs: SparseCoefficients, noise_var: float,
                     dictionary: AtomDictionary) -> np.ndarray:
    """``unvec(M sigma) + noise_var I`` for a coefficient vector on ``dictionary``."""
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    S = dictionary.synthesize(coeffs)
    S = S + noise_var * np.eye(dictionary.side)
    return 0.5 * (S + S.conj().T)
