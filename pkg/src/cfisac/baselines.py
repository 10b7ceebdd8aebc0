"""Sensing-ignorant ZF/MMSE beamformers and a brute-force grid oracle for tiny instances."""

from __future__ import annotations

import enum
import itertools

import numpy as np

from .config import ScenarioConfig
from .scenario import BeamMatrix, ChannelSet

__all__ = [
    "BaselineKind",
    "SingularChannelError",
    "OracleRefusedError",
    "OracleInfeasibleError",
    "zf_beamformer",
    "mmse_beamformer",
    "baseline_beamformer",
    "grid_search_oracle",
]

MAX_ORACLE_DIM = 6
MIN_ORACLE_RESOLUTION = 16


class BaselineKind(enum.Enum):
    ZF = "ZF"
    MMSE = "MMSE"


class SingularChannelError(np.linalg.LinAlgError):
    def __init__(self, ap: int, message: str):
        self.ap = ap
        super().__init__(f"AP {ap}: {message}")


class OracleRefusedError(ValueError):
    pass


class OracleInfeasibleError(RuntimeError):
    """No grid point satisfies the sensing constraints."""


def _stack(blocks, K, L):
    # blocks[m] is (L, K) with column k = v_mk  ->  (L*K, M) with V.reshape(K, L, M)[k, :, m] = v_mk
    M = len(blocks)
    V = np.empty((K, L, M), dtype=complex)
    for m, Vm in enumerate(blocks):
        V[:, :, m] = Vm.T
    return V.reshape(K * L, M)


def _full_power(Vm, p_max):
    return Vm * np.sqrt(p_max) / np.linalg.norm(Vm)


def zf_beamformer(channels: ChannelSet, p_max: float) -> BeamMatrix:
    """Per-AP zero forcing ``H_m (H_m^H H_m)^-1``, scaled so each AP radiates exactly ``p_max``."""
    M, K, L = channels.h.shape
    blocks = []
    for m in range(M):
        H = channels.h[m].T                          # (L, K), column k = h_mk
        if L < K or np.linalg.matrix_rank(H) < K:
            raise SingularChannelError(m, f"channel matrix has rank below K={K}")
        gram = H.conj().T @ H
        try:
            Vm = H @ np.linalg.inv(gram)
        except np.linalg.LinAlgError as exc:
            raise SingularChannelError(m, str(exc)) from None
        blocks.append(_full_power(Vm, p_max))
    return BeamMatrix(V=_stack(blocks, K, L), normalized=False)


def mmse_beamformer(channels: ChannelSet, noise_power: float, p_max: float) -> BeamMatrix:
    """Per-AP regularized ZF ``H_m (H_m^H H_m + sigma^2 I)^-1`` at full per-AP power."""
    M, K, L = channels.h.shape
    blocks = []
    for m in range(M):
        H = channels.h[m].T
        Vm = H @ np.linalg.inv(H.conj().T @ H + noise_power * np.eye(K))
        blocks.append(_full_power(Vm, p_max))
    return BeamMatrix(V=_stack(blocks, K, L), normalized=False)


def baseline_beamformer(kind, channels: ChannelSet, config: ScenarioConfig) -> BeamMatrix:
    kind = BaselineKind(kind)
    if kind is BaselineKind.ZF:
        return zf_beamformer(channels, config.p_max)
    return mmse_beamformer(channels, config.noise_power, config.p_max)


# --------------------------------------------------------------------------
# grid oracle

def _sphere_magnitudes(angles):
    """Hyperspherical coordinates -> nonnegative unit vectors; ``angles`` is (P, d-1) in [0, pi/2]."""
    P, n = angles.shape
    out = np.ones((P, n + 1))
    for j in range(n):
        out[:, j] *= np.cos(angles[:, j])
        out[:, j + 1:] *= np.sin(angles[:, j])[:, None]
    return out


def grid_search_oracle(config: ScenarioConfig, channels: ChannelSet, resolution: int = 64,
                       chunk: int = 1 << 16):
    """Exhaustive search over a per-AP power-ball grid; returns ``(BeamMatrix, sum_rate)``.

    Each AP's beamformer (L*K complex entries) is a radius in (0, sqrt(p_max)],
    a direction of magnitudes on the positive orthant of the unit sphere and
    one phase per entry. The phase of each user's first entry at AP 0 is fixed
    to zero: a common phase on all of one user's beams changes neither any
    SINR nor any beampattern gain. Grid points failing a sensing constraint
    are discarded.
    """
    M, K, L = channels.h.shape
    N = channels.num_targets
    real_dim = 2 * L * K * M
    if real_dim > MAX_ORACLE_DIM:
        raise OracleRefusedError(
            f"grid oracle limited to {MAX_ORACLE_DIM} real dimensions, instance has {real_dim}")
    if resolution < MIN_ORACLE_RESOLUTION:
        raise OracleRefusedError(f"resolution must be at least {MIN_ORACLE_RESOLUTION}")
    n = L * K                                        # complex entries per AP
    radii = np.sqrt(config.p_max) * np.arange(1, resolution + 1) / resolution
    polar = np.linspace(0.0, np.pi / 2, resolution)
    phases = 2 * np.pi * np.arange(resolution) / resolution

    # free phases: entry (m, k, l) except (0, k, 0) for every k
    free = [(m, k, l) for m in range(M) for k in range(K) for l in range(L)
            if not (m == 0 and l == 0)]
    axes = [radii] * M + [polar] * (M * (n - 1)) + [phases] * len(free)
    gamma_th = config.gamma_th
    noise = config.noise_power
    hc = channels.h.conj()
    ac = channels.a.conj()

    best_rate, best_V = -np.inf, None
    grid = itertools.product(*[range(len(ax)) for ax in axes])
    while True:
        idx = np.array(list(itertools.islice(grid, chunk)), dtype=np.intp)
        if idx.size == 0:
            break
        idx = idx.reshape(-1, len(axes))
        P = idx.shape[0]
        cols = [np.asarray(ax)[idx[:, j]] for j, ax in enumerate(axes)]
        V = np.zeros((P, K, L, M), dtype=complex)
        pos = M
        for m in range(M):
            mags = _sphere_magnitudes(np.stack(cols[pos:pos + n - 1], axis=1)
                                      if n > 1 else np.zeros((P, 0)))
            pos += n - 1
            V[:, :, :, m] = (cols[m][:, None] * mags).reshape(P, K, L)
        ph = np.zeros((P, K, L, M))
        for j, (m, k, l) in enumerate(free):
            ph[:, k, l, m] = cols[pos + j]
        V = V * np.exp(1j * ph)
        S = np.abs(np.einsum("mkl,pilm->pki", hc, V)) ** 2
        signal = np.einsum("pkk->pk", S)
        interf = S.sum(axis=2) - signal
        rate = np.log2(1.0 + signal / (interf + noise)).sum(axis=1)
        if N:
            gains = (np.abs(np.einsum("mnl,pklm->pnk", ac, V)) ** 2).sum(axis=2)
            rate = np.where(np.all(gains >= gamma_th, axis=1), rate, -np.inf)
        i = int(np.argmax(rate))
        if rate[i] > best_rate:
            best_rate, best_V = float(rate[i]), V[i].reshape(K * L, M).copy()
    if best_V is None:
        raise OracleInfeasibleError("no grid point meets the sensing thresholds")
    return BeamMatrix(V=best_V, normalized=False), best_rate
