"""Channel generation and communication/sensing metrics for a cell-free ISAC network.

Array conventions used throughout the package:

* ``h``: (M, K, L) complex, channel from AP m to user k.
* ``a``: (M, N, L) complex, unit-norm steering vector from AP m toward target n.
* beamformer ``V``: (L*K, M) complex; column m stacks v_m1 ... v_mK. Its
  reshaped view ``V.reshape(K, L, M)[k, :, m]`` is v_mk.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .config import ScenarioConfig

__all__ = [
    "ChannelSet",
    "BeamMatrix",
    "pathloss",
    "steering_vector",
    "wrap_angle",
    "draw_channels",
    "cross_gains",
    "sinr",
    "sinrs",
    "sum_rate",
    "beampattern_gain",
    "beampattern_gains",
    "per_ap_power",
    "beampattern_sweep",
]


def pathloss(d, C0: float, D0: float, nu: float):
    """Large-scale gain ``C0 * (d / D0) ** -nu``; works elementwise on arrays."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0) or D0 <= 0:
        raise ValueError("pathloss requires positive distances")
    out = C0 * (d / D0) ** (-nu)
    return float(out) if out.ndim == 0 else out


def steering_vector(theta, L: int) -> np.ndarray:
    """Half-wavelength ULA response; ``theta`` may be an array (result gets a trailing L axis)."""
    if L < 1:
        raise ValueError("steering vector needs at least one antenna")
    theta = np.asarray(theta, dtype=float)
    ell = np.arange(L)
    phase = np.pi * np.multiply.outer(np.sin(theta), ell)
    return np.exp(1j * phase) / np.sqrt(L)


def wrap_angle(theta):
    """Fold angles (radians) into (-pi/2, pi/2]; a ULA cannot tell front from back."""
    theta = np.asarray(theta, dtype=float)
    t = np.mod(theta + np.pi / 2, np.pi) - np.pi / 2     # [-pi/2, pi/2)
    return np.where(t <= -np.pi / 2 + 1e-15, t + np.pi, t)


@dataclass(frozen=True)
class ChannelSet:
    h: np.ndarray        # (M, K, L)
    theta: np.ndarray    # (M, N) radians
    a: np.ndarray        # (M, N, L)
    zeta: np.ndarray     # (M, K)

    def __post_init__(self):
        for arr in (self.h, self.theta, self.a, self.zeta):
            arr.setflags(write=False)

    @property
    def num_aps(self) -> int:
        return self.h.shape[0]

    @property
    def num_users(self) -> int:
        return self.h.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.h.shape[2]

    @property
    def num_targets(self) -> int:
        return self.theta.shape[1]

    @classmethod
    def from_arrays(cls, h, theta) -> "ChannelSet":
        """Wrap explicit channels (unit path loss recorded) and target angles."""
        h = np.array(h, dtype=complex)
        theta = np.array(theta, dtype=float).reshape(h.shape[0], -1)
        return cls(h=h, theta=theta, a=steering_vector(theta, h.shape[2]),
                   zeta=np.ones(h.shape[:2]))


@dataclass(frozen=True)
class BeamMatrix:
    """Beamformer ``V`` of shape (L*K, M).

    With ``normalized=True`` the entries are in units of sqrt(p_max): the
    radiated beamformer is ``sqrt(p_max) * V``.
    """

    V: np.ndarray
    normalized: bool = False

    def physical(self, p_max: float) -> np.ndarray:
        return np.sqrt(p_max) * self.V if self.normalized else self.V


Beam = Union[BeamMatrix, np.ndarray]


def _physical(V: Beam, p_max: Optional[float]) -> np.ndarray:
    if isinstance(V, BeamMatrix):
        if V.normalized:
            if p_max is None:
                raise ValueError("p_max is required for a normalized beamformer")
            return V.physical(p_max)
        return V.V
    return np.asarray(V)


def _blocks(V: np.ndarray, K: int) -> np.ndarray:
    """(L*K, M) -> (K, L, M) view."""
    LK, M = V.shape
    if LK % K:
        raise ValueError(f"beamformer rows {LK} not divisible by K={K}")
    return V.reshape(K, LK // K, M)


def _positions(rng, given, count, area):
    if given is not None:
        return np.asarray(given, dtype=float).reshape(count, 2)
    return rng.uniform(0.0, area, size=(count, 2))


def draw_channels(config: ScenarioConfig, rng: np.random.Generator) -> ChannelSet:
    """One random drop: positions (where not fixed), path loss, Rayleigh fading, target angles."""
    M, L, K, N = config.num_aps, config.num_antennas, config.num_users, config.num_targets
    aps = _positions(rng, config.ap_positions, M, config.area)
    users = _positions(rng, config.user_positions, K, config.area)
    if config.target_angles_deg is not None:
        theta = np.deg2rad(np.asarray(config.target_angles_deg, dtype=float).reshape(M, N))
        # passthrough: explicit angles are used exactly as given
    else:
        targets = _positions(rng, config.target_positions, N, config.area)
        delta = targets[None, :, :] - aps[:, None, :]
        theta = wrap_angle(np.arctan2(delta[..., 1], delta[..., 0])).reshape(M, N)
    dist = np.linalg.norm(users[None, :, :] - aps[:, None, :], axis=-1)
    if np.any(dist <= 0):
        raise ValueError("an AP coincides with a user (zero distance)")
    zeta = pathloss(dist, config.pathloss_ref, config.ref_distance, config.pathloss_exponent)
    zeta = np.asarray(zeta).reshape(M, K)
    g = (rng.standard_normal((M, K, L)) + 1j * rng.standard_normal((M, K, L))) / np.sqrt(2.0)
    if config.user_angles_deg is not None:
        # line of sight: same average gain as Rayleigh, all of it along the user's direction
        phi = np.deg2rad(np.asarray(config.user_angles_deg, dtype=float).reshape(M, K))
        g = np.sqrt(L) * steering_vector(phi, L)
    h = np.sqrt(zeta)[..., None] * g
    return ChannelSet(h=h, theta=theta, a=steering_vector(theta, L), zeta=zeta)


def cross_gains(V: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Coherent effective channels ``S[k, i] = sum_m h_mk^H v_mi`` for physical ``V``."""
    K = h.shape[1]
    return np.einsum("mkl,ilm->ki", h.conj(), _blocks(V, K))


def sinrs(V: Beam, channels: ChannelSet, noise_power: float,
          p_max: Optional[float] = None) -> np.ndarray:
    """SINR of every user; interference excludes the user's own beam."""
    S = np.abs(cross_gains(_physical(V, p_max), channels.h)) ** 2
    signal = np.diag(S).copy()
    off = S.copy()
    np.fill_diagonal(off, 0.0)      # direct sum: subtracting the signal cancels digits
    return signal / (off.sum(axis=1) + noise_power)


def sinr(V: Beam, channels: ChannelSet, k: int, noise_power: float,
         p_max: Optional[float] = None) -> float:
    if not 0 <= k < channels.num_users:
        raise IndexError(f"user index {k} out of range")
    return float(sinrs(V, channels, noise_power, p_max)[k])


def sum_rate(V: Beam, channels: ChannelSet, noise_power: float,
             p_max: Optional[float] = None) -> float:
    """Sum of log2(1 + SINR_k), bps/Hz."""
    return float(np.sum(np.log2(1.0 + sinrs(V, channels, noise_power, p_max))))


def _per_ap_target_gains(V: np.ndarray, a: np.ndarray, K: int) -> np.ndarray:
    """G[m, n] = sum_k |a_mn^H v_mk|^2 (incoherent across users)."""
    proj = np.einsum("mnl,klm->mnk", a.conj(), _blocks(V, K))
    return np.sum(np.abs(proj) ** 2, axis=-1)


def beampattern_gains(V: Beam, channels: ChannelSet, p_max: Optional[float] = None) -> np.ndarray:
    """Beampattern gain at every target, watts; APs add incoherently."""
    G = _per_ap_target_gains(_physical(V, p_max), channels.a, channels.num_users)
    return G.sum(axis=0)


def beampattern_gain(V: Beam, channels: ChannelSet, n: int,
                     p_max: Optional[float] = None) -> float:
    if not 0 <= n < channels.num_targets:
        raise IndexError(f"target index {n} out of range")
    return float(beampattern_gains(V, channels, p_max)[n])


def per_ap_power(V: Beam, m: int, p_max: Optional[float] = None) -> float:
    Vp = _physical(V, p_max)
    if not 0 <= m < Vp.shape[1]:
        raise IndexError(f"AP index {m} out of range")
    return float(np.sum(np.abs(Vp[:, m]) ** 2))


def beampattern_sweep(V: Beam, num_users: int, angles: Sequence[float],
                      p_max: Optional[float] = None) -> np.ndarray:
    """Per-AP gain ``sum_k |a(theta)^H v_mk|^2`` for each angle; returns (len(angles), M) watts."""
    angles = np.asarray(angles, dtype=float)
    if angles.size == 0:
        raise ValueError("angle grid is empty")
    Vb = _blocks(_physical(V, p_max), num_users)
    steer = steering_vector(angles, Vb.shape[1])            # (A, L)
    proj = np.einsum("al,klm->amk", steer.conj(), Vb)
    return np.sum(np.abs(proj) ** 2, axis=-1)
