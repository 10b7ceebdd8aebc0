"""Fractional-programming reformulation and the lifted (slack-augmented) problem.

A lifted point ``X`` has shape ((L+1)*K, M). Viewed as (K, L+1, M), block
``[k, :L, m]`` is the normalized beamformer v_mk / sqrt(p_max) and entry
``[k, L, m]`` is the slack that completes column m to unit norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import BeamMatrix, ChannelSet, sinrs

__all__ = [
    "InfeasibleInputError",
    "LiftedProblem",
    "lift",
    "extract",
    "update_mu",
    "lifted_cross_gains",
    "reduced_objective",
    "sensing_constraint",
    "sensing_constraints",
    "dual_objective",
]

_POWER_TOL = 1e-12


class InfeasibleInputError(ValueError):
    pass


@dataclass(frozen=True)
class LiftedProblem:
    h_hat: np.ndarray       # (M, K, L+1), sqrt(p_max) * [h_mk; 0]
    a_hat: np.ndarray       # (M, N, L+1), sqrt(p_max) * [a(theta_mn); 0]
    gamma_th: np.ndarray    # (N,) watts
    noise_power: float
    p_max: float
    per_ap_sensing: bool = False    # one constraint per (AP, target) instead of per target

    @classmethod
    def build(cls, channels: ChannelSet, gamma_th, noise_power: float,
              p_max: float, per_ap_sensing: bool = False) -> "LiftedProblem":
        M, K, L = channels.h.shape
        N = channels.num_targets
        gamma_th = np.asarray(gamma_th, dtype=float).reshape(N)
        s = np.sqrt(p_max)
        h_hat = np.zeros((M, K, L + 1), dtype=complex)
        h_hat[..., :L] = s * channels.h
        a_hat = np.zeros((M, N, L + 1), dtype=complex)
        a_hat[..., :L] = s * channels.a
        return cls(h_hat=h_hat, a_hat=a_hat, gamma_th=gamma_th,
                   noise_power=float(noise_power), p_max=float(p_max),
                   per_ap_sensing=bool(per_ap_sensing))

    @property
    def num_aps(self) -> int:
        return self.h_hat.shape[0]

    @property
    def num_users(self) -> int:
        return self.h_hat.shape[1]

    @property
    def num_targets(self) -> int:
        return self.a_hat.shape[1]

    @property
    def thresholds(self) -> np.ndarray:
        """Threshold of every sensing constraint, in the order of :func:`sensing_constraints`."""
        if self.per_ap_sensing:
            return np.tile(self.gamma_th, self.num_aps)
        return self.gamma_th

    @property
    def num_constraints(self) -> int:
        return self.thresholds.size

    def constraint_weights(self, c: np.ndarray) -> np.ndarray:
        """Spread per-constraint weights ``c`` onto the (M, N) grid of AP-target pairs."""
        if self.per_ap_sensing:
            return c.reshape(self.num_aps, self.num_targets)
        return np.broadcast_to(c, (self.num_aps, self.num_targets))

    @property
    def shape(self) -> tuple:
        return (self.h_hat.shape[2] * self.num_users, self.num_aps)


def _blocks(X: np.ndarray, K: int) -> np.ndarray:
    n, M = X.shape
    return X.reshape(K, n // K, M)


def lift(V, p_max: float, num_users: int) -> np.ndarray:
    """Embed a physical beamformer (L*K, M) as a unit-column lifted point.

    Residual power ``1 - ||v_m||^2 / p_max`` is split equally over the
    column's K slack entries, all with zero phase.
    """
    V = V.physical(p_max) if isinstance(V, BeamMatrix) else np.asarray(V, dtype=complex)
    LK, M = V.shape
    K = num_users
    if LK % K:
        raise ValueError(f"beamformer rows {LK} not divisible by K={K}")
    L = LK // K
    Vn = V / np.sqrt(p_max)
    power = np.sum(np.abs(Vn) ** 2, axis=0)
    if np.any(power > 1.0 + _POWER_TOL):
        worst = int(np.argmax(power))
        raise InfeasibleInputError(
            f"AP {worst} radiates {power[worst] * p_max:.6g} W > p_max={p_max:.6g} W")
    X = np.zeros((K, L + 1, M), dtype=complex)
    X[:, :L, :] = Vn.reshape(K, L, M)
    X[:, L, :] = np.sqrt(np.clip(1.0 - power, 0.0, None) / K)
    return X.reshape((L + 1) * K, M)


def extract(X: np.ndarray, p_max: float, num_users: int) -> BeamMatrix:
    """Drop slack rows and rescale to watts: the physical beamformer (L*K, M)."""
    Xb = _blocks(X, num_users)
    K, L1, M = Xb.shape
    V = np.sqrt(p_max) * Xb[:, :L1 - 1, :].reshape(K * (L1 - 1), M)
    return BeamMatrix(V=V, normalized=False)


def lifted_cross_gains(X: np.ndarray, problem: LiftedProblem) -> np.ndarray:
    """``S[k, i] = sum_m h_hat_mk^H x_mi``; slack entries meet zeros in ``h_hat``."""
    return np.einsum("mkl,ilm->ki", problem.h_hat.conj(), _blocks(X, problem.num_users))


def update_mu(X: np.ndarray, problem: LiftedProblem) -> np.ndarray:
    """Optimal auxiliary variables for fixed beams: the current SINRs."""
    P = np.abs(lifted_cross_gains(X, problem)) ** 2
    signal, rest = _split(P, problem.noise_power)
    return signal / rest


def _split(P, noise_power):
    """Signal ``P[k, k]`` and interference-plus-noise, summed off the diagonal.

    Subtracting the signal from the full row sum would cancel most digits of
    the interference once it falls far below the signal.
    """
    signal = np.diag(P).copy()
    off = P.copy()
    np.fill_diagonal(off, 0.0)
    return signal, off.sum(axis=1) + noise_power


def _objective_parts(X, mu, problem):
    """Return (S, N_k, D_k, shifted) with ``reduced_objective = shifted - sum(1 + mu)``.

    ``shifted = sum_k (1 + mu_k) (D_k - N_k) / D_k`` avoids cancelling two
    large numbers when SINRs are high.
    """
    S = lifted_cross_gains(X, problem)
    P = np.abs(S) ** 2
    num, rest = _split(P, problem.noise_power)
    den = num + rest
    mu_t = 1.0 + np.asarray(mu, dtype=float)
    return S, num, den, float(np.sum(mu_t * rest / den))


def reduced_objective(X: np.ndarray, mu, problem: LiftedProblem) -> float:
    """``-sum_k (1 + mu_k) |S_kk|^2 / (sum_i |S_ki|^2 + sigma^2)`` (all users in the denominator)."""
    S = lifted_cross_gains(X, problem)
    P = np.abs(S) ** 2
    mu_t = 1.0 + np.asarray(mu, dtype=float)
    return float(-np.sum(mu_t * np.diag(P) / (P.sum(axis=1) + problem.noise_power)))


def lifted_target_projections(X: np.ndarray, problem: LiftedProblem) -> np.ndarray:
    """``Q[m, n, k] = a_hat_mn^H x_mk``."""
    return np.einsum("mnl,klm->mnk", problem.a_hat.conj(), _blocks(X, problem.num_users))


def sensing_constraints(X: np.ndarray, problem: LiftedProblem) -> np.ndarray:
    """``g_n = Gamma_n - lifted beampattern gain`` (watts); target n is served iff ``g_n <= 0``.

    With ``per_ap_sensing`` the result has M*N entries, AP-major: entry
    ``m * N + n`` asks AP m alone to deliver ``Gamma_n`` toward target n.
    """
    if problem.num_targets == 0:
        return np.zeros(0)
    Q = lifted_target_projections(X, problem)
    per_ap = np.sum(np.abs(Q) ** 2, axis=2)          # (M, N)
    if problem.per_ap_sensing:
        return (problem.gamma_th[None, :] - per_ap).reshape(-1)
    return problem.gamma_th - per_ap.sum(axis=0)


def sensing_constraint(X: np.ndarray, n: int, problem: LiftedProblem) -> float:
    if not 0 <= n < problem.num_targets:
        raise IndexError(f"target index {n} out of range")
    return float(sensing_constraints(X, problem)[n])


def dual_objective(V, mu, channels: ChannelSet, noise_power: float,
                   p_max: float | None = None) -> float:
    """Lagrangian-dual transform of the sum rate, in bits.

    Uses ``-mu + (1 + mu) g / (1 + g) == 1 - (1 + mu) / (1 + g)`` so that the
    value at ``mu = g`` carries no cancellation error.
    """
    g = sinrs(V, channels, noise_power, p_max)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("auxiliary variables must be nonnegative")
    terms = np.log1p(mu) + 1.0 - (1.0 + mu) / (1.0 + g)
    return float(np.sum(terms) / np.log(2.0))
