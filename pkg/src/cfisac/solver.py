"""ALMCI: augmented-Lagrangian Riemannian conjugate gradient beamforming.

Three nested loops. The outer fractional-programming loop refreshes the
auxiliary SINR variables ``mu``; the augmented-Lagrangian loop updates
multipliers, penalty and accuracy; the innermost Riemannian conjugate
gradient (RCG) loop minimises the augmented Lagrangian on the oblique
manifold with Armijo backtracking and Hestenes-Stiefel directions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import manifold as mf
from .config import ScenarioConfig, SolverOptions
from .fp import (
    LiftedProblem,
    _objective_parts,
    extract,
    lifted_target_projections,
    reduced_objective,
    sensing_constraints,
    update_mu,
)
from .scenario import BeamMatrix, ChannelSet, per_ap_power, sum_rate

__all__ = [
    "AlmState",
    "RcgResult",
    "SolveReport",
    "lagrangian",
    "euclidean_gradient",
    "riemannian_gradient",
    "rcg_inner_loop",
    "update_multipliers",
    "update_penalty",
    "solve",
    "gradient_check",
    "cost_surface",
]


@dataclass
class AlmState:
    lam: np.ndarray
    rho: float
    eps: float
    sigma: Optional[np.ndarray] = None


@dataclass
class RcgResult:
    X: np.ndarray
    iterations: int
    values: list            # augmented Lagrangian at every accepted iterate, starting point first
    grad_norms: list
    steps: list = field(default_factory=list)   # accepted step sizes alpha_i
    stalled: bool = False
    max_column_error: float = 0.0


@dataclass
class SolveReport:
    sum_rates: list = field(default_factory=list)        # after each outer iteration
    objectives: list = field(default_factory=list)       # reduced objective after each outer iteration
    alm: list = field(default_factory=list)              # one dict per ALM iteration
    rcg: list = field(default_factory=list)              # RcgResult-like dicts (values, grad_norms)
    initial_sum_rate: float = float("nan")
    outer_iterations: int = 0
    alm_iterations: int = 0
    rcg_iterations: int = 0
    max_column_error: float = 0.0
    max_violation: float = 0.0          # max_n (Gamma_n - p(theta_n))_+, watts
    per_ap_power: tuple = ()
    feasible: bool = True
    infeasible: bool = False            # violation persisted despite a large penalty growth
    stalled_runs: int = 0
    converged: bool = False
    wall_time: float = 0.0
    V: Optional[np.ndarray] = None
    X: Optional[np.ndarray] = None      # returned lifted point
    lam: Optional[np.ndarray] = None    # ALM state when that point was produced
    rho: float = float("nan")
    mu: Optional[np.ndarray] = None


# --------------------------------------------------------------------------
# augmented Lagrangian and its gradients

def _penalty_weights(g, lam, rho):
    return np.maximum(0.0, lam / rho + g)


def _lagrangian_shifted(X, lam, rho, mu, problem):
    """Augmented Lagrangian plus ``sum(1 + mu)``; same differences, no cancellation."""
    _, _, _, shifted = _objective_parts(X, mu, problem)
    if problem.num_targets:
        c = _penalty_weights(sensing_constraints(X, problem), lam, rho)
        shifted += 0.5 * rho * float(np.dot(c, c))
    return shifted


def lagrangian(X, lam, rho, mu, problem: LiftedProblem) -> float:
    """``f_hat(X) + rho/2 * sum_n max(0, lam_n / rho + g_n(X))**2``."""
    val = reduced_objective(X, mu, problem)
    if problem.num_targets:
        c = _penalty_weights(sensing_constraints(X, problem), np.asarray(lam, float), rho)
        val += 0.5 * rho * float(np.dot(c, c))
    return val


def euclidean_gradient(X, lam, rho, mu, problem: LiftedProblem) -> np.ndarray:
    """Ambient gradient ``G`` with ``dL(X)[Z] = Re <G, Z>`` for every direction ``Z``."""
    K = problem.num_users
    S, num, den, _ = _objective_parts(X, mu, problem)
    mu_t = 1.0 + np.asarray(mu, dtype=float)
    # coefficient of h_hat_mk in the block of beam i
    coef = (-2.0 * mu_t * (-num / den ** 2))[:, None] * S
    coef[np.arange(K), np.arange(K)] += -2.0 * mu_t / den * np.diag(S)
    G = np.einsum("ki,mkl->ilm", coef, problem.h_hat)
    if problem.num_targets:
        c = _penalty_weights(sensing_constraints(X, problem), np.asarray(lam, float), rho)
        if np.any(c > 0):
            Q = lifted_target_projections(X, problem)
            W = problem.constraint_weights(c)
            G = G - 2.0 * rho * np.einsum("mn,mnl,mnk->klm", W, problem.a_hat, Q)
    return G.reshape(X.shape)


def riemannian_gradient(X, lam, rho, mu, problem: LiftedProblem) -> np.ndarray:
    return mf.project_to_tangent(X, euclidean_gradient(X, lam, rho, mu, problem))


class _Evaluator:
    """Fast value/gradient of the shifted augmented Lagrangian for fixed ``lam``, ``rho``, ``mu``.

    Stacks user channels and target steering vectors per AP so that one
    batched product yields both ``S`` and ``Q``. The last evaluated point's
    products are cached, since the line search asks for a value and then a
    gradient at the same point. Agrees with :func:`lagrangian` and
    :func:`riemannian_gradient` up to rounding.
    """

    def __init__(self, lam, rho, mu, problem: LiftedProblem):
        self.K, self.N = problem.num_users, problem.num_targets
        B = np.concatenate([problem.h_hat, problem.a_hat], axis=1)    # (M, K+N, L+1)
        self.Bc = B.conj()
        self.Bt = np.ascontiguousarray(B.transpose(0, 2, 1))          # (M, L+1, K+N)
        self.lam = np.asarray(lam, dtype=float)
        self.rho = float(rho)
        self.mu_t = 1.0 + np.asarray(mu, dtype=float)
        self.problem = problem
        self.noise = problem.noise_power
        self.offdiag = ~np.eye(self.K, dtype=bool)
        self._key = None

    def _products(self, X):
        if self._key is not X:
            K = self.K
            Xm = X.reshape(K, -1, X.shape[1]).transpose(2, 1, 0)      # (M, L+1, K)
            P = self.Bc @ Xm                                           # (M, K+N, K)
            S = P[:, :K, :].sum(axis=0)
            A = np.abs(S) ** 2
            num = A.diagonal().copy()
            rest = np.where(self.offdiag, A, 0.0).sum(axis=1) + self.noise
            val = float(np.dot(self.mu_t, rest / (num + rest)))
            c = None
            if self.N:
                Q = P[:, K:, :]
                per_ap = (Q.real ** 2 + Q.imag ** 2).sum(axis=2)
                pr = self.problem
                if pr.per_ap_sensing:
                    g = (pr.gamma_th[None, :] - per_ap).reshape(-1)
                else:
                    g = pr.gamma_th - per_ap.sum(axis=0)
                c = np.maximum(0.0, self.lam / self.rho + g)
                val += 0.5 * self.rho * float(np.dot(c, c))
            self._key = X
            self._cache = (val, P, S, num, num + rest, c)
        return self._cache

    def value(self, X):
        return self._products(X)[0]

    def egrad(self, X):
        _, P, S, num, den, c = self._products(X)
        K = self.K
        coef = (2.0 * self.mu_t * num / den ** 2)[:, None] * S
        coef[np.arange(K), np.arange(K)] -= 2.0 * self.mu_t / den * S.diagonal()
        C = np.broadcast_to(coef, (P.shape[0], K, K))
        if c is not None and np.any(c > 0):
            W = self.problem.constraint_weights(c)
            C = np.concatenate([C, (-2.0 * self.rho * W)[:, :, None] * P[:, K:, :]], axis=1)
            G = self.Bt @ C                                            # (M, L+1, K)
        else:
            G = self.Bt[:, :, :K] @ C
        return G.transpose(2, 1, 0).reshape(X.shape)

    def rgrad(self, X):
        return mf.project_to_tangent(X, self.egrad(X))


# --------------------------------------------------------------------------
# inner loop

def _retract_with_norms(X, eta, alpha):
    Y = X + alpha * eta
    nrm = np.linalg.norm(Y, axis=0)
    if np.any(nrm <= np.finfo(float).tiny) or not np.all(np.isfinite(nrm)):
        raise mf.StepSizeError("retraction step produced a zero or non-finite column")
    return Y / nrm, nrm


def _armijo(value, grad, X, f, eta, slope, alpha, opts, demand=None):
    """Armijo backtracking, then a short derivative-guided refinement of the accepted step.

    Backtracking shrinks ``alpha`` (quadratic interpolation, safeguarded by
    ``armijo_shrink``) until ``L(R(X + alpha eta)) <= L(X) + c alpha slope``.
    The refinement then moves toward a zero of the directional derivative
    with secant steps inside a bracket, keeping only points that pass the same
    Armijo test and lower the value further. Conjugate directions need such
    near-exact steps when the Lagrangian is badly conditioned (high SINR).

    ``demand`` (default ``-slope``) is the decrease rate the sufficient-decrease
    test asks for: a step is accepted when ``L_new <= L - c * alpha * demand``.

    Returns ``(alpha, X_new, f_new, grad_new)`` or ``None`` after ``max_backtracks`` rejections.
    """
    c = opts.armijo_c
    demand = -slope if demand is None else demand
    for _ in range(opts.max_backtracks):
        try:
            Xn, nrm = _retract_with_norms(X, eta, alpha)
        except mf.StepSizeError:
            alpha *= opts.armijo_shrink
            continue
        if np.array_equal(Xn, X):
            return None         # step below rounding: shrinking further cannot help
        fn = value(Xn)
        # strict decrease: at the rounding floor "<=" would accept null steps forever
        if fn <= f - c * alpha * demand and fn < f:
            break
        curv = fn - f - slope * alpha
        if curv > 0 and np.isfinite(curv):
            aq = -slope * alpha * alpha / (2.0 * curv)
            alpha = min(max(aq, 0.1 * alpha), opts.armijo_shrink * alpha)
        else:
            alpha *= opts.armijo_shrink
    else:
        return None

    def deriv(G, nrm):
        # d/da L(R(X + a eta)); the Riemannian gradient already drops radial parts
        return float(np.sum(np.real(np.sum(G.conj() * eta, axis=0)) / nrm))

    gn = grad(Xn)
    best = (alpha, Xn, fn, gn)
    d = deriv(gn, nrm)
    lo, hi = (0.0, slope), None
    prev = (0.0, slope)
    if d < 0:
        lo = (alpha, d)
    else:
        hi = (alpha, d)
    for _ in range(opts.refine_steps):
        if abs(d) <= opts.curvature_c * abs(slope):
            break
        if hi is None:
            a0, d0 = prev
            a1, d1 = lo
            t = a1 - d1 * (a1 - a0) / (d1 - d0) if d1 > d0 else 4.0 * a1
            t = min(max(t, 1.5 * a1), 4.0 * a1)
        else:
            w = hi[0] - lo[0]
            if lo[1] is not None and hi[1] is not None and hi[1] > lo[1]:
                t = lo[0] - lo[1] * w / (hi[1] - lo[1])
            else:
                t = lo[0] + 0.5 * w
            t = min(max(t, lo[0] + 0.1 * w), hi[0] - 0.1 * w)
        try:
            Xt, nt = _retract_with_norms(X, eta, t)
        except mf.StepSizeError:
            break
        ft = value(Xt)
        if not (ft <= f - c * t * demand and ft < best[2]):
            if t < best[0]:
                lo = (t, None)
            else:
                hi = (t, None)
            continue
        gt = grad(Xt)
        d = deriv(gt, nt)
        best = (t, Xt, ft, gt)
        if d < 0:
            prev, lo = lo, (t, d)
        else:
            hi = (t, d)
    return best


def rcg_inner_loop(X0, lam, rho, mu, problem: LiftedProblem, tol: float,
                   opts: SolverOptions) -> RcgResult:
    """Riemannian conjugate gradient on the augmented Lagrangian for fixed ``lam``, ``rho``, ``mu``."""
    lam = np.asarray(lam, dtype=float)
    const = float(np.sum(1.0 + np.asarray(mu, dtype=float)))

    ev = _Evaluator(lam, rho, mu, problem)
    value, grad = ev.value, ev.rgrad

    X = X0
    f = value(X)
    g = grad(X)
    gn = mf.norm(g)
    values, norms, steps = [f - const], [gn], []
    eta = -g
    alpha_prev = slope_prev = None
    stalled = False
    col_err = mf.column_norm_error(X)
    it = 0
    while gn > tol and it < opts.max_rcg_iters:
        slope = mf.inner(g, eta)
        steepest = not slope < 0
        if steepest:
            eta, slope = -g, -gn * gn
        if alpha_prev is None:
            alpha = opts.alpha_init
        else:
            alpha = alpha_prev * slope_prev / slope
        # sufficient decrease measured against both the slope and ||g||^2
        step = _armijo(value, grad, X, f, eta, slope, alpha, opts, max(-slope, gn * gn))
        if step is None and not steepest:
            # conjugate direction failed: retry once along steepest descent
            eta, slope = -g, -gn * gn
            step = _armijo(value, grad, X, f, eta, slope, opts.alpha_init, opts)
        if step is None:
            stalled = True
            break
        alpha, Xn, fn, g_new = step
        steps.append(alpha)
        eta_t = mf.transport(X, Xn, eta)
        y = g_new - mf.transport(X, Xn, g)
        den = mf.inner(eta_t, y)
        beta = mf.inner(g_new, y) / den if abs(den) >= opts.hs_floor else 0.0
        if not beta > 0:
            beta = 0.0
        alpha_prev, slope_prev = alpha, slope
        X, f, g = Xn, fn, g_new
        gn = mf.norm(g)
        eta = -g + beta * eta_t
        col_err = max(col_err, mf.column_norm_error(X))
        values.append(f - const)
        norms.append(gn)
        it += 1
    return RcgResult(X=X, iterations=it, values=values, grad_norms=norms, steps=steps,
                     stalled=stalled, max_column_error=col_err)


# --------------------------------------------------------------------------
# multiplier and penalty updates

def update_multipliers(lam, rho: float, g, lam_min=0.0, lam_max=100.0) -> np.ndarray:
    return np.clip(np.asarray(lam, float) + rho * np.asarray(g, float), lam_min, lam_max)


def update_penalty(rho: float, sigma_prev, sigma_curr, tau: float, growth: float,
                   first_iteration: bool) -> float:
    if first_iteration or sigma_prev is None:
        return rho
    cur = float(np.max(np.abs(sigma_curr))) if np.size(sigma_curr) else 0.0
    prev = float(np.max(np.abs(sigma_prev))) if np.size(sigma_prev) else 0.0
    return rho if cur <= tau * prev else growth * rho


# --------------------------------------------------------------------------
# full algorithm

def _alm_loop(X, mu, state: AlmState, problem, opts, report, outer, keep_history):
    state.eps = opts.eps0
    sigma_prev = None
    sigma_tol = opts.kkt_rtol * float(np.max(problem.thresholds, initial=0.0))
    for j in range(opts.max_alm_iters):
        tol = max(state.eps, opts.inner_tol)
        res = rcg_inner_loop(X, state.lam, state.rho, mu, problem, tol, opts)
        Xn = res.X
        g = sensing_constraints(Xn, problem)
        rho_t = state.rho
        lam_next = update_multipliers(state.lam, rho_t, g, opts.lambda_min, opts.lambda_max)
        sigma = np.maximum(g, -lam_next / rho_t)
        eps_next = max(opts.eps_min, opts.eps_shrink * state.eps)
        # sigma at the inner solver's noise floor counts as satisfied: no penalty growth
        settled = float(np.max(np.abs(sigma), initial=0.0)) <= sigma_tol
        if settled:
            rho_next = rho_t
        else:
            rho_next = update_penalty(rho_t, sigma_prev, sigma, opts.tau, opts.rho_growth, j == 0)
        dist = float(np.linalg.norm(Xn - X))
        inner_ok = not res.stalled and res.grad_norms[-1] <= tol

        report.rcg_iterations += res.iterations
        report.alm_iterations += 1
        report.stalled_runs += int(res.stalled)
        report.max_column_error = max(report.max_column_error, res.max_column_error)
        if keep_history:
            report.rcg.append({"outer": outer, "alm": j, "values": res.values,
                               "grad_norms": res.grad_norms, "stalled": res.stalled,
                               "tol": tol})
        report.alm.append({"outer": outer, "alm": j, "rho": rho_t, "eps": state.eps,
                           "lam": lam_next.copy(), "max_violation": float(np.max(g, initial=0.0)),
                           "dist": dist, "rcg_iterations": res.iterations})

        X = Xn
        state.lam, state.rho, state.eps, state.sigma = lam_next, rho_next, eps_next, sigma
        sigma_prev = sigma
        if state.eps <= opts.eps_min and (dist < opts.d_min or (settled and inner_ok)):
            break
    return X


def solve(config: ScenarioConfig, channels: ChannelSet, seed: Optional[int] = None,
          X0: Optional[np.ndarray] = None, keep_history: bool = True):
    """Run ALMCI on one channel drop; returns ``(BeamMatrix, SolveReport)``.

    ``X0`` overrides the random initial lifted point drawn from ``seed``
    (default: the scenario seed).
    """
    start = time.perf_counter()
    opts = config.solver
    problem = LiftedProblem.build(channels, config.gamma_th, config.noise_power, config.p_max,
                                  per_ap_sensing=config.sensing_mode == "per_ap")
    K, N = problem.num_users, problem.num_constraints
    if X0 is None:
        rng = np.random.default_rng(config.rng_seed if seed is None else seed)
        X0 = mf.random_point(problem.shape, rng)
    X = X0
    mu = update_mu(X, problem)
    report = SolveReport(initial_sum_rate=_rate(X, channels, config))
    state = AlmState(lam=np.zeros(N), rho=opts.rho0, eps=opts.eps0)
    tol = opts.violation_rtol * problem.thresholds
    prev = report.initial_sum_rate
    best = None
    for t in range(opts.max_outer_iters):
        if opts.reset_alm_per_outer:
            state = AlmState(lam=np.zeros(N), rho=opts.rho0, eps=opts.eps0)
        X = _alm_loop(X, mu, state, problem, opts, report, t, keep_history)
        report.objectives.append(reduced_objective(X, mu, problem))
        prev_mu = mu
        mu = update_mu(X, problem)
        rate = _rate(X, channels, config)
        report.sum_rates.append(rate)
        report.outer_iterations = t + 1
        viol = sensing_constraints(X, problem)
        feasible = bool(np.all(viol <= tol))
        key = (feasible, rate if feasible else -float(np.max(viol - tol, initial=0.0)))
        if best is None or key >= best[0]:
            best = (key, X, state.lam.copy(), state.rho, prev_mu)
        if abs(rate - prev) < opts.outer_tol:
            report.converged = True
            break
        prev = rate
    _, X, report.lam, report.rho, report.mu = best
    report.X = X
    V = extract(X, config.p_max, K)
    viol = sensing_constraints(X, problem)
    report.max_violation = float(np.max(np.maximum(viol, 0.0), initial=0.0))
    report.feasible = bool(np.all(viol <= tol))
    report.infeasible = (not report.feasible
                         and state.rho >= opts.infeasible_rho_ratio * opts.rho0)
    report.per_ap_power = tuple(per_ap_power(V, m) for m in range(V.V.shape[1]))
    report.V = V.V
    report.wall_time = time.perf_counter() - start
    return V, report


def _rate(X, channels, config):
    return sum_rate(extract(X, config.p_max, channels.num_users), channels, config.noise_power)


# --------------------------------------------------------------------------
# diagnostics

def _random_tangent(X, rng):
    Z = rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape)
    Z = mf.project_to_tangent(X, Z)
    return Z / mf.norm(Z)


def gradient_check(X, lam, rho, mu, problem: LiftedProblem, num_dirs: int = 20,
                   rng: Optional[np.random.Generator] = None, step: float = 1e-6,
                   grad_fn: Optional[Callable] = None) -> float:
    """Max relative gap between ``<grad, Z>`` and a central difference of ``L o retract``.

    ``grad_fn`` replaces :func:`riemannian_gradient` (used to calibrate the check).
    """
    if num_dirs < 1:
        raise ValueError("num_dirs must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    lam = np.asarray(lam, dtype=float)
    grad = (grad_fn or riemannian_gradient)(X, lam, rho, mu, problem)
    worst = 0.0
    for _ in range(num_dirs):
        Z = _random_tangent(X, rng)
        plus = _lagrangian_shifted(mf.retract(X, Z, step), lam, rho, mu, problem)
        minus = _lagrangian_shifted(mf.retract(X, Z, -step), lam, rho, mu, problem)
        fd = (plus - minus) / (2.0 * step)
        an = mf.inner(grad, Z)
        worst = max(worst, abs(an - fd) / (abs(an) + 1e-15))
    return worst


def cost_surface(X, lam, rho, mu, problem: LiftedProblem, t1, t2,
                 rng: Optional[np.random.Generator] = None):
    """Augmented Lagrangian on ``retract(X, a d1 + b d2)`` over the grid ``t1 x t2``.

    ``d1``, ``d2`` are orthonormal tangent directions at ``X`` built from random
    ambient matrices. Returns ``(values, d1, d2)`` with ``values[i, j]`` at ``(t1[i], t2[j])``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lam = np.asarray(lam, dtype=float)
    d1 = _random_tangent(X, rng)
    d2 = _random_tangent(X, rng)
    d2 = d2 - mf.inner(d1, d2) * d1
    d2 = d2 / mf.norm(d2)
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    out = np.empty((t1.size, t2.size))
    for i, a in enumerate(t1):
        for j, b in enumerate(t2):
            out[i, j] = lagrangian(mf.retract(X, a * d1 + b * d2, 1.0), lam, rho, mu, problem)
    return out, d1, d2
