# wmsn/power.py
"""
Transmit power allocation by block coordinate ascent in the log-power domain.

Maximises sum_l W*_l C~_l + A_{tx(l)} p_l subject to sum_b p_nb <= P_n^max.
Each block is one transmitter's outgoing links with positive weight; a block
is improved by projected gradient steps with backtracking, then compared
against switching the whole block off. Only improving moves are accepted, so
the objective never decreases across sweeps.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .models import AccessProbabilities
from .network import EnvironmentState, Network, capacity_from_sinr, cross_gains, success_probabilities

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
# lowest log-power tried relative to P_max before a block is switched off
LOG_FLOOR = -30.0


@dataclass
class PowerResult:
    log_powers: np.ndarray
    objective: float
    sweeps: int
    converged: bool
    history: List[float] = field(default_factory=list)

    @property
    def powers(self) -> np.ndarray:
        return np.exp(self.log_powers)


class _PowerProblem:
    """Objective and gradient with the slot's gains frozen."""

    def __init__(self, net: Network, w_star: np.ndarray, a: np.ndarray, env: EnvironmentState, access: Optional[AccessProbabilities]):
        self.net = net
        self.w = np.asarray(w_star, dtype=float)
        self.cost = np.asarray(a, dtype=float)[net.tx]
        self.alpha = net.alpha if access is None else success_probabilities(net, access)
        self.own = env.link_gains(net)
        self.cross = cross_gains(net, env, access)
        p = net.params
        self.bw = p.BW
        self.x_max = p.X_max
        self.delta = p.delta if net.config.enforce_linear_capacity_bound else None

    def _terms(self, log_p: np.ndarray):
        power = np.exp(log_p)
        den = self.net.noise + self.cross @ power
        gamma = self.own * power / den
        cap = capacity_from_sinr(self.alpha, gamma, self.bw, power=power, delta=self.delta, x_max=self.x_max)
        return power, den, gamma, cap

    def objective(self, log_p: np.ndarray) -> float:
        power, _, _, cap = self._terms(log_p)
        return float(self.w @ cap + self.cost @ power)

    def gradient(self, log_p: np.ndarray) -> np.ndarray:
        power, den, gamma, cap = self._terms(log_p)
        log_cap = self.bw * self.alpha * np.log2(np.maximum(gamma, 1.0))
        lin_cap = self.delta * self.bw * power if self.delta is not None else np.full_like(power, np.inf)
        log_active = (gamma > 1.0) & (log_cap <= lin_cap) & (log_cap < self.x_max)
        lin_active = ~log_active & (lin_cap < self.x_max) & (cap > 0)
        n = power.size
        jac = (np.where(log_active, self.bw * self.alpha / LN2, 0.0)[:, None]
               * (np.eye(n) - self.cross * power[None, :] / den[:, None]))
        jac[lin_active] = 0.0
        idx = np.flatnonzero(lin_active)
        jac[idx, idx] = lin_cap[idx]
        return self.w @ jac + self.cost * power


def _project(block: np.ndarray, p_max: float) -> np.ndarray:
    """Scale the block's powers down to the node budget, then floor them."""
    cap = math.log(p_max)
    block = np.minimum(block, cap)
    total = logsumexp(block)
    if total > cap:
        block = block - (total - cap)
    return np.maximum(block, cap + LOG_FLOOR)


def _solve_block(problem: _PowerProblem, log_p: np.ndarray, obj: float, idx: np.ndarray, p_max: float, inner_iterations: int):
    start = log_p.copy()
    start[idx] = _project(np.where(np.isfinite(log_p[idx]), log_p[idx], math.log(p_max / idx.size)), p_max)
    best, best_obj = start, problem.objective(start)
    step = 1.0
    for _ in range(inner_iterations):
        grad = problem.gradient(best)[idx]
        scale = np.max(np.abs(grad))
        if scale == 0.0:
            break
        direction = grad / max(1.0, scale)
        improved = False
        while step > 1e-9:
            cand = best.copy()
            cand[idx] = _project(best[idx] + step * direction, p_max)
            cand_obj = problem.objective(cand)
            if cand_obj > best_obj:
                best, best_obj, improved = cand, cand_obj, True
                step = min(step * 2.0, 8.0)
                break
            step *= 0.5
        if not improved:
            break

    off = log_p.copy()
    off[idx] = -np.inf
    off_obj = problem.objective(off)
    # ties go to switching off, then to the incoming point
    choices = [(off_obj, 2, off), (obj, 1, log_p), (best_obj, 0, best)]
    top = max(choices, key=lambda c: (c[0], c[1]))
    return top[2], top[0]


def solve_power_allocation(
    net: Network,
    w_star: np.ndarray,
    a: np.ndarray,
    env: EnvironmentState,
    access: Optional[AccessProbabilities] = None,
    log_p0: Optional[np.ndarray] = None,
    max_sweeps: int = 200,
    tol: float = 1e-6,
    inner_iterations: int = 40,
) -> PowerResult:
    """Cyclic BCD over transmitters; returns the best iterate even without convergence."""
    problem = _PowerProblem(net, w_star, a, env, access)
    log_p = np.full(net.num_links, -np.inf)
    if log_p0 is not None:
        log_p = np.where(problem.w > 0, np.asarray(log_p0, dtype=float), -np.inf)
    blocks = []
    for n in range(net.num_nodes):
        idx = net.out_links[n][problem.w[net.out_links[n]] > 0]
        if idx.size:
            blocks.append((idx, float(net.p_max[n])))
            block = log_p[idx]
            if np.isfinite(block).any():
                excess = logsumexp(block) - math.log(net.p_max[n])
                if excess > 0:
                    log_p[idx] = block - excess

    obj = problem.objective(log_p)
    history = [obj]
    if not blocks:
        return PowerResult(log_powers=log_p, objective=obj, sweeps=0, converged=True, history=history)

    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for idx, p_max in blocks:
            log_p, obj = _solve_block(problem, log_p, obj, idx, p_max, inner_iterations)
        history.append(obj)
        if history[-1] - history[-2] < tol:
            converged = True
            break
    if not converged:
        logger.warning("Power allocation stopped after %d sweeps without converging (objective %.6g)", sweeps, obj)
    return PowerResult(log_powers=log_p, objective=obj, sweeps=sweeps, converged=converged, history=history)


def power_objective(net: Network, log_p: np.ndarray, w_star: np.ndarray, a: np.ndarray, env: EnvironmentState, access: Optional[AccessProbabilities] = None) -> float:
    return _PowerProblem(net, w_star, a, env, access).objective(np.asarray(log_p, dtype=float))
