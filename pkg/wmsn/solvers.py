# wmsn/solvers.py
"""
Per-slot subproblem solvers and the dual gradient-projection update.

The energy, rate and distortion subproblems are separable per node and are
written elementwise over numpy arrays, so they accept scalars or vectors.
Linear subproblems are bang-bang; a coefficient of exactly zero selects the
zero action.
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .entropy import LOG2_2PIE
from .network import Network
from .queues import ControlDecision, total_consumption
from .utility import Utility

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


# -----------------------------------------------------------
# Energy management
# -----------------------------------------------------------
def solve_eh_harvest(energy, theta, harvestable):
    """Store as much as the perturbed battery allows: e = min(h, theta - E)."""
    room = np.maximum(np.asarray(theta, dtype=float) - energy, 0.0)
    return np.where(np.asarray(energy) - theta < 0, np.minimum(harvestable, room), 0.0)


def solve_me_harvest_charge(energy, theta, lam, harvestable, g_max):
    e = np.where(np.asarray(energy) - theta < 0, harvestable, 0.0)
    g = np.where(np.asarray(energy) - theta + lam < 0, g_max, 0.0)
    return e, g


def _purchase(price, lam, v, varpi1, varpi2, y_max):
    return np.where(v * (1.0 - varpi1) * varpi2 * np.asarray(price) - lam < 0, y_max, 0.0)


def solve_me_discharge_purchase(energy, theta, lam, price, *, v, varpi1, varpi2, d_max, y_max):
    d = np.where(np.asarray(energy) - theta + lam > 0, d_max, 0.0)
    y = _purchase(price, lam, v, varpi1, varpi2, y_max)
    return d, y


def solve_eg(energy, theta, lam, price, *, v, varpi1, varpi2, g_max, d_max, y_max):
    coef = np.asarray(energy) - theta + lam
    g = np.where(coef < 0, g_max, 0.0)
    d = np.where(coef > 0, d_max, 0.0)
    y = _purchase(price, lam, v, varpi1, varpi2, y_max)
    return g, d, y


# -----------------------------------------------------------
# Source coding
# -----------------------------------------------------------
def distortion_objective(dist, rho_sum, *, v, varpi1, utility: Utility):
    """V varpi1 U(D) + rho_sum log2(D)."""
    return v * varpi1 * utility.value(dist) + rho_sum * np.log2(dist)


def _bounded_distortion(rho_sum: float, v: float, varpi1: float, utility: Utility, d_min: float, d_max: float, tol: float) -> float:
    if d_max - d_min <= tol:
        return d_min
    res = minimize_scalar(
        lambda d: -float(distortion_objective(d, rho_sum, v=v, varpi1=varpi1, utility=utility)),
        bounds=(d_min, d_max), method="bounded", options={"xatol": tol},
    )
    candidates = [d_min, float(res.x), d_max]
    values = [float(distortion_objective(c, rho_sum, v=v, varpi1=varpi1, utility=utility)) for c in candidates]
    return candidates[int(np.argmax(values))]


def solve_distortion(rho_sum, *, v, varpi1, utility: Utility, d_min, d_max, tol: float = 1e-8):
    """
    Maximise V varpi1 U(D) + rho_sum log2(D) over [d_min, d_max].

    For U = ln(1 - D) the stationary point is R / (V varpi1 + R) with
    R = rho_sum / ln 2; other utilities use a bounded scalar search.
    """
    rho = np.asarray(rho_sum, dtype=float)
    if utility.closed_form:
        r_eff = rho / LN2
        denom = v * varpi1 + r_eff
        with np.errstate(divide="ignore", invalid="ignore"):
            stationary = np.where(denom > 0, r_eff / np.where(denom > 0, denom, 1.0), 0.0)
        return np.clip(stationary, d_min, d_max)
    flat = np.broadcast_arrays(rho, np.asarray(d_min, dtype=float), np.asarray(d_max, dtype=float))
    out = np.array([
        _bounded_distortion(float(r), v, varpi1, utility, float(lo), float(hi), tol)
        for r, lo, hi in zip(*(a.ravel() for a in flat))
    ]).reshape(flat[0].shape)
    return out if out.ndim else float(out)


def solve_source_rate(rho_sum, queue_sum, a_n, *, sense_cost, r_max):
    """r = R_max iff rho_sum - sum_d Q_n^{fnd} + A_n P_S > 0."""
    coef = np.asarray(rho_sum) - queue_sum + np.asarray(a_n) * sense_cost
    return np.where(coef > 0, r_max, 0.0)


# -----------------------------------------------------------
# Dual variables
# -----------------------------------------------------------
@dataclass(frozen=True)
class DualState:
    lam: np.ndarray  # (nodes,), zero off the grid-connected nodes
    rho: np.ndarray  # (subsets,)
    kappa_lambda: float = 0.5
    kappa_rho: float = 0.5

    @classmethod
    def initial(cls, net: Network, kappa_lambda: float = 0.5, kappa_rho: float = 0.5) -> "DualState":
        return cls(lam=np.zeros(net.num_nodes), rho=np.zeros(net.num_subsets), kappa_lambda=kappa_lambda, kappa_rho=kappa_rho)

    def step_sizes(self, iteration: int):
        scale = 1.0 / math.sqrt(iteration + 1)
        return self.kappa_lambda * scale, self.kappa_rho * scale


def lambda_gradient(net: Network, decision: ControlDecision, ptot: np.ndarray = None) -> np.ndarray:
    """dL/dlambda_n = g - d + p^Total - y on grid nodes, 0 elsewhere."""
    if ptot is None:
        ptot = total_consumption(net, decision)
    grad = decision.g - decision.d + ptot - decision.y
    return np.where(net.has_grid, grad, 0.0)


def rho_gradient(net: Network, decision: ControlDecision) -> np.ndarray:
    """dL/drho_m = H_m - log2((2 pi e)^|S| prod D) - sum_{n in S} r."""
    dist = decision.dist[net.subset_session]  # (subsets, nodes)
    with np.errstate(divide="ignore"):
        log_d = np.where(net.subset_members > 0, np.log2(np.where(net.subset_members > 0, dist, 1.0)), 0.0)
    log_volume = net.subset_size * LOG2_2PIE + log_d.sum(axis=1)
    rates = (decision.r[net.subset_session] * net.subset_members).sum(axis=1)
    return net.subset_entropy - log_volume - rates


def dual_update(net: Network, dual: DualState, decision: ControlDecision, iteration: int = 0, ptot: np.ndarray = None) -> DualState:
    """One projected-subgradient step with kappa0 / sqrt(i + 1)."""
    k_lam, k_rho = dual.step_sizes(iteration)
    lam = np.where(net.has_grid, np.maximum(dual.lam + k_lam * lambda_gradient(net, decision, ptot), 0.0), 0.0)
    rho = np.maximum(dual.rho + k_rho * rho_gradient(net, decision), 0.0)
    return replace(dual, lam=lam, rho=rho)
