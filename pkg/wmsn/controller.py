# wmsn/controller.py
"""
Derived constants of the drift-plus-penalty controller.

compute_perturbations() gathers everything into LyapunovParams: beta, sigma,
epsilon, the per-node perturbations theta, the drift constant B (and the
objective gap B~/V), and the runtime bounds the checkers assert. The node
coefficient A_n and the backpressure link weights are also computed here.
"""

import logging
import math
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from .errors import ConfigError, SolverError
from .models import NetworkConfig, PowerClass, SessionSpec
from .network import Network
from .queues import DataQueueBank, EnergyQueueBank
from .utility import Utility, get_utility

logger = logging.getLogger(__name__)


class LyapunovParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    v: float
    beta: float
    sigma: float
    epsilon: float
    delta: float
    n_s: int
    n_d: int
    l_max: int
    x_max: float
    r_max: float
    b_q: float
    b_e: Dict[str, float]
    b_const: float
    b_tilde: float
    objective_gap: float
    theta: Dict[str, float]
    theta_eh: Dict[str, float]
    theta_eg: Dict[str, float]
    theta_em: Dict[str, float]
    theta_overridden: bool = False
    p_total_max: Dict[str, float]
    power_class: Dict[str, PowerClass]
    d_max: Dict[str, float]
    energy_bound: Dict[str, float]
    battery_capacity: Dict[str, float]
    q_bound: float
    rho_bound: float
    lambda_bound: float
    data_gate: float

    def theta_vector(self, net: Network) -> np.ndarray:
        return np.array([self.theta.get(n, 0.0) for n in net.nodes])


# -----------------------------------------------------------
# Scalar constants
# -----------------------------------------------------------
def beta_grid_sup(utility: Utility, d_min: float, d_max: float, points: int = 20001) -> float:
    """Grid sup of (U(D) - U(D_max)) / (ln D_max - ln D) over [D_min, D_max)."""
    width = d_max - d_min
    grid = np.linspace(d_min, d_max, points)[:-1]
    if width > 0:
        # geometric refinement towards D_max where the sup sits for concave U
        grid = np.concatenate([grid, d_max - width * np.logspace(-9, -1, 81)])
    grid = grid[(grid >= d_min) & (grid < d_max)]
    if grid.size == 0:
        return -math.inf
    ratios = (utility.value(grid) - utility.value(d_max)) / (math.log(d_max) - np.log(grid))
    return float(np.max(ratios))


def beta_endpoint(utility: Utility, d_max: float) -> float:
    """Limit of the ratio at D -> D_max: -U'(D_max) * D_max."""
    return float(-utility.derivative(d_max) * d_max)


def compute_beta(session: SessionSpec, utility: Optional[Utility] = None, varpi1: float = 0.7) -> float:
    utility = utility or get_utility(session.utility)
    sup = max(beta_grid_sup(utility, session.d_min, session.d_max_distortion), beta_endpoint(utility, session.d_max_distortion))
    if not math.isfinite(sup):
        raise SolverError(f"session {session.id}: utility ratio supremum is not finite")
    return varpi1 * max(sup, 0.0)


def compute_sigma(config: NetworkConfig) -> float:
    sigma = min([s.sense_cost for s in config.sessions] + [n.p_recv_cost for n in config.nodes] + [1.0])
    if sigma <= 0:
        raise ConfigError("sigma must be positive: every sensing and reception cost must be > 0")
    return sigma


def compute_epsilon(config: NetworkConfig) -> float:
    r_max = max(s.r_max for s in config.sessions)
    return config.l_max * config.parameters.X_max + r_max


def p_total_max(net: Network) -> np.ndarray:
    """P^Total_max per node: full-rate sensing + full power + full-rate reception."""
    sensing = (net.sense_cost[:, None] * net.r_max[:, None] * net.source_mask).sum(axis=0)
    return sensing + net.p_max + net.p_recv * net.l_max * net.params.X_max


# -----------------------------------------------------------
# Perturbations
# -----------------------------------------------------------
def compute_perturbations(net: Network, v: float, theta_override: Optional[bool] = None) -> LyapunovParams:
    """All derived constants for one value of V."""
    if v < 0:
        raise ConfigError("V must be nonnegative")
    config = net.config
    p = net.params
    varpi1 = p.varpi1
    beta = max(compute_beta(s, u, varpi1) for s, u in zip(net.sessions, net.utilities))
    sigma = compute_sigma(config)
    epsilon = compute_epsilon(config)
    n_s, n_d = net.n_s, net.n_d
    r_max = float(net.r_max.max())
    ptot = p_total_max(net)

    coef_eh = max(1.0 / sigma, p.delta * p.BW) * n_s * n_d * beta
    coef_eg = beta / sigma
    use_override = config.use_theta_override if theta_override is None else theta_override
    override = config.theta_override if use_override else None
    if use_override and override is None:
        raise ConfigError("theta override requested but the config has no theta_override block")

    def _theta(cls: PowerClass, default: Tuple[float, float]) -> Tuple[float, float]:
        if override is not None and getattr(override, cls.value) is not None:
            return getattr(override, cls.value)
        return default

    theta: Dict[str, float] = {}
    theta_eh: Dict[str, float] = {}
    theta_eg: Dict[str, float] = {}
    theta_em: Dict[str, float] = {}
    energy_bound: Dict[str, float] = {}
    b_e: Dict[str, float] = {}
    for i, node in enumerate(net.nodes):
        spec = net.specs[node]
        cls = spec.power_class
        if cls == PowerClass.EH:
            a, b = _theta(cls, (coef_eh, ptot[i]))
            theta[node] = theta_eh[node] = a * v + b
            energy_bound[node] = theta[node]
            b_e[node] = 0.5 * spec.h_max ** 2 + 0.5 * ptot[i] ** 2
        elif cls == PowerClass.EG:
            a, b = _theta(cls, (coef_eg, net.d_max[i]))
            theta[node] = theta_eg[node] = a * v + b
            energy_bound[node] = theta[node] + net.g_max[i]
            b_e[node] = 0.5 * net.g_max[i] ** 2 + 0.5 * net.d_max[i] ** 2
        elif cls == PowerClass.ME:
            a, b = _theta(cls, (coef_eg, net.d_max[i]))
            theta[node] = theta_em[node] = a * v + b
            energy_bound[node] = theta[node] + net.g_max[i] + spec.h_max
            b_e[node] = 0.5 * (spec.h_max + net.g_max[i]) ** 2 + 0.5 * net.d_max[i] ** 2

    l_max, x_max = net.l_max, p.X_max
    b_q = 1.5 * l_max ** 2 * x_max ** 2 + 0.5 * r_max ** 2
    b_const = net.num_nodes * net.num_commodities * b_q + sum(b_e.values())
    b_tilde = b_const + net.num_nodes * net.num_sessions * n_s * n_d * epsilon * l_max * x_max

    battery = {n: energy_bound[n] for n in energy_bound}
    for node, spec in net.specs.items():
        if spec.battery_capacity is not None and node in battery:
            if spec.battery_capacity < energy_bound[node]:
                logger.warning("Node %s battery_capacity %.6g is below the guaranteed bound %.6g", node, spec.battery_capacity, energy_bound[node])
            battery[node] = spec.battery_capacity

    params = LyapunovParams(
        v=v, beta=beta, sigma=sigma, epsilon=epsilon, delta=p.delta,
        n_s=n_s, n_d=n_d, l_max=l_max, x_max=x_max, r_max=r_max,
        b_q=b_q, b_e=b_e, b_const=b_const, b_tilde=b_tilde,
        objective_gap=b_tilde / v if v > 0 else math.inf,
        theta=theta, theta_eh=theta_eh, theta_eg=theta_eg, theta_em=theta_em,
        theta_overridden=override is not None,
        p_total_max={n: float(ptot[i]) for i, n in enumerate(net.nodes)},
        power_class={n: net.specs[n].power_class for n in net.nodes},
        d_max={n: float(net.d_max[i]) for i, n in enumerate(net.nodes)},
        energy_bound=energy_bound, battery_capacity=battery,
        q_bound=beta * v + r_max,
        rho_bound=beta * v,
        lambda_bound=beta * v / sigma,
        data_gate=l_max * x_max,
    )
    if p.beta is not None and not math.isclose(p.beta, beta, rel_tol=1e-6):
        logger.warning("Configured beta %.6g differs from derived beta %.6g; using the derived value", p.beta, beta)
    if p.sigma is not None and not math.isclose(p.sigma, sigma, rel_tol=1e-9):
        logger.warning("Configured sigma %.6g differs from derived sigma %.6g; using the derived value", p.sigma, sigma)
    logger.info(
        "Derived constants for V=%g: beta=%.6g sigma=%.6g epsilon=%.6g B=%.6g B~/V=%.6g",
        v, beta, sigma, epsilon, b_const, params.objective_gap,
    )
    return params


# -----------------------------------------------------------
# Per-slot coefficients
# -----------------------------------------------------------
def node_coefficients(net: Network, energy: np.ndarray, lam: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """A_n = 1{EH}(E - theta) - 1{EG or ME} lambda; zero for EXT."""
    return np.where(net.is_eh, energy - theta, np.where(net.has_grid, -lam, 0.0))


def compute_A(net: Network, node: str, energy_bank: EnergyQueueBank, lam: np.ndarray, params: LyapunovParams) -> float:
    a = node_coefficients(net, energy_bank.e, lam, params.theta_vector(net))
    return float(a[net.node_index[node]])


def link_weight_matrix(net: Network, data: np.ndarray, a: np.ndarray, epsilon: float) -> Tuple[np.ndarray, np.ndarray]:
    """(links, sessions) arrays w and W = [w - N_s^f N_d^f eps]^+."""
    diff = data[net.tx] - data[net.rx]  # (links, commodities)
    w = np.zeros((net.num_links, net.num_sessions))
    for f, comms in enumerate(net.session_comms):
        w[:, f] = diff[:, comms].sum(axis=1)
    w += (a * net.p_recv)[net.rx][:, None]
    big_w = np.maximum(w - net.pair_count[None, :] * epsilon, 0.0)
    return w, big_w


def link_weights(net: Network, link: Tuple[str, str], session: str, data_bank: DataQueueBank, a: np.ndarray, params: LyapunovParams) -> Tuple[float, float]:
    w, big_w = link_weight_matrix(net, data_bank.q, a, params.epsilon)
    i, f = net.link_index[link], net.session_ids.index(session)
    return float(w[i, f]), float(big_w[i, f])
