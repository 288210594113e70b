# wmsn/verify.py
"""
Brute-force oracles and runtime bound checkers.

Nothing here calls the solver routines to compute a reference: each oracle
evaluates its own copy of the subproblem objective on a grid, and the
Lagrangian used for finite differences is written out term by term.
The checkers read trace rows (column names as in wmsn.traces) so the same
code audits a live slot and a trace file read back from disk.
"""

import logging
import math
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from . import power as power_mod
from . import solvers
from .controller import LyapunovParams
from .models import PowerClass, Violation
from .network import Network, sinr_all
from .traces import TraceLayout
from .utility import Utility

logger = logging.getLogger(__name__)

LOG2_2PIE = math.log2(2.0 * math.pi * math.e)

TOLERANCES = {
    "eh_harvest": 1e-9,
    "me_harvest_charge": 1e-9,
    "me_discharge_purchase": 1e-9,
    "eg": 1e-9,
    "source_rate": 1e-9,
    "distortion": 1e-6,
    "power": 1e-3,
}


class OracleReport(BaseModel):
    kind: str
    instance: Dict[str, Any]
    solver_value: float
    oracle_value: float
    gap: float
    tolerance: float
    passed: bool


# -----------------------------------------------------------
# Grid helpers
# -----------------------------------------------------------
def _axis(lo: float, hi: float, resolution: float, cap: int = 100001) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    count = min(int(math.ceil((hi - lo) / resolution)) + 1, cap)
    return np.linspace(lo, hi, max(count, 2))


def _grid_max(objective: Callable[..., np.ndarray], bounds: Sequence[Tuple[float, float]], resolution: float, cap: int, refine: bool) -> Tuple[float, Tuple[float, ...]]:
    axes = [_axis(lo, hi, resolution, cap) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    values = objective(*mesh)
    best = np.unravel_index(int(np.nanargmax(values)), values.shape)
    point = tuple(float(axis[i]) for axis, i in zip(axes, best))
    best_value = float(values[best])
    if refine:
        local = []
        for (lo, hi), axis, x in zip(bounds, axes, point):
            step = axis[1] - axis[0] if axis.size > 1 else 0.0
            local.append(np.linspace(max(lo, x - step), min(hi, x + step), 201) if step else np.array([x]))
        mesh = np.meshgrid(*local, indexing="ij")
        values = objective(*mesh)
        fine = np.unravel_index(int(np.nanargmax(values)), values.shape)
        if float(values[fine]) > best_value:
            best_value = float(values[fine])
            point = tuple(float(axis[i]) for axis, i in zip(local, fine))
    return best_value, point


# -----------------------------------------------------------
# Subproblem objectives (maximisation form)
# -----------------------------------------------------------
def _purchase_coef(inst: Mapping[str, float]) -> float:
    return inst["v"] * (1.0 - inst["varpi1"]) * inst["varpi2"] * inst["price"] - inst["lam"]


def _oracle_eh(inst):
    room = max(0.0, min(inst["harvestable"], inst["theta"] - inst["energy"]))
    coef = inst["energy"] - inst["theta"]
    obj = lambda e: -coef * e
    solver = float(solvers.solve_eh_harvest(inst["energy"], inst["theta"], inst["harvestable"]))
    return obj(solver), obj, [(0.0, room)]


def _oracle_me_charge(inst):
    c_e = inst["energy"] - inst["theta"]
    c_g = c_e + inst["lam"]
    obj = lambda e, g: -(c_e * e + c_g * g)
    e, g = solvers.solve_me_harvest_charge(inst["energy"], inst["theta"], inst["lam"], inst["harvestable"], inst["g_max"])
    return obj(float(e), float(g)), obj, [(0.0, inst["harvestable"]), (0.0, inst["g_max"])]


def _oracle_me_discharge(inst):
    c_d = inst["energy"] - inst["theta"] + inst["lam"]
    c_y = _purchase_coef(inst)
    obj = lambda d, y: c_d * d - c_y * y
    d, y = solvers.solve_me_discharge_purchase(
        inst["energy"], inst["theta"], inst["lam"], inst["price"],
        v=inst["v"], varpi1=inst["varpi1"], varpi2=inst["varpi2"], d_max=inst["d_max"], y_max=inst["y_max"],
    )
    return obj(float(d), float(y)), obj, [(0.0, inst["d_max"]), (0.0, inst["y_max"])]


def _oracle_eg(inst):
    c = inst["energy"] - inst["theta"] + inst["lam"]
    c_y = _purchase_coef(inst)
    obj = lambda g, d, y: -c * g + c * d - c_y * y
    g, d, y = solvers.solve_eg(
        inst["energy"], inst["theta"], inst["lam"], inst["price"],
        v=inst["v"], varpi1=inst["varpi1"], varpi2=inst["varpi2"],
        g_max=inst["g_max"], d_max=inst["d_max"], y_max=inst["y_max"],
    )
    return obj(float(g), float(d), float(y)), obj, [(0.0, inst["g_max"]), (0.0, inst["d_max"]), (0.0, inst["y_max"])]


def _oracle_source_rate(inst):
    c = inst["rho_sum"] - inst["queue_sum"] + inst["a"] * inst["sense_cost"]
    obj = lambda r: c * r
    r = float(solvers.solve_source_rate(inst["rho_sum"], inst["queue_sum"], inst["a"], sense_cost=inst["sense_cost"], r_max=inst["r_max"]))
    return obj(r), obj, [(0.0, inst["r_max"])]


def _oracle_distortion(inst):
    utility: Utility = inst["utility"]
    k = inst["v"] * inst["varpi1"]
    rho = inst["rho_sum"]
    obj = lambda dist: k * utility.value(dist) + rho * np.log(dist) / math.log(2.0)
    solver = float(solvers.solve_distortion(
        rho, v=inst["v"], varpi1=inst["varpi1"], utility=utility, d_min=inst["d_min"], d_max=inst["d_max"],
    ))
    return float(obj(solver)), obj, [(inst["d_min"], inst["d_max"])]


def _scalar_capacities(net: Network, env, powers: np.ndarray) -> np.ndarray:
    """Own evaluation of capacity for a (points, links) power array."""
    cfg = net.config
    p = cfg.parameters
    links = [l.key for l in cfg.links]
    q = {l.key: l.q for l in cfg.links}
    idx = net.node_index
    out = np.zeros(powers.shape)
    for i, (n, b) in enumerate(links):
        alpha = q[(n, b)]
        for (a, m) in links:
            if m == n:
                alpha *= 1.0 - q[(a, m)]
        alpha *= 1.0 - sum(q[(b, c)] for (src, c) in links if src == b)
        spec = cfg.links[i]
        allowed = set(spec.interferers) if spec.interferers is not None else set(net.nodes) - {n, b}
        interference = np.zeros(powers.shape[0])
        for j, (a, m) in enumerate(links):
            if j != i and a in allowed:
                interference = interference + env.gain[idx[a], idx[b]] * powers[:, j] * q[(a, m)]
        gamma = env.gain[idx[n], idx[b]] * powers[:, i] / (spec.noise + interference)
        cap = p.BW * alpha * np.log2(np.maximum(gamma, 1.0))
        if cfg.enforce_linear_capacity_bound:
            cap = np.minimum(cap, p.delta * p.BW * powers[:, i])
        out[:, i] = np.minimum(cap, p.X_max)
    return out


def _oracle_power(inst):
    net: Network = inst["net"]
    env = inst["env"]
    w_star = np.asarray(inst["w_star"], dtype=float)
    a = np.asarray(inst["a"], dtype=float)
    if net.num_links > 2:
        raise ValueError("power oracle handles at most two links")
    cost = np.array([a[net.node_index[n]] for n, _ in net.links])
    budgets = [net.specs[n].p_max for n, _ in net.links]
    same_tx = net.num_links == 2 and net.links[0][0] == net.links[1][0]

    def obj(*ps):
        shape = ps[0].shape
        powers = np.stack([x.ravel() for x in ps], axis=1)
        value = _scalar_capacities(net, env, powers) @ w_star + powers @ cost
        if same_tx:
            value = np.where(powers.sum(axis=1) <= budgets[0] + 1e-12, value, -np.inf)
        return value.reshape(shape)

    result = power_mod.solve_power_allocation(net, w_star, a, env)
    solver = float(obj(*[np.array([x]) for x in result.powers])[0])
    return solver, obj, [(0.0, b) for b in budgets]


ORACLES = {
    "eh_harvest": _oracle_eh,
    "me_harvest_charge": _oracle_me_charge,
    "me_discharge_purchase": _oracle_me_discharge,
    "eg": _oracle_eg,
    "source_rate": _oracle_source_rate,
    "distortion": _oracle_distortion,
    "power": _oracle_power,
}


def grid_oracle_subproblem(kind: str, instance: Dict[str, Any], resolution: float = 1e-3, tolerance: Optional[float] = None) -> OracleReport:
    """Compare a solver's objective value with an exhaustive grid over its box."""
    if kind not in ORACLES:
        raise ValueError(f"unknown subproblem kind {kind!r}")
    solver_value, objective, bounds = ORACLES[kind](instance)
    nonlinear = kind in ("distortion", "power")
    cap = 100001 if len(bounds) == 1 else (801 if len(bounds) == 2 else 41)
    oracle_value, _ = _grid_max(objective, bounds, resolution, cap, refine=nonlinear)
    if kind == "power":
        # the solver may beat a finite grid; only a shortfall counts
        gap = max(0.0, oracle_value - solver_value)
    else:
        gap = abs(solver_value - oracle_value)
    tol = TOLERANCES[kind] if tolerance is None else tolerance
    descriptor = {k: v for k, v in instance.items() if isinstance(v, (int, float, str))}
    return OracleReport(kind=kind, instance=descriptor, solver_value=solver_value, oracle_value=oracle_value, gap=gap, tolerance=tol, passed=gap <= tol)


# -----------------------------------------------------------
# Lagrangian and finite differences
# -----------------------------------------------------------
def _consumption(net: Network, decision) -> np.ndarray:
    ptot = np.zeros(net.num_nodes)
    for f, session in enumerate(net.sessions):
        for s in session.sources:
            i = net.node_index[s]
            ptot[i] += session.sense_cost * decision.r[f, i]
    for l, (n, b) in enumerate(net.links):
        ptot[net.node_index[n]] += decision.p[l]
        ptot[net.node_index[b]] += net.specs[b].p_recv_cost * decision.x[l].sum()
    return ptot


def lagrangian_terms(net: Network, params: LyapunovParams, queues, env, decision, lam: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Every additive term of the per-slot Lagrangian, in a fixed order."""
    p = net.params
    v = params.v
    ptot = _consumption(net, decision)
    terms: List[float] = []
    for i, node in enumerate(net.nodes):
        cls = net.specs[node].power_class
        E, theta = queues.energy.e[i], params.theta.get(node, 0.0)
        if cls == PowerClass.EH:
            terms.append((E - theta) * (decision.e[i] - ptot[i]))
        elif cls == PowerClass.ME:
            terms.append((E - theta) * (decision.e[i] + decision.g[i] - decision.d[i]))
        elif cls == PowerClass.EG:
            terms.append((E - theta) * (decision.g[i] - decision.d[i]))
        if cls in (PowerClass.EG, PowerClass.ME):
            terms.append(v * (1.0 - p.varpi1) * p.varpi2 * env.price[i] * decision.y[i])
            terms.append(lam[i] * (decision.g[i] - decision.d[i] + ptot[i] - decision.y[i]))
    for f, session in enumerate(net.sessions):
        utility = net.utilities[f]
        for s in session.sources:
            terms.append(-v * p.varpi1 * float(utility.value(decision.dist[f, net.node_index[s]])))
    for k, (f, s, d) in enumerate(net.commodities):
        for i in range(net.num_nodes):
            out = sum(decision.x_info[l, k] for l in range(net.num_links) if net.tx[l] == i)
            inn = sum(decision.x_info[l, k] for l in range(net.num_links) if net.rx[l] == i)
            arrival = decision.r[f, i] if net.nodes[i] == s else 0.0
            terms.append(queues.data.q[i, k] * (out - inn - arrival))
    for m, (f, subset) in enumerate(net.subsets):
        session = net.sessions[f]
        cols = [net.node_index[s] for s in subset]
        volume = len(subset) * LOG2_2PIE + sum(math.log2(decision.dist[f, c]) for c in cols)
        rate = sum(decision.r[f, c] for c in cols)
        terms.append(rho[m] * (session.entropy_table[",".join(subset)] - volume - rate))
    return np.array(terms)


def finite_difference_gradient(instance: Dict[str, Any], step: float = 1e-5, tolerance: float = 1e-6) -> OracleReport:
    """
    Centered differences of the Lagrangian in every lambda (grid nodes) and
    rho, compared with the analytic gradients. Differences are taken term by
    term so dual-independent terms cancel exactly.
    """
    net: Network = instance["net"]
    params, queues, env, decision, dual = (instance[k] for k in ("params", "queues", "env", "decision", "dual"))
    analytic = np.concatenate([
        solvers.lambda_gradient(net, decision)[net.has_grid],
        solvers.rho_gradient(net, decision),
    ])
    numeric = []
    for i in np.flatnonzero(net.has_grid):
        up, down = dual.lam.copy(), dual.lam.copy()
        up[i] += step
        down[i] -= step
        diff = lagrangian_terms(net, params, queues, env, decision, up, dual.rho) - lagrangian_terms(net, params, queues, env, decision, down, dual.rho)
        numeric.append(math.fsum(diff) / (up[i] - down[i]))
    for m in range(net.num_subsets):
        up, down = dual.rho.copy(), dual.rho.copy()
        up[m] += step
        down[m] -= step
        diff = lagrangian_terms(net, params, queues, env, decision, dual.lam, up) - lagrangian_terms(net, params, queues, env, decision, dual.lam, down)
        numeric.append(math.fsum(diff) / (up[m] - down[m]))
    numeric = np.array(numeric)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    gap = float(rel.max()) if rel.size else 0.0
    return OracleReport(
        kind="dual_gradient", instance={"nodes": net.num_nodes, "subsets": net.num_subsets, "step": step},
        solver_value=float(np.abs(analytic).max(initial=0.0)), oracle_value=float(np.abs(numeric).max(initial=0.0)),
        gap=gap, tolerance=tolerance, passed=gap <= tolerance,
    )


def log_sinr_concavity_violations(net: Network, env, rng: np.random.Generator, samples: int = 1000, tol: float = 1e-9) -> int:
    """Count sampled triples where log SINR falls below its chord."""
    hi = np.log(net.p_max[net.tx])
    count = 0
    for _ in range(samples):
        p1 = rng.uniform(hi - 12.0, hi)
        p2 = rng.uniform(hi - 12.0, hi)
        t = rng.uniform(0.0, 1.0)
        mid = np.log(sinr_all(net, t * p1 + (1 - t) * p2, env))
        chord = t * np.log(sinr_all(net, p1, env)) + (1 - t) * np.log(sinr_all(net, p2, env))
        count += int(np.any(mid < chord - tol))
    return count


# -----------------------------------------------------------
# Runtime bound checks on trace rows
# -----------------------------------------------------------
def _tol(limit: float) -> float:
    return 1e-9 * max(1.0, abs(limit))


def _tx(link: str) -> str:
    return link.split("->", 1)[0]


def bound_violations(row: Mapping[str, float], params: LyapunovParams, layout: TraceLayout, slot: Optional[int] = None) -> List[Violation]:
    """Queue and energy upper bounds, energy reserves before spending, and the transmit backlog gate."""
    out: List[Violation] = []
    for col, (node, *_rest) in layout.of("Q"):
        if row[col] > params.q_bound + _tol(params.q_bound):
            out.append(Violation(kind="queue_bound", node=node, key=col, slot=slot, value=row[col], limit=params.q_bound, message=f"{col} above beta*V + R_max"))
    for col, (node,) in layout.of("E"):
        limit = params.energy_bound.get(node)
        if limit is not None and row[col] > limit + _tol(limit):
            cls = params.power_class[node].value
            out.append(Violation(kind=f"energy_bound_{cls}", node=node, key=col, slot=slot, value=row[col], limit=limit, message=f"{col} above its perturbed bound"))

    tx_power: Dict[str, float] = {}
    for col, (link,) in layout.of("p"):
        tx_power[_tx(link)] = tx_power.get(_tx(link), 0.0) + row[col]
    sensing: Dict[str, float] = {}
    for col, (node, _f) in layout.of("r"):
        sensing[node] = sensing.get(node, 0.0) + row[col]
    for col, (node,) in layout.of("E"):
        cls = params.power_class[node]
        if cls == PowerClass.EH and (tx_power.get(node, 0.0) > 0 or sensing.get(node, 0.0) > 0):
            need = params.p_total_max[node]
            if row[col] < need - _tol(need):
                out.append(Violation(kind="energy_reserve", node=node, key=col, slot=slot, value=row[col], limit=need, message=f"EH node {node} spends energy below P_total_max"))
        if cls in (PowerClass.EG, PowerClass.ME) and row.get(f"d[{node}]", 0.0) > 0:
            need = params.d_max[node]
            if row[col] < need - _tol(need):
                out.append(Violation(kind="energy_reserve", node=node, key=col, slot=slot, value=row[col], limit=need, message=f"node {node} discharges below d_max"))

    for col, (link, f, s, d) in layout.of("xi"):
        if row[col] > 0:
            qcol = f"Q[{_tx(link)}|{f}|{s}|{d}]"
            backlog = row.get(qcol, 0.0)
            if backlog < params.data_gate - _tol(params.data_gate):
                out.append(Violation(kind="transmit_backlog", node=_tx(link), key=col, slot=slot, value=backlog, limit=params.data_gate, message=f"{col} sent from a backlog below l_max*X_max"))
    return out


def availability_violations(row: Mapping[str, float], params: LyapunovParams, layout: TraceLayout, slot: Optional[int] = None) -> List[Violation]:
    out: List[Violation] = []
    for col, (node,) in layout.of("E"):
        cls = params.power_class[node]
        if cls == PowerClass.EH:
            need = row.get(f"Ptot[{node}]", 0.0)
        elif cls in (PowerClass.EG, PowerClass.ME):
            need = row.get(f"d[{node}]", 0.0)
        else:
            continue
        if row[col] < need - _tol(need):
            out.append(Violation(kind="energy_availability", node=node, key=col, slot=slot, value=need, limit=row[col], message=f"node {node} uses more energy than stored"))
    sent: Dict[str, float] = {}
    for col, (link, f, s, d) in layout.of("xi"):
        key = f"Q[{_tx(link)}|{f}|{s}|{d}]"
        sent[key] = sent.get(key, 0.0) + row[col]
    for key, total in sent.items():
        backlog = row.get(key, 0.0)
        if total > backlog + _tol(backlog):
            out.append(Violation(kind="data_availability", key=key, slot=slot, value=total, limit=backlog, message=f"outflow of {key} exceeds its backlog"))
    return out


def dual_bound_violations(row: Mapping[str, float], params: LyapunovParams, layout: TraceLayout, slot: Optional[int] = None) -> List[Violation]:
    slack = 1e-3 * params.beta * params.v
    out: List[Violation] = []
    for col, (node, _f) in layout.of("rhosum"):
        if row[col] > params.rho_bound + slack:
            out.append(Violation(kind="rho_bound", node=node, key=col, slot=slot, value=row[col], limit=params.rho_bound, message=f"{col} above beta*V"))
    for col, (node,) in layout.of("lam"):
        if row[col] > params.lambda_bound + slack:
            out.append(Violation(kind="lambda_bound", node=node, key=col, slot=slot, value=row[col], limit=params.lambda_bound, message=f"{col} above beta*V/sigma"))
    return out


def _scan(trace: pd.DataFrame, params: LyapunovParams, checks) -> List[Violation]:
    layout = TraceLayout.from_columns(trace.columns)
    violations: List[Violation] = []
    slots = trace["t"].tolist() if "t" in trace.columns else list(range(len(trace)))
    for slot, row in zip(slots, trace.to_dict(orient="records")):
        for check in checks:
            violations.extend(check(row, params, layout, int(slot)))
    return violations


def check_trace_bounds(trace: pd.DataFrame, params: LyapunovParams) -> List[Violation]:
    """Every slot: queue/energy bounds, reserves, the transmit gate and availability."""
    return _scan(trace, params, (bound_violations, availability_violations))


def check_dual_bounds(trace: pd.DataFrame, params: LyapunovParams) -> List[Violation]:
    return _scan(trace, params, (dual_bound_violations,))
