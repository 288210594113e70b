# wmsn/sim.py
"""
Slot loop of the drift-plus-penalty controller.

Each slot observes the environment, runs the dual loop (subproblems for the
current multipliers, then a projected-subgradient step) until the
multipliers settle, commits the last decision, checks it, records a trace
row and advances the queues. run() drives one (config, V, seed) triple and
sweep() fans runs out over worker processes.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from . import verify
from .controller import LyapunovParams, compute_perturbations, link_weight_matrix, node_coefficients
from .errors import AvailabilityError, BoundViolationError
from .models import NetworkConfig, Violation
from .network import EnvironmentState, Network, capacities, sample_environment
from .power import solve_power_allocation
from .queues import ControlDecision, QueueBank, availability_check, initial_queues, step, total_consumption
from .scheduler import coding_consistency_check, schedule
from .settings import settings
from .solvers import (
    DualState,
    dual_update,
    solve_distortion,
    solve_eg,
    solve_eh_harvest,
    solve_me_discharge_purchase,
    solve_me_harvest_charge,
    solve_source_rate,
)
from .traces import FLOAT_FORMAT, TraceLayout, TraceWriter, round_row, write_json

logger = logging.getLogger(__name__)

AVAILABILITY_KINDS = {"energy_availability", "data_availability", "grid_balance"}


# -----------------------------------------------------------
# Per-slot records
# -----------------------------------------------------------
@dataclass
class SlotDiagnostics:
    dual_iterations: int = 0
    dual_converged: bool = False
    power_solves: int = 0
    bcd_sweeps: int = 0
    power_converged: bool = True


@dataclass
class SlotTrace:
    slot: int
    env: EnvironmentState
    decision: ControlDecision
    queues: QueueBank  # state at the start of the slot
    dual: DualState
    objective: float
    utility: float
    grid_cost: float
    diagnostics: SlotDiagnostics
    violations: List[Violation] = field(default_factory=list)
    capacities: Optional[np.ndarray] = None  # C~ per link under the committed powers
    row: Optional[Dict[str, float]] = None  # unrounded trace row, filled by Simulation.step

    def to_row(self, net: Network) -> Dict[str, float]:
        dec, d = self.decision, self.diagnostics
        row: Dict[str, float] = {
            "t": self.slot,
            "objective": self.objective,
            "utility": self.utility,
            "grid_cost": self.grid_cost,
            "violations": len(self.violations),
            "dual_iters": d.dual_iterations,
            "dual_converged": int(d.dual_converged),
            "power_solves": d.power_solves,
            "bcd_sweeps": d.bcd_sweeps,
            "power_converged": int(d.power_converged),
        }
        ptot = total_consumption(net, dec)
        energy = self.queues.energy.e
        for i, n in enumerate(net.nodes):
            if net.has_energy[i]:
                row[f"E[{n}]"] = float(energy[i])
        per_node = {
            "h": self.env.harvestable, "price": self.env.price, "e": dec.e, "g": dec.g,
            "d": dec.d, "y": dec.y, "Ptot": ptot, "lam": self.dual.lam,
        }
        for kind, values in per_node.items():
            for i, n in enumerate(net.nodes):
                row[f"{kind}[{n}]"] = float(values[i])
        rho_sums = net.rho_sums(self.dual.rho)
        for kind, values in (("r", dec.r), ("D", dec.dist), ("rhosum", rho_sums)):
            for f, i in _source_cells(net):
                row[f"{kind}[{net.nodes[i]}|{net.session_ids[f]}]"] = float(values[f, i])
        for m, name in enumerate(net.subset_names):
            row[f"rho[{name}]"] = float(self.dual.rho[m])
        caps = self.capacities if self.capacities is not None else np.zeros(net.num_links)
        for l, name in enumerate(net.link_names):
            row[f"p[{name}]"] = float(dec.p[l])
            row[f"C[{name}]"] = float(caps[l])
            for f, sid in enumerate(net.session_ids):
                row[f"x[{name}|{sid}]"] = float(dec.x[l, f])
            for k, comm in enumerate(net.commodity_names):
                row[f"xi[{name}|{comm}]"] = float(dec.x_info[l, k])
        data = self.queues.data.q
        for i, k in _queue_cells(net):
            row[f"Q[{net.nodes[i]}|{net.commodity_names[k]}]"] = float(data[i, k])
        return row


def _source_cells(net: Network) -> List[Tuple[int, int]]:
    return [(f, i) for f in range(net.num_sessions) for i in np.flatnonzero(net.source_mask[f])]


def _queue_cells(net: Network) -> List[Tuple[int, int]]:
    # a sink holds no backlog of its own commodity
    return [(i, k) for i in range(net.num_nodes) for k in range(net.num_commodities) if net.comm_dst[k] != i]


def trace_columns(net: Network) -> List[str]:
    cols = ["t", "objective", "utility", "grid_cost", "violations", "dual_iters", "dual_converged", "power_solves", "bcd_sweeps", "power_converged"]
    cols += [f"E[{n}]" for i, n in enumerate(net.nodes) if net.has_energy[i]]
    for kind in ("h", "price", "e", "g", "d", "y", "Ptot", "lam"):
        cols += [f"{kind}[{n}]" for n in net.nodes]
    for kind in ("r", "D", "rhosum"):
        cols += [f"{kind}[{net.nodes[i]}|{net.session_ids[f]}]" for f, i in _source_cells(net)]
    cols += [f"rho[{name}]" for name in net.subset_names]
    for name in net.link_names:
        cols += [f"p[{name}]", f"C[{name}]"]
        cols += [f"x[{name}|{sid}]" for sid in net.session_ids]
        cols += [f"xi[{name}|{comm}]" for comm in net.commodity_names]
    cols += [f"Q[{net.nodes[i]}|{net.commodity_names[k]}]" for i, k in _queue_cells(net)]
    return cols


# -----------------------------------------------------------
# One slot
# -----------------------------------------------------------
def slot_objective(net: Network, decision: ControlDecision, env: EnvironmentState) -> Tuple[float, float, float]:
    """(O(t), varpi1 * sum U(D), (1 - varpi1) varpi2 * sum P y)."""
    p = net.params
    utility = 0.0
    for f, i in _source_cells(net):
        utility += float(net.utilities[f].value(decision.dist[f, i]))
    utility *= p.varpi1
    grid_cost = (1.0 - p.varpi1) * p.varpi2 * float(np.sum(np.where(net.has_grid, env.price * decision.y, 0.0)))
    return utility - grid_cost, utility, grid_cost


def _energy_actions(net: Network, params: LyapunovParams, energy: np.ndarray, theta: np.ndarray, lam: np.ndarray, env: EnvironmentState):
    p = net.params
    prices = dict(v=params.v, varpi1=p.varpi1, varpi2=p.varpi2)
    e_eh = solve_eh_harvest(energy, theta, env.harvestable)
    e_me, g_me = solve_me_harvest_charge(energy, theta, lam, env.harvestable, net.g_max)
    d_me, y_me = solve_me_discharge_purchase(energy, theta, lam, env.price, d_max=net.d_max, y_max=net.y_max, **prices)
    g_eg, d_eg, y_eg = solve_eg(energy, theta, lam, env.price, g_max=net.g_max, d_max=net.d_max, y_max=net.y_max, **prices)
    e = np.where(net.is_eh, e_eh, np.where(net.is_me, e_me, 0.0))
    g = np.where(net.is_me, g_me, np.where(net.is_eg, g_eg, 0.0))
    d = np.where(net.is_me, d_me, np.where(net.is_eg, d_eg, 0.0))
    y = np.where(net.is_me, y_me, np.where(net.is_eg, y_eg, 0.0))
    return e, g, d, y


def _distortions(net: Network, params: LyapunovParams, rho: np.ndarray, tol: float) -> np.ndarray:
    rho_sum = net.rho_sums(rho)
    dist = np.zeros((net.num_sessions, net.num_nodes))
    for f in range(net.num_sessions):
        dist[f] = solve_distortion(
            rho_sum[f], v=params.v, varpi1=net.params.varpi1, utility=net.utilities[f],
            d_min=net.d_min[f], d_max=net.d_max_dist[f], tol=tol,
        )
    return np.where(net.source_mask, dist, 0.0)


def _source_rates(net: Network, backlogs: np.ndarray, a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    r = solve_source_rate(
        net.rho_sums(rho), backlogs, a[None, :],
        sense_cost=net.sense_cost[:, None], r_max=net.r_max[:, None],
    )
    return np.where(net.source_mask, r, 0.0)


def _changed(new: np.ndarray, old: Optional[np.ndarray], tol: float) -> bool:
    if old is None:
        return True
    scale = max(1.0, float(np.max(np.abs(new), initial=0.0)), float(np.max(np.abs(old), initial=0.0)))
    return bool(np.max(np.abs(new - old), initial=0.0) > tol * scale)


# distortion follows rho continuously and y is recomputed after the loop
SETTLE_FIELDS = ("e", "g", "d", "r", "p", "x", "x_info")


def same_actions(new: ControlDecision, old: ControlDecision, tol: float) -> bool:
    return all(np.allclose(getattr(new, f), getattr(old, f), rtol=tol, atol=tol) for f in SETTLE_FIELDS)


def decide_slot(
    net: Network,
    params: LyapunovParams,
    queues: QueueBank,
    dual: DualState,
    env: EnvironmentState,
    warm_log_p: Optional[np.ndarray] = None,
    defensive_clamp: bool = False,
) -> Tuple[ControlDecision, DualState, DualState, SlotDiagnostics, np.ndarray]:
    """
    Run the dual loop for one slot.

    The loop ends when the multipliers stop moving or when the subproblem
    actions repeat one of the last few iterates (a fixed point, or the
    multipliers straddling a switching threshold). Only the subproblems
    whose inputs moved are solved again.

    Returns (decision, multipliers the decision was computed with, updated
    multipliers for the next slot, diagnostics, log-powers).
    """
    opts = net.config.solver
    theta = params.theta_vector(net)
    energy, data = queues.energy.e, queues.data.q
    backlogs = net.source_backlogs(data)
    diag = SlotDiagnostics()
    log_p = np.full(net.num_links, -np.inf) if warm_log_p is None else np.asarray(warm_log_p, dtype=float)
    last_a = last_w = None
    lam = rho = None
    recent: List[ControlDecision] = []
    decision = used = None

    for i in range(opts.dual_max_iterations):
        lam_moved = lam is None or not np.array_equal(dual.lam, lam)
        rho_moved = rho is None or not np.array_equal(dual.rho, rho)
        if lam_moved:
            a = node_coefficients(net, energy, dual.lam, theta)
            e, g, d, y = _energy_actions(net, params, energy, theta, dual.lam, env)
            _, big_w = link_weight_matrix(net, data, a, params.epsilon)
            w_star = big_w.max(axis=1) if net.num_sessions else np.zeros(net.num_links)
            if _changed(a, last_a, opts.power_resolve_tolerance) or _changed(w_star, last_w, opts.power_resolve_tolerance):
                result = solve_power_allocation(
                    net, w_star, a, env, log_p0=log_p,
                    max_sweeps=opts.bcd_max_sweeps, tol=opts.bcd_tolerance, inner_iterations=opts.bcd_inner_iterations,
                )
                log_p = result.log_powers
                caps = capacities(net, log_p, env)
                diag.power_solves += 1
                diag.bcd_sweeps += result.sweeps
                diag.power_converged = diag.power_converged and result.converged
                last_a, last_w = a, w_star
            sched = schedule(net, big_w, caps, data, a, params.epsilon, defensive_clamp=defensive_clamp)
        if rho_moved:
            dist = _distortions(net, params, dual.rho, opts.distortion_tolerance)
        if lam_moved or rho_moved:
            r = _source_rates(net, backlogs, a, dual.rho)
        lam, rho = dual.lam, dual.rho

        decision = ControlDecision(e=e, g=g, d=d, y=y, r=r, dist=dist, p=np.exp(log_p), x=sched.x, x_info=sched.x_info)
        used = dual
        ptot = total_consumption(net, decision)
        updated = dual_update(net, dual, decision, iteration=i, ptot=ptot)
        change = max(
            float(np.max(np.abs(updated.lam - dual.lam), initial=0.0)),
            float(np.max(np.abs(updated.rho - dual.rho), initial=0.0)),
        )
        dual = updated
        diag.dual_iterations = i + 1
        if change < opts.dual_tolerance or any(same_actions(decision, prev, opts.primal_tolerance) for prev in recent):
            diag.dual_converged = True
            break
        recent = (recent + [decision])[-opts.dual_settle_window:]

    # buy exactly what the committed decision needs
    ptot = total_consumption(net, decision)
    decision.y = np.where(net.has_grid, np.clip(decision.g - decision.d + ptot, 0.0, net.y_max), 0.0)
    return decision, used, dual, diag, log_p



# -----------------------------------------------------------
# Simulation
# -----------------------------------------------------------
class Simulation:
    """Stateful slot loop for one (config, V, seed)."""

    def __init__(
        self,
        config: NetworkConfig,
        v: float,
        seed: int,
        *,
        tolerate: bool = False,
        defensive_clamp: Optional[bool] = None,
        theta_override: Optional[bool] = None,
    ):
        self.config = config
        self.net = Network(config)
        self.params = compute_perturbations(self.net, v, theta_override=theta_override)
        self.queues = initial_queues(self.net, self.params.q_bound, self.params.energy_bound)
        self.dual = DualState.initial(self.net, kappa_lambda=config.solver.kappa0_lambda, kappa_rho=config.solver.kappa0_rho)
        self.rng = np.random.default_rng(seed)
        self.tolerate = tolerate
        self.defensive_clamp = config.defensive_clamp if defensive_clamp is None else defensive_clamp
        self.columns = trace_columns(self.net)
        self.layout = TraceLayout.from_columns(self.columns)
        self.log_p = np.full(self.net.num_links, -np.inf)
        self.t = 0
        self.violation_count = 0

    def step(self) -> SlotTrace:
        net, t = self.net, self.t
        env = sample_environment(net, self.rng)
        decision, used, updated, diag, log_p = decide_slot(
            net, self.params, self.queues, self.dual, env, warm_log_p=self.log_p, defensive_clamp=self.defensive_clamp,
        )
        objective, utility, grid_cost = slot_objective(net, decision, env)
        trace = SlotTrace(
            slot=t, env=env, decision=decision, queues=self.queues, dual=updated,
            objective=objective, utility=utility, grid_cost=grid_cost, diagnostics=diag,
        )
        trace.capacities = capacities(net, log_p, env)

        violations = availability_check(net, self.queues, decision, slot=t)
        for v in coding_consistency_check(net, decision, trace.capacities):
            violations.append(v.model_copy(update={"slot": t}))
        row = trace.row = trace.to_row(net)
        violations += verify.bound_violations(row, self.params, self.layout, t)
        violations += verify.dual_bound_violations(row, self.params, self.layout, t)
        trace.violations = violations
        row["violations"] = len(violations)

        if violations:
            self.violation_count += len(violations)
            if not self.tolerate:
                logger.error("Slot %d: %d violation(s); first: %s", t, len(violations), violations[0])
                self._raise(violations, t)
            for v in violations:
                logger.warning("Slot %d: tolerated violation %s", t, v)

        self.queues = step(net, self.queues, decision, slot=t, strict=not self.tolerate)
        self.dual = updated
        self.log_p = log_p
        self.t += 1
        logger.debug("Slot %d: objective %.6g, %d dual iterations", t, objective, diag.dual_iterations)
        return trace

    @staticmethod
    def _raise(violations: List[Violation], slot: int) -> None:
        if all(v.kind in AVAILABILITY_KINDS for v in violations):
            raise AvailabilityError(f"availability violated at slot {slot}: {violations[0]}", violations, slot)
        raise BoundViolationError(f"bound violated at slot {slot}: {violations[0]}", violations, slot)


# -----------------------------------------------------------
# Summaries
# -----------------------------------------------------------
class RunSummary(BaseModel):
    config_name: str
    v: float
    seed: int
    slots: int
    warmup_fraction: float
    warmup_slots: int
    avg_objective: float
    avg_objective_post_warmup: float
    avg_utility: float
    total_utility: float
    total_grid_cost: float
    avg_grid_cost: float
    avg_data_backlog: float
    avg_data_backlog_post_warmup: float
    max_data_backlog: float
    queue_max: Dict[str, float]
    queue_avg: Dict[str, float]
    energy_max: Dict[str, float]
    energy_avg: Dict[str, float]
    violation_count: int
    dual_iterations_avg: float
    power_nonconverged: int


def _mean(series: pd.Series) -> float:
    return math.fsum(series.tolist()) / len(series) if len(series) else 0.0


def summarize_trace(trace: pd.DataFrame, config_name: str, v: float, seed: int, warmup_fraction: float = 0.1) -> RunSummary:
    """Time averages of a trace; the first warmup_fraction of slots is excluded from the *_post_warmup fields."""
    slots = len(trace)
    warmup = min(int(math.floor(warmup_fraction * slots)), max(slots - 1, 0))
    post = trace.iloc[warmup:]
    layout = TraceLayout.from_columns(trace.columns)
    q_cols = [c for c, _ in layout.of("Q")]
    e_cols = [c for c, _ in layout.of("E")]
    values = trace[q_cols].to_numpy(dtype=float) if q_cols else np.zeros((slots, 1))
    backlog = pd.Series(values.sum(axis=1) / values.shape[1])
    post_backlog = backlog.iloc[warmup:]
    return RunSummary(
        config_name=config_name,
        v=v,
        seed=seed,
        slots=slots,
        warmup_fraction=warmup_fraction,
        warmup_slots=warmup,
        avg_objective=_mean(trace["objective"]),
        avg_objective_post_warmup=_mean(post["objective"]),
        avg_utility=_mean(trace["utility"]),
        total_utility=math.fsum(trace["utility"].tolist()),
        total_grid_cost=math.fsum(trace["grid_cost"].tolist()),
        avg_grid_cost=_mean(trace["grid_cost"]),
        avg_data_backlog=_mean(backlog),
        avg_data_backlog_post_warmup=_mean(post_backlog),
        max_data_backlog=float(values.max()) if slots else 0.0,
        queue_max={c: float(trace[c].max()) for c in q_cols},
        queue_avg={c: _mean(trace[c]) for c in q_cols},
        energy_max={c: float(trace[c].max()) for c in e_cols},
        energy_avg={c: _mean(trace[c]) for c in e_cols},
        violation_count=int(trace["violations"].sum()),
        dual_iterations_avg=_mean(trace["dual_iters"]),
        power_nonconverged=int((trace["power_converged"] == 0).sum()),
    )


def constants_payload(config_name: str, params: LyapunovParams) -> dict:
    return {"config": config_name, "v": params.v, "params": params.model_dump()}


@dataclass
class RunResult:
    summary: RunSummary
    trace: pd.DataFrame
    params: LyapunovParams
    output_dir: Optional[Path] = None


def run(
    config: NetworkConfig,
    v: float,
    slots: int,
    seed: int,
    *,
    output_dir: Optional[Union[str, Path]] = None,
    tolerate: bool = False,
    defensive_clamp: Optional[bool] = None,
    theta_override: Optional[bool] = None,
    warmup_fraction: float = 0.1,
    trace_chunk: Optional[int] = None,
) -> RunResult:
    """Simulate `slots` slots; with output_dir, write constants.json, trace.csv and summary.json there."""
    if slots < 1:
        raise ValueError("slots must be >= 1")
    sim = Simulation(config, v, seed, tolerate=tolerate, defensive_clamp=defensive_clamp, theta_override=theta_override)
    writer = None
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        writer = TraceWriter(out / "trace.csv", sim.columns, trace_chunk or settings.TRACE_CHUNK)
        write_json(out / "constants.json", constants_payload(config.name, sim.params))

    logger.info("Run %s: V=%g seed=%d slots=%d", config.name, v, seed, slots)
    rows: List[Dict[str, float]] = []
    try:
        for _ in range(slots):
            try:
                trace = sim.step()
            except (AvailabilityError, BoundViolationError):
                logger.exception("Run %s aborted at slot %d", config.name, sim.t)
                raise
            row = round_row(trace.row if trace.row is not None else trace.to_row(sim.net))
            rows.append(row)
            if writer is not None:
                writer.append(row)
    finally:
        if writer is not None:
            writer.close()

    frame = pd.DataFrame(rows, columns=sim.columns)
    summary = summarize_trace(frame, config.name, v, seed, warmup_fraction)
    if out is not None:
        write_json(out / "summary.json", summary.model_dump())
    logger.info(
        "Run %s V=%g seed=%d done: avg objective %.6g, avg backlog %.6g, %d violation(s)",
        config.name, v, seed, summary.avg_objective, summary.avg_data_backlog, summary.violation_count,
    )
    return RunResult(summary=summary, trace=frame, params=sim.params, output_dir=out)


def _sweep_job(job: Tuple) -> RunSummary:
    config, v, slots, seed, out, kwargs = job
    return run(config, v, slots, seed, output_dir=out, **kwargs).summary


def sweep_dir_name(v: float, seed: int) -> str:
    return f"v{v:g}_seed{seed}"


def sweep(
    config: NetworkConfig,
    v_list: Sequence[float],
    slots: int,
    seeds: Sequence[int],
    *,
    output_dir: Optional[Union[str, Path]] = None,
    workers: int = 1,
    **run_kwargs,
) -> List[RunSummary]:
    """One independent run per (V, seed); summaries come back sorted by (V, seed)."""
    out = Path(output_dir) if output_dir is not None else None
    jobs = [
        (config, float(v), slots, int(seed), (out / sweep_dir_name(v, seed)) if out is not None else None, run_kwargs)
        for v in v_list for seed in seeds
    ]
    logger.info("Sweep %s: %d run(s) on %d worker(s)", config.name, len(jobs), workers)
    if workers <= 1:
        summaries = [_sweep_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_sweep_job, jobs))
    summaries.sort(key=lambda s: (s.v, s.seed))
    if out is not None:
        tradeoff_frame(summaries).to_csv(out / "tradeoff.csv", index=False, float_format=FLOAT_FORMAT)
    return summaries


def tradeoff_frame(summaries: Sequence[RunSummary]) -> pd.DataFrame:
    """One row per (V, seed), with the time-average energy queue of every storing node as avg_E[n]."""
    return pd.DataFrame(
        [
            {
                "V": s.v, "seed": s.seed,
                "avg_objective": s.avg_objective,
                "avg_objective_post_warmup": s.avg_objective_post_warmup,
                "avg_data_backlog": s.avg_data_backlog,
                "avg_data_backlog_post_warmup": s.avg_data_backlog_post_warmup,
                "total_grid_cost": s.total_grid_cost,
                "violation_count": s.violation_count,
                "dual_iterations_avg": s.dual_iterations_avg,
                **{f"avg_{col}": value for col, value in s.energy_avg.items()},
            }
            for s in summaries
        ]
    )
