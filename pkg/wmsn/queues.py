# wmsn/queues.py
"""
Queue banks, the per-slot decision vector, and the queueing dynamics.

Banks are immutable value objects; step functions return new banks. Data
queues are indexed (node, commodity) where a commodity is one
(session, source, sink) triple of the Network.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from .errors import AvailabilityError, ConfigError
from .models import PowerClass, Violation
from .network import Network

logger = logging.getLogger(__name__)

TOL = 1e-9


@dataclass(frozen=True)
class DataQueueBank:
    q: np.ndarray  # (nodes, commodities)
    delivered: np.ndarray  # (commodities,) cumulative bits absorbed by sinks

    @classmethod
    def zeros(cls, net: Network) -> "DataQueueBank":
        return cls(q=np.zeros((net.num_nodes, net.num_commodities)), delivered=np.zeros(net.num_commodities))

    def get(self, net: Network, node: str, session: str, source: str, sink: str) -> float:
        k = net.commodity_names.index(f"{session}|{source}|{sink}")
        return float(self.q[net.node_index[node], k])


@dataclass(frozen=True)
class EnergyQueueBank:
    e: np.ndarray  # (nodes,), zero for EXT nodes

    @classmethod
    def zeros(cls, net: Network) -> "EnergyQueueBank":
        return cls(e=np.zeros(net.num_nodes))

    def get(self, net: Network, node: str) -> float:
        return float(self.e[net.node_index[node]])


@dataclass(frozen=True)
class QueueBank:
    data: DataQueueBank
    energy: EnergyQueueBank


@dataclass
class ControlDecision:
    """chi(t). Arrays are indexed by the Network's node, session, link and commodity order."""

    e: np.ndarray  # (nodes,) harvested
    g: np.ndarray  # (nodes,) battery charge from grid
    d: np.ndarray  # (nodes,) battery discharge
    y: np.ndarray  # (nodes,) grid draw
    r: np.ndarray  # (sessions, nodes) source rate, nonzero only at sources
    dist: np.ndarray  # (sessions, nodes) distortion, meaningful only at sources
    p: np.ndarray  # (links,) transmit power
    x: np.ndarray  # (links, sessions) physical flow
    x_info: np.ndarray  # (links, commodities) information flow

    @classmethod
    def zeros(cls, net: Network) -> "ControlDecision":
        n, f, l, k = net.num_nodes, net.num_sessions, net.num_links, net.num_commodities
        return cls(
            e=np.zeros(n), g=np.zeros(n), d=np.zeros(n), y=np.zeros(n),
            r=np.zeros((f, n)), dist=np.where(net.source_mask, net.d_min[:, None], 0.0),
            p=np.zeros(l), x=np.zeros((l, f)), x_info=np.zeros((l, k)),
        )

    @property
    def log_p(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.p)

    def copy(self) -> "ControlDecision":
        return ControlDecision(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})


def initial_queues(net: Network, q_bound: float, energy_bound: Dict[str, float]) -> QueueBank:
    """Q(0), E(0) from the config, checked against the bounds the controller keeps."""
    data = np.zeros((net.num_nodes, net.num_commodities))
    for key, value in net.config.initial_data.items():
        node, commodity = key.split("|", 1)
        if node not in net.node_index or commodity not in net.commodity_names:
            raise ConfigError(f"initial_data entry {key!r} names an unknown node or commodity")
        k = net.commodity_names.index(commodity)
        if net.comm_dst[k] == net.node_index[node] and value != 0:
            raise ConfigError(f"initial_data entry {key!r}: a sink holds no backlog of its own commodity")
        if value > q_bound:
            raise ConfigError(f"initial_data entry {key!r} = {value:g} exceeds the data queue bound {q_bound:g}")
        data[net.node_index[node], k] = value
    energy = np.array([net.specs[n].initial_energy for n in net.nodes], dtype=float)
    for i, node in enumerate(net.nodes):
        limit = energy_bound.get(node)
        if limit is not None and energy[i] > limit:
            raise ConfigError(f"node {node}: initial_energy {energy[i]:g} exceeds the energy bound {limit:g}")
    return QueueBank(
        data=DataQueueBank(q=data, delivered=np.zeros(net.num_commodities)),
        energy=EnergyQueueBank(e=energy),
    )


# -----------------------------------------------------------
# Energy bookkeeping
# -----------------------------------------------------------
def total_consumption(net: Network, decision: ControlDecision) -> np.ndarray:
    """p^Total per node: sensing + transmission + reception."""
    sensing = (net.sense_cost[:, None] * decision.r * net.source_mask).sum(axis=0)
    transmit = net.outflow(decision.p)
    receive = net.p_recv * net.inflow(decision.x.sum(axis=1))
    return sensing + transmit + receive


def total_energy_consumption(net: Network, node: str, decision: ControlDecision) -> float:
    return float(total_consumption(net, decision)[net.node_index[node]])


def grid_draw_required(net: Network, node: str, decision: ControlDecision) -> float:
    """y = g - d + p^Total (equality form; may be negative)."""
    i = net.node_index[node]
    return float(decision.g[i] - decision.d[i] + total_consumption(net, decision)[i])


# -----------------------------------------------------------
# Availability
# -----------------------------------------------------------
def availability_check(net: Network, queues: QueueBank, decision: ControlDecision, slot: Optional[int] = None) -> List[Violation]:
    violations: List[Violation] = []
    energy = queues.energy.e
    ptot = total_consumption(net, decision)
    for i, node in enumerate(net.nodes):
        cls = net.power_class[i]
        if cls == PowerClass.EH and energy[i] < ptot[i] - TOL:
            violations.append(Violation(
                kind="energy_availability", node=node, slot=slot, value=ptot[i], limit=energy[i],
                message=f"EH node {node} consumes {ptot[i]:.6g} with only {energy[i]:.6g} stored",
            ))
        if cls in (PowerClass.EG, PowerClass.ME):
            if energy[i] < decision.d[i] - TOL:
                violations.append(Violation(
                    kind="energy_availability", node=node, slot=slot, value=decision.d[i], limit=energy[i],
                    message=f"node {node} discharges {decision.d[i]:.6g} with only {energy[i]:.6g} stored",
                ))
            required = decision.g[i] - decision.d[i] + ptot[i]
            y = decision.y[i]
            if y < -TOL or y > net.y_max[i] + TOL or y < required - TOL:
                violations.append(Violation(
                    kind="grid_balance", node=node, slot=slot, value=y, limit=required,
                    message=f"node {node} draws {y:.6g} from the grid, needs {required:.6g} within [0, {net.y_max[i]:.6g}]",
                ))
    out = net.outflow(decision.x_info)
    over = np.argwhere(out > queues.data.q + TOL)
    for n, k in over:
        violations.append(Violation(
            kind="data_availability", node=net.nodes[n], key=net.commodity_names[k], slot=slot,
            value=out[n, k], limit=queues.data.q[n, k],
            message=f"node {net.nodes[n]} sends {out[n, k]:.6g} of {net.commodity_names[k]} with backlog {queues.data.q[n, k]:.6g}",
        ))
    return violations


# -----------------------------------------------------------
# Dynamics
# -----------------------------------------------------------
def step_data_queue(net: Network, bank: DataQueueBank, decision: ControlDecision, slot: Optional[int] = None, strict: bool = True) -> DataQueueBank:
    """Q(t+1) = Q - out + in + arrivals. Sinks absorb their own commodity."""
    x_info = decision.x_info
    out = net.outflow(x_info)
    short = out > bank.q + TOL
    if short.any():
        if strict:
            violations = [
                Violation(
                    kind="data_availability", node=net.nodes[n], key=net.commodity_names[k], slot=slot,
                    value=out[n, k], limit=bank.q[n, k], message="outflow exceeds backlog",
                )
                for n, k in np.argwhere(short)
            ]
            raise AvailabilityError(f"data availability violated at slot {slot}: {violations[0]}", violations, slot)
        # scale each node's outflow down to its backlog, consistently on every link
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(short, bank.q / out, 1.0)
        logger.warning("Slot %s: clamping %d data outflows to the available backlog", slot, int(short.sum()))
        x_info = x_info * scale[net.tx]
        out = net.outflow(x_info)

    inflow = net.inflow(x_info)
    k = np.arange(net.num_commodities)
    absorbed = inflow[net.comm_dst, k].copy()
    inflow[net.comm_dst, k] = 0.0

    arrivals = np.zeros_like(bank.q)
    arrivals[net.comm_src, k] = decision.r[net.comm_session, net.comm_src]

    q_next = bank.q - out + inflow + arrivals
    if not strict:
        q_next = np.maximum(q_next, 0.0)
    q_next[net.comm_dst, k] = 0.0
    return DataQueueBank(q=q_next, delivered=bank.delivered + absorbed)


def energy_delta(net: Network, decision: ControlDecision, ptot: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-node energy change implied by the decision."""
    if ptot is None:
        ptot = total_consumption(net, decision)
    delta = np.zeros(net.num_nodes)
    delta = np.where(net.is_me, decision.e + decision.g - decision.d, delta)
    delta = np.where(net.is_eh, decision.e - ptot, delta)
    delta = np.where(net.is_eg, decision.g - decision.d, delta)
    return delta


def _energy_shortfall(net: Network, energy: np.ndarray, decision: ControlDecision, ptot: np.ndarray) -> np.ndarray:
    need = np.where(net.is_eh, ptot, np.where(net.has_grid, decision.d, 0.0))
    return energy < need - TOL


def step_energy_queue(net: Network, bank: EnergyQueueBank, node: str, decision: ControlDecision, slot: Optional[int] = None, strict: bool = True) -> EnergyQueueBank:
    i = net.node_index[node]
    ptot = total_consumption(net, decision)
    if strict and _energy_shortfall(net, bank.e, decision, ptot)[i]:
        violation = Violation(kind="energy_availability", node=node, slot=slot, value=float(ptot[i] if net.is_eh[i] else decision.d[i]), limit=float(bank.e[i]), message="energy drawn exceeds stored energy")
        raise AvailabilityError(f"energy availability violated at node {node}: {violation}", [violation], slot)
    e_next = bank.e.copy()
    e_next[i] = bank.e[i] + energy_delta(net, decision, ptot)[i]
    if not strict:
        e_next[i] = max(e_next[i], 0.0)
    return EnergyQueueBank(e=e_next)


def step_energy_queues(net: Network, bank: EnergyQueueBank, decision: ControlDecision, slot: Optional[int] = None, strict: bool = True, ptot: Optional[np.ndarray] = None) -> EnergyQueueBank:
    if ptot is None:
        ptot = total_consumption(net, decision)
    short = _energy_shortfall(net, bank.e, decision, ptot)
    if strict and short.any():
        violations = [
            Violation(kind="energy_availability", node=net.nodes[i], slot=slot, value=float(ptot[i] if net.is_eh[i] else decision.d[i]), limit=float(bank.e[i]), message="energy drawn exceeds stored energy")
            for i in np.flatnonzero(short)
        ]
        raise AvailabilityError(f"energy availability violated at slot {slot}: {violations[0]}", violations, slot)
    e_next = bank.e + energy_delta(net, decision, ptot)
    return EnergyQueueBank(e=e_next if strict else np.maximum(e_next, 0.0))


def step(net: Network, queues: QueueBank, decision: ControlDecision, slot: Optional[int] = None, strict: bool = True) -> QueueBank:
    return replace(
        queues,
        data=step_data_queue(net, queues.data, decision, slot=slot, strict=strict),
        energy=step_energy_queues(net, queues.energy, decision, slot=slot, strict=strict),
    )
