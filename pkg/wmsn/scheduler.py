# wmsn/scheduler.py
"""Max-weight session selection per link and coded flow assignment."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .models import Violation
from .network import Network

logger = logging.getLogger(__name__)

TOL = 1e-9


@dataclass
class ScheduleDecision:
    chosen: np.ndarray  # (links,) session index, -1 when idle
    x: np.ndarray  # (links, sessions)
    x_info: np.ndarray  # (links, commodities)

    def chosen_session(self, net: Network, link: Tuple[str, str]) -> Optional[str]:
        f = int(self.chosen[net.link_index[link]])
        return net.session_ids[f] if f >= 0 else None


def schedule(
    net: Network,
    weights: np.ndarray,
    capacities: np.ndarray,
    data: np.ndarray,
    a: np.ndarray,
    epsilon: float,
    defensive_clamp: bool = False,
) -> ScheduleDecision:
    """
    For every link pick f* = argmax_f W (first index on ties) and, if W > 0,
    grant it the full capacity. Within f*, a (source, sink) pair carries
    information only when Q_n - Q_b + A_b P_R^b - eps > 0.
    """
    n_links = net.num_links
    chosen = np.full(n_links, -1, dtype=int)
    x = np.zeros((n_links, net.num_sessions))
    x_info = np.zeros((n_links, net.num_commodities))
    best = np.argmax(weights, axis=1)
    active = weights[np.arange(n_links), best] > 0
    gate = data[net.tx] - data[net.rx] + (a * net.p_recv)[net.rx][:, None] - epsilon > 0

    for l in np.flatnonzero(active):
        f = best[l]
        chosen[l] = f
        x[l, f] = capacities[l]
        comms = net.session_comms[f]
        x_info[l, comms] = np.where(gate[l, comms], capacities[l], 0.0)

    if defensive_clamp:
        x_info = _clamp_to_backlog(net, x_info, data)
    return ScheduleDecision(chosen=chosen, x=x, x_info=x_info)


def _clamp_to_backlog(net: Network, x_info: np.ndarray, data: np.ndarray) -> np.ndarray:
    """Serve each node's outgoing links in link order from what is left of Q."""
    remaining = data.copy()
    clamped = x_info.copy()
    for l in range(net.num_links):
        n = net.tx[l]
        granted = np.minimum(clamped[l], np.maximum(remaining[n], 0.0))
        if np.any(granted < clamped[l] - TOL):
            logger.warning("Defensive clamp reduced information flow on %s", net.link_names[l])
        clamped[l] = granted
        remaining[n] -= granted
    return clamped


def schedule_link(net: Network, link: Tuple[str, str], weights: np.ndarray, capacities: np.ndarray, data: np.ndarray, a: np.ndarray, epsilon: float) -> Tuple[Optional[str], np.ndarray, np.ndarray]:
    """Single-link view of schedule(): (chosen session id, x row, x_info row)."""
    decision = schedule(net, weights, capacities, data, a, epsilon)
    i = net.link_index[link]
    return decision.chosen_session(net, link), decision.x[i], decision.x_info[i]


def coding_consistency_check(net: Network, decision: ScheduleDecision, capacities: Optional[np.ndarray] = None) -> List[Violation]:
    """
    Information flow never exceeds the physical flow of its session, only one
    session uses a link, and the physical flow stays within capacity.
    """
    violations: List[Violation] = []
    for l in range(net.num_links):
        name = net.link_names[l]
        for k in range(net.num_commodities):
            f = net.comm_session[k]
            if decision.x_info[l, k] > decision.x[l, f] + TOL:
                violations.append(Violation(
                    kind="coding", key=f"{name}|{net.commodity_names[k]}",
                    value=decision.x_info[l, k], limit=decision.x[l, f],
                    message=f"information flow exceeds physical flow on {name}",
                ))
        busy = np.flatnonzero(decision.x[l] > 0)
        if busy.size > 1:
            violations.append(Violation(
                kind="coding", key=name, value=float(busy.size), limit=1.0,
                message=f"{busy.size} sessions share link {name}",
            ))
        if capacities is not None and decision.x[l].sum() > capacities[l] + TOL:
            violations.append(Violation(
                kind="capacity", key=name, value=float(decision.x[l].sum()), limit=float(capacities[l]),
                message=f"physical flow exceeds capacity on {name}",
            ))
    return violations
