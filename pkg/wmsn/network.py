# wmsn/network.py
"""
Indexed view of a NetworkConfig plus the physical-layer model.

Network turns the validated config into numpy index arrays (nodes, links,
(session, source, sink) commodities, source subsets) so the per-slot solvers
work on vectors. The module-level functions implement random access success
probabilities, SINR under log-domain powers, link capacities and the
per-slot environment sampler.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from .models import AccessProbabilities, NetworkConfig, PowerClass
from .utility import Utility, get_utility

logger = logging.getLogger(__name__)

LinkKey = Tuple[str, str]


class Network:
    def __init__(self, config: NetworkConfig):
        self.config = config
        self.params = config.parameters

        # ---------- nodes ----------
        self.nodes: List[str] = [n.id for n in config.nodes]
        self.node_index: Dict[str, int] = {n: i for i, n in enumerate(self.nodes)}
        self.specs = {n.id: n for n in config.nodes}
        classes = [n.power_class for n in config.nodes]
        self.power_class = classes
        self.is_eh = np.array([c == PowerClass.EH for c in classes])
        self.is_eg = np.array([c == PowerClass.EG for c in classes])
        self.is_me = np.array([c == PowerClass.ME for c in classes])
        self.is_ext = np.array([c == PowerClass.EXT for c in classes])
        self.has_grid = self.is_eg | self.is_me
        self.has_energy = ~self.is_ext

        def _vec(attr: str, default: float = 0.0) -> np.ndarray:
            return np.array([getattr(n, attr) if getattr(n, attr) is not None else default for n in config.nodes], dtype=float)

        self.p_max = _vec("p_max")
        self.p_recv = _vec("p_recv_cost")
        self.g_max = _vec("g_max")
        self.d_max = _vec("d_max")
        self.y_max = _vec("y_max")
        self.h_low = np.array([n.harvest_range[0] if n.harvest_range else 0.0 for n in config.nodes])
        self.h_high = np.array([n.harvest_range[1] if n.harvest_range else 0.0 for n in config.nodes])
        self.price_low = np.array([n.price_range[0] if n.price_range else 0.0 for n in config.nodes])
        self.price_high = np.array([n.price_range[1] if n.price_range else 0.0 for n in config.nodes])

        # ---------- links ----------
        self.links: List[LinkKey] = [l.key for l in config.links]
        self.link_names: List[str] = [l.name for l in config.links]
        self.link_index: Dict[LinkKey, int] = {k: i for i, k in enumerate(self.links)}
        self.tx = np.array([self.node_index[s] for s, _ in self.links], dtype=int)
        self.rx = np.array([self.node_index[d] for _, d in self.links], dtype=int)
        self.q = np.array([l.q for l in config.links], dtype=float)
        self.noise = np.array([l.noise for l in config.links], dtype=float)

        self.graph = nx.DiGraph()
        for spec in config.nodes:
            self.graph.add_node(spec.id, power_class=spec.power_class.value)
        for i, link in enumerate(config.links):
            self.graph.add_edge(link.src, link.dst, index=i, q=link.q)
        self.out_links = [np.array(sorted(self.graph.edges[n, b]["index"] for b in self.graph.successors(n)), dtype=int) for n in self.nodes]
        self.in_links = [np.array(sorted(self.graph.edges[a, n]["index"] for a in self.graph.predecessors(n)), dtype=int) for n in self.nodes]
        self.l_max = config.l_max

        # ---------- geometry ----------
        n_nodes = len(self.nodes)
        self.distance = np.full((n_nodes, n_nodes), np.inf)
        for a, spec_a in enumerate(config.nodes):
            for b, spec_b in enumerate(config.nodes):
                if a != b and spec_a.position is not None and spec_b.position is not None:
                    self.distance[a, b] = math.dist(spec_a.position, spec_b.position)
        for link in config.links:
            if link.distance is not None:
                a, b = self.node_index[link.src], self.node_index[link.dst]
                self.distance[a, b] = self.distance[b, a] = link.distance
        with np.errstate(divide="ignore"):
            self.base_gain = np.where(np.isfinite(self.distance), self.distance ** -4.0, 0.0)
        np.fill_diagonal(self.base_gain, 0.0)

        # mask[i, j]: transmitter of link j interferes at the receiver of link i
        n_links = len(self.links)
        self.interference_mask = np.zeros((n_links, n_links), dtype=bool)
        for i, link in enumerate(config.links):
            if link.interferers is None:
                allowed = set(self.nodes) - {link.src, link.dst}
            else:
                allowed = set(link.interferers)
            for j, (a, _) in enumerate(self.links):
                if j != i and a in allowed:
                    self.interference_mask[i, j] = True

        # ---------- sessions ----------
        self.sessions = tuple(sorted(config.sessions, key=lambda s: s.id))
        self.session_ids = [s.id for s in self.sessions]
        self.utilities: List[Utility] = [get_utility(s.utility) for s in self.sessions]
        n_sessions = len(self.sessions)
        self.source_mask = np.zeros((n_sessions, n_nodes), dtype=bool)
        for f, session in enumerate(self.sessions):
            for s in session.sources:
                self.source_mask[f, self.node_index[s]] = True
        self.sense_cost = np.array([s.sense_cost for s in self.sessions])
        self.r_max = np.array([s.r_max for s in self.sessions])
        self.d_min = np.array([s.d_min for s in self.sessions])
        self.d_max_dist = np.array([s.d_max_distortion for s in self.sessions])
        self.pair_count = np.array([len(s.sources) * len(s.sinks) for s in self.sessions], dtype=float)
        self.n_s = max(len(s.sources) for s in self.sessions)
        self.n_d = max(len(s.sinks) for s in self.sessions)

        # commodities: one per (session, source, sink)
        self.commodities: List[Tuple[int, str, str]] = [
            (f, s, d) for f, session in enumerate(self.sessions) for s in session.sources for d in session.sinks
        ]
        self.commodity_names = [f"{self.session_ids[f]}|{s}|{d}" for f, s, d in self.commodities]
        self.comm_session = np.array([f for f, _, _ in self.commodities], dtype=int)
        self.comm_src = np.array([self.node_index[s] for _, s, _ in self.commodities], dtype=int)
        self.comm_dst = np.array([self.node_index[d] for _, _, d in self.commodities], dtype=int)
        self.session_comms = [np.flatnonzero(self.comm_session == f) for f in range(n_sessions)]

        # source subsets: one dual variable each
        self.subsets: List[Tuple[int, Tuple[str, ...]]] = [
            (f, subset) for f, session in enumerate(self.sessions) for subset in session.subsets()
        ]
        self.subset_names = [f"{self.session_ids[f]}|{'+'.join(sub)}" for f, sub in self.subsets]
        n_subsets = len(self.subsets)
        self.subset_session = np.array([f for f, _ in self.subsets], dtype=int)
        self.subset_members = np.zeros((n_subsets, n_nodes))
        for m, (_, subset) in enumerate(self.subsets):
            for s in subset:
                self.subset_members[m, self.node_index[s]] = 1.0
        self.subset_size = self.subset_members.sum(axis=1)
        self.subset_entropy = np.array([
            self.sessions[f].entropy_table[",".join(subset)] for f, subset in self.subsets
        ])
        self.subset_onehot = np.zeros((n_sessions, n_subsets))
        self.subset_onehot[self.subset_session, np.arange(n_subsets)] = 1.0

        self.alpha = success_probabilities(self)
        self._warn_unreachable()

    # ---------- sizes ----------
    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_links(self) -> int:
        return len(self.links)

    @property
    def num_sessions(self) -> int:
        return len(self.sessions)

    @property
    def num_commodities(self) -> int:
        return len(self.commodities)

    @property
    def num_subsets(self) -> int:
        return len(self.subsets)

    # ---------- helpers ----------
    def access_vector(self, access: Optional[AccessProbabilities] = None) -> np.ndarray:
        if access is None:
            return self.q
        return np.array([access.q.get(k, 0.0) for k in self.links], dtype=float)

    def link_vector(self, values: Union[Mapping[LinkKey, float], Sequence[float], np.ndarray], fill: float = 0.0) -> np.ndarray:
        if isinstance(values, Mapping):
            out = np.full(self.num_links, fill, dtype=float)
            for key, value in values.items():
                out[self.link_index[tuple(key)]] = value
            return out
        return np.asarray(values, dtype=float)

    def rho_sums(self, rho: np.ndarray) -> np.ndarray:
        """(sessions, nodes): sum of rho over the subsets containing each source."""
        return (self.subset_onehot * rho[None, :]) @ self.subset_members

    def source_backlogs(self, data: np.ndarray) -> np.ndarray:
        """(sessions, nodes): sum over sinks of Q_s^{f s d} at each source s."""
        out = np.zeros((self.num_sessions, self.num_nodes))
        k = np.arange(self.num_commodities)
        np.add.at(out, (self.comm_session, self.comm_src), data[self.comm_src, k])
        return out

    def inflow(self, link_values: np.ndarray) -> np.ndarray:
        """Sum per receiving node of a per-link vector (or of its rows)."""
        out = np.zeros((self.num_nodes,) + link_values.shape[1:])
        np.add.at(out, self.rx, link_values)
        return out

    def outflow(self, link_values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.num_nodes,) + link_values.shape[1:])
        np.add.at(out, self.tx, link_values)
        return out

    def _warn_unreachable(self) -> None:
        for session in self.sessions:
            for s in session.sources:
                for d in session.sinks:
                    if not nx.has_path(self.graph, s, d):
                        logger.warning("Session %s: sink %s is unreachable from source %s", session.id, d, s)


@dataclass(frozen=True)
class EnvironmentState:
    """Exogenous per-slot state: gains between all node pairs, harvestable energy, prices."""

    gain: np.ndarray  # (nodes, nodes), gain[a, b] from transmitter a to receiver b
    harvestable: np.ndarray  # (nodes,)
    price: np.ndarray  # (nodes,)

    def link_gains(self, net: Network) -> np.ndarray:
        return self.gain[net.tx, net.rx]

    def channel_gain(self, net: Network, link: LinkKey) -> float:
        return float(self.gain[net.node_index[link[0]], net.node_index[link[1]]])


def sample_environment(net: Network, rng: np.random.Generator) -> EnvironmentState:
    """Draw Z(t). Draw order is fixed so a seeded generator replays exactly."""
    harvest = rng.uniform(net.h_low, net.h_high)
    price = rng.uniform(net.price_low, net.price_high)
    gain = net.base_gain
    if net.config.fading == "exponential":
        gain = net.base_gain * rng.exponential(1.0, size=net.base_gain.shape)
    return EnvironmentState(gain=gain, harvestable=harvest, price=price)


def success_probabilities(net: Network, access: Optional[AccessProbabilities] = None) -> np.ndarray:
    """alpha_nb = q_nb * prod_{a in I(n)} (1 - q_an) * (1 - sum_{c in O(b)} q_bc)."""
    q = net.access_vector(access)
    alpha = np.empty(net.num_links)
    for i in range(net.num_links):
        n, b = net.tx[i], net.rx[i]
        quiet_in = np.prod(1.0 - q[net.in_links[n]])
        idle_rx = 1.0 - q[net.out_links[b]].sum()
        alpha[i] = q[i] * quiet_in * idle_rx
    return np.clip(alpha, 0.0, 1.0)


def success_probability(net: Network, link: LinkKey, access: Optional[AccessProbabilities] = None) -> float:
    return float(success_probabilities(net, access)[net.link_index[link]])


def cross_gains(net: Network, env: EnvironmentState, access: Optional[AccessProbabilities] = None) -> np.ndarray:
    """(links, links): q-weighted gain from the transmitter of j to the receiver of i."""
    q = net.access_vector(access)
    cross = env.gain[net.tx[None, :], net.rx[:, None]]
    return np.where(net.interference_mask, cross * q[None, :], 0.0)


def sinr_all(net: Network, log_powers, env: EnvironmentState, access: Optional[AccessProbabilities] = None) -> np.ndarray:
    power = np.exp(net.link_vector(log_powers, fill=-np.inf))
    interference = cross_gains(net, env, access) @ power
    return env.link_gains(net) * power / (net.noise + interference)


def sinr(net: Network, link: LinkKey, log_powers, env: EnvironmentState, access: Optional[AccessProbabilities] = None) -> float:
    return float(sinr_all(net, log_powers, env, access)[net.link_index[link]])


def capacity_from_sinr(alpha, gamma, bw: float, power=None, delta: Optional[float] = None, x_max: Optional[float] = None):
    """BW * alpha * log2(gamma), zero for gamma <= 1, optionally capped by delta*BW*p and X_max."""
    cap = bw * np.asarray(alpha, dtype=float) * np.log2(np.maximum(np.asarray(gamma, dtype=float), 1.0))
    if power is not None and delta is not None:
        cap = np.minimum(cap, delta * bw * np.asarray(power, dtype=float))
    if x_max is not None:
        cap = np.minimum(cap, x_max)
    return cap


def capacities(net: Network, log_powers, env: EnvironmentState, access: Optional[AccessProbabilities] = None) -> np.ndarray:
    log_p = net.link_vector(log_powers, fill=-np.inf)
    alpha = net.alpha if access is None else success_probabilities(net, access)
    gamma = sinr_all(net, log_p, env, access)
    p = net.params
    delta = p.delta if net.config.enforce_linear_capacity_bound else None
    return capacity_from_sinr(alpha, gamma, p.BW, power=np.exp(log_p), delta=delta, x_max=p.X_max)


def link_capacity(net: Network, link: LinkKey, log_powers, env: EnvironmentState, access: Optional[AccessProbabilities] = None) -> float:
    return float(capacities(net, log_powers, env, access)[net.link_index[link]])
