# wmsn/models.py
"""
Pydantic models for network configuration files, plus the Violation record
returned by the checkers and the SQLModel table backing the run registry.

Node, link and session blocks may omit any global parameter; the
NetworkConfig pre-validator fills them from the `parameters` block before the
per-block invariants are checked.
"""

import itertools
import math
import re
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from sqlmodel import Column, SQLModel, Text
from sqlmodel import Field as SQLField

from .entropy import gaussian_entropy_table, subset_key
from .utility import UTILITIES


class PowerClass(str, Enum):
    EH = "EH"  # renewable harvesting only
    EG = "EG"  # electricity grid only
    ME = "ME"  # harvester and grid
    EXT = "EXT"  # no modelled energy supply (sinks)


# -----------------------------------------------------------
# Global parameters
# -----------------------------------------------------------
class Parameters(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    R_max: float = 10.0
    D_min: float = 0.01
    D_max: float = 0.8
    P_max: float = 8.0
    N_nb: float = 5e-13
    BW: float = 10.0
    X_max: float = 10.0
    P_S: float = 0.1
    P_R: float = 0.05
    g_max: float = 15.0
    d_max: float = 15.0
    y_max: float = 25.0
    l_max: Optional[int] = None
    varpi1: float = 0.7
    varpi2: float = 0.1
    delta: float = 2.0
    V: float = 100.0
    h_EH: Tuple[float, float] = (0.0, 50.0)
    h_ME: Tuple[float, float] = (0.0, 10.0)
    S_G_min: float = 0.5
    S_G_max: float = 1.0
    # reference values only; the controller derives its own and logs a mismatch
    beta: Optional[float] = None
    sigma: Optional[float] = None

    @model_validator(mode="after")
    def _check(self) -> "Parameters":
        for name in ("R_max", "X_max", "P_S", "P_R", "g_max", "d_max", "y_max", "varpi2", "V"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("P_max", "N_nb", "BW", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.varpi1 <= 1.0:
            raise ValueError("varpi1 must lie in [0, 1]")
        if not 0.0 < self.D_min <= self.D_max < 1.0:
            raise ValueError("distortion bounds must satisfy 0 < D_min <= D_max < 1")
        if self.l_max is not None and self.l_max < 1:
            raise ValueError("l_max must be at least 1")
        for name in ("h_EH", "h_ME"):
            low, high = getattr(self, name)
            if not 0.0 <= low <= high:
                raise ValueError(f"{name} must be an ordered nonnegative range")
        if not 0.0 <= self.S_G_min <= self.S_G_max:
            raise ValueError("price range must satisfy 0 <= S_G_min <= S_G_max")
        return self


# -----------------------------------------------------------
# Nodes, links, sessions
# -----------------------------------------------------------
class NodeSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    power_class: PowerClass
    position: Optional[Tuple[float, float]] = None
    p_max: float
    p_recv_cost: float
    g_max: Optional[float] = None
    d_max: Optional[float] = None
    y_max: Optional[float] = None
    harvest_range: Optional[Tuple[float, float]] = None
    price_range: Optional[Tuple[float, float]] = None
    battery_capacity: Optional[float] = None
    initial_energy: float = 0.0

    @property
    def has_grid(self) -> bool:
        return self.power_class in (PowerClass.EG, PowerClass.ME)

    @property
    def has_harvester(self) -> bool:
        return self.power_class in (PowerClass.EH, PowerClass.ME)

    @property
    def h_max(self) -> float:
        return self.harvest_range[1] if self.harvest_range else 0.0

    @model_validator(mode="after")
    def _check(self) -> "NodeSpec":
        if self.p_max <= 0:
            raise ValueError(f"node {self.id}: p_max must be positive")
        if self.p_recv_cost < 0:
            raise ValueError(f"node {self.id}: p_recv_cost must be nonnegative")
        caps = (self.g_max, self.d_max, self.y_max)
        if self.has_grid:
            if any(c is None for c in caps) or self.price_range is None:
                raise ValueError(f"node {self.id}: grid nodes need g_max, d_max, y_max and price_range")
            if any(c < 0 for c in caps):
                raise ValueError(f"node {self.id}: battery and grid caps must be nonnegative")
            if not 0.0 <= self.price_range[0] <= self.price_range[1]:
                raise ValueError(f"node {self.id}: price_range must be ordered and nonnegative")
        elif any(c is not None for c in caps) or self.price_range is not None:
            raise ValueError(f"node {self.id}: {self.power_class.value} nodes have no grid or battery caps")
        if self.has_harvester:
            if self.harvest_range is None or not 0.0 <= self.harvest_range[0] <= self.harvest_range[1]:
                raise ValueError(f"node {self.id}: harvest_range must be an ordered nonnegative range")
        elif self.harvest_range is not None:
            raise ValueError(f"node {self.id}: {self.power_class.value} nodes have no harvester")
        if self.power_class == PowerClass.EXT and self.initial_energy != 0.0:
            raise ValueError(f"node {self.id}: EXT nodes have no energy queue")
        if self.initial_energy < 0:
            raise ValueError(f"node {self.id}: initial_energy must be nonnegative")
        if self.battery_capacity is not None and self.battery_capacity <= 0:
            raise ValueError(f"node {self.id}: battery_capacity must be positive")
        return self


class LinkSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    src: str = Field(alias="from")
    dst: str = Field(alias="to")
    distance: Optional[float] = None
    noise: float
    q: float
    # transmitters whose outgoing links interfere at dst; None -> every other transmitter
    interferers: Optional[Tuple[str, ...]] = None

    @field_validator("q")
    @classmethod
    def _check_q(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"probability out of range: q = {v}")
        return v

    @model_validator(mode="after")
    def _check(self) -> "LinkSpec":
        if self.src == self.dst:
            raise ValueError(f"link {self.name}: from and to must differ")
        if self.distance is not None and self.distance <= 0:
            raise ValueError(f"link {self.name}: distance must be positive")
        if self.noise <= 0:
            raise ValueError(f"link {self.name}: noise must be positive")
        if self.interferers is not None and self.src in self.interferers:
            raise ValueError(f"link {self.name}: interferers cannot include the link's own transmitter")
        return self

    @property
    def key(self) -> Tuple[str, str]:
        return (self.src, self.dst)

    @property
    def name(self) -> str:
        return f"{self.src}->{self.dst}"


class SessionSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    sources: Tuple[str, ...]
    sinks: Tuple[str, ...]
    sense_cost: float
    entropy_table: Dict[str, float]
    r_max: float
    d_min: float
    d_max_distortion: float
    utility: str = "log1m"

    @model_validator(mode="before")
    @classmethod
    def _normalise_table(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        sources = list(data.get("sources") or [])
        model = data.pop("entropy", None)
        if model is not None and "entropy_table" not in data:
            data["entropy_table"] = _entropy_from_model(sources, model)
        table = data.get("entropy_table")
        if isinstance(table, dict) and sources:
            data["entropy_table"] = {
                _canonical_subset(str(k), sources, data.get("id")): v for k, v in table.items()
            }
        return data

    @model_validator(mode="after")
    def _check(self) -> "SessionSpec":
        if not self.sources or not self.sinks:
            raise ValueError(f"session {self.id}: sources and sinks must be nonempty")
        if len(set(self.sources)) != len(self.sources) or len(set(self.sinks)) != len(self.sinks):
            raise ValueError(f"session {self.id}: duplicate source or sink")
        if set(self.sources) & set(self.sinks):
            raise ValueError(f"session {self.id}: sources and sinks must be disjoint")
        for subset in self.subsets():
            key = subset_key(subset)
            if key not in self.entropy_table:
                raise ValueError(f"session {self.id}: missing entropy entry for subset {{{', '.join(subset)}}}")
            value = self.entropy_table[key]
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"session {self.id}: entropy for subset {{{', '.join(subset)}}} must be finite and >= 0")
        if len(self.entropy_table) != 2 ** len(self.sources) - 1:
            raise ValueError(f"session {self.id}: entropy_table must have exactly 2^{len(self.sources)} - 1 entries")
        if self.sense_cost < 0 or self.r_max < 0:
            raise ValueError(f"session {self.id}: sense_cost and r_max must be nonnegative")
        if not 0.0 < self.d_min <= self.d_max_distortion < 1.0:
            raise ValueError(f"session {self.id}: need 0 < d_min <= d_max_distortion < 1")
        if self.utility not in UTILITIES:
            raise ValueError(f"session {self.id}: unknown utility {self.utility!r}")
        return self

    def subsets(self) -> List[Tuple[str, ...]]:
        """Nonempty source subsets in bitmask order, members kept in source order."""
        k = len(self.sources)
        return [
            tuple(s for i, s in enumerate(self.sources) if mask >> i & 1)
            for mask in range(1, 2 ** k)
        ]


def _canonical_subset(raw: str, sources: List[str], session_id: Any) -> str:
    members = [m for m in re.split(r"[,+\s]+", raw.strip("{}() ")) if m]
    unknown = [m for m in members if m not in sources]
    if unknown or not members:
        raise ValueError(f"session {session_id}: entropy entry {raw!r} is not a subset of the sources")
    return subset_key(tuple(s for s in sources if s in members))


def _entropy_from_model(sources: List[str], model: Dict[str, Any]) -> Dict[str, float]:
    if model.get("model", "gaussian") != "gaussian":
        raise ValueError(f"unknown entropy model {model.get('model')!r}")
    cov = model.get("covariance")
    if cov is None:
        variances = model.get("variances") or [1.0] * len(sources)
        corr = float(model.get("correlation", 0.0))
        cov = [
            [
                variances[i] if i == j else corr * math.sqrt(variances[i] * variances[j])
                for j in range(len(sources))
            ]
            for i in range(len(sources))
        ]
    return gaussian_entropy_table(sources, cov)


class SolverOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dual_max_iterations: int = 50
    kappa0_lambda: float = 0.5
    kappa0_rho: float = 0.5
    # stop when no multiplier moves by more than this
    dual_tolerance: float = 1e-6
    # or when the subproblem actions repeat one of the last dual_settle_window iterates
    primal_tolerance: float = 1e-3
    dual_settle_window: int = Field(2, ge=1)
    bcd_max_sweeps: int = 200
    bcd_tolerance: float = 1e-6
    bcd_inner_iterations: int = 40
    power_resolve_tolerance: float = 1e-3
    distortion_tolerance: float = 1e-8


class ThetaOverride(BaseModel):
    """theta = coef * V + const per power class."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    EH: Optional[Tuple[float, float]] = None
    EG: Optional[Tuple[float, float]] = None
    ME: Optional[Tuple[float, float]] = None


# -----------------------------------------------------------
# Whole network
# -----------------------------------------------------------
class NetworkConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "network"
    parameters: Parameters = Parameters()
    nodes: Tuple[NodeSpec, ...]
    links: Tuple[LinkSpec, ...]
    sessions: Tuple[SessionSpec, ...]
    fading: Literal["none", "exponential"] = "none"
    defensive_clamp: bool = False
    enforce_linear_capacity_bound: bool = True
    theta_override: Optional[ThetaOverride] = None
    use_theta_override: bool = False
    # keys "node|session|source|sink"
    initial_data: Dict[str, float] = {}
    solver: SolverOptions = SolverOptions()

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        raw_params = data.get("parameters") or {}
        params = raw_params if isinstance(raw_params, Parameters) else Parameters(**raw_params)
        data["parameters"] = params
        data["nodes"] = [_node_defaults(n, params) for n in data.get("nodes") or []]
        data["links"] = [_link_defaults(l, params) for l in data.get("links") or []]
        data["sessions"] = [_session_defaults(s, params) for s in data.get("sessions") or []]
        return data

    @model_validator(mode="after")
    def _check(self) -> "NetworkConfig":
        ids = [n.id for n in self.nodes]
        if not ids:
            raise ValueError("network has no nodes")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node id")
        known = set(ids)
        keys = [l.key for l in self.links]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate link")
        positions = {n.id: n.position for n in self.nodes}
        for link in self.links:
            if link.src not in known or link.dst not in known:
                raise ValueError(f"link {link.name} references an unknown node")
            if link.interferers and set(link.interferers) - known:
                raise ValueError(f"link {link.name} lists an unknown interferer")
            if link.distance is None and (positions[link.src] is None or positions[link.dst] is None):
                raise ValueError(f"link {link.name}: distance missing and endpoint positions unknown")
        for node in ids:
            total = sum(l.q for l in self.links if l.src == node)
            if total > 1.0 + 1e-12:
                raise ValueError(f"probability out of range: transmission probabilities of node {node} sum to {total:g}")
        session_ids = [s.id for s in self.sessions]
        if not session_ids:
            raise ValueError("network has no sessions")
        if len(set(session_ids)) != len(session_ids):
            raise ValueError("duplicate session id")
        for session in self.sessions:
            if set(session.sources + session.sinks) - known:
                raise ValueError(f"session {session.id} references an unknown node")
        if self.parameters.l_max is not None and self.parameters.l_max < self.max_degree():
            raise ValueError(f"l_max = {self.parameters.l_max} is below the largest link degree {self.max_degree()}")
        for key, value in self.initial_data.items():
            parts = key.split("|")
            if len(parts) != 4 or not math.isfinite(value) or value < 0:
                raise ValueError(f"initial_data entry {key!r} must be 'node|session|source|sink' with a finite value >= 0")
        return self

    def max_degree(self) -> int:
        out_deg: Dict[str, int] = {}
        in_deg: Dict[str, int] = {}
        for link in self.links:
            out_deg[link.src] = out_deg.get(link.src, 0) + 1
            in_deg[link.dst] = in_deg.get(link.dst, 0) + 1
        return max(itertools.chain(out_deg.values(), in_deg.values(), [1]))

    @property
    def l_max(self) -> int:
        return self.parameters.l_max if self.parameters.l_max is not None else self.max_degree()

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def access(self) -> "AccessProbabilities":
        return AccessProbabilities(q={l.key: l.q for l in self.links})


def _node_defaults(raw: Any, p: Parameters) -> Any:
    if not isinstance(raw, dict):
        return raw
    node = dict(raw)
    cls = str(node.get("power_class", "")).upper()
    node.setdefault("p_max", p.P_max)
    node.setdefault("p_recv_cost", p.P_R)
    if cls in ("EG", "ME"):
        node.setdefault("g_max", p.g_max)
        node.setdefault("d_max", p.d_max)
        node.setdefault("y_max", p.y_max)
        node.setdefault("price_range", (p.S_G_min, p.S_G_max))
    if cls == "EH":
        node.setdefault("harvest_range", p.h_EH)
    elif cls == "ME":
        node.setdefault("harvest_range", p.h_ME)
    return node


def _link_defaults(raw: Any, p: Parameters) -> Any:
    if not isinstance(raw, dict):
        return raw
    link = dict(raw)
    link.setdefault("noise", p.N_nb)
    return link


def _session_defaults(raw: Any, p: Parameters) -> Any:
    if not isinstance(raw, dict):
        return raw
    session = dict(raw)
    session.setdefault("sense_cost", p.P_S)
    session.setdefault("r_max", p.R_max)
    session.setdefault("d_min", p.D_min)
    session.setdefault("d_max_distortion", p.D_max)
    return session


class AccessProbabilities(BaseModel):
    model_config = ConfigDict(frozen=True)

    q: Dict[Tuple[str, str], float]

    @model_validator(mode="after")
    def _check(self) -> "AccessProbabilities":
        sums: Dict[str, float] = {}
        for (src, dst), value in self.q.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"probability out of range: q[{src}->{dst}] = {value}")
            sums[src] = sums.get(src, 0.0) + value
        for node, total in sums.items():
            if total > 1.0 + 1e-12:
                raise ValueError(f"probability out of range: transmission probabilities of node {node} sum to {total:g}")
        return self


# -----------------------------------------------------------
# Checker output
# -----------------------------------------------------------
class Violation(BaseModel):
    kind: str
    node: Optional[str] = None
    key: Optional[str] = None
    slot: Optional[int] = None
    value: float
    limit: float
    message: str = ""

    def __str__(self) -> str:
        where = f" at slot {self.slot}" if self.slot is not None else ""
        return f"{self.kind}{where}: {self.message or self.key} (value {self.value:.6g}, limit {self.limit:.6g})"


# -----------------------------------------------------------
# Run registry
# -----------------------------------------------------------
class RunRecord(SQLModel, table=True):
    id: Optional[int] = SQLField(default=None, primary_key=True)
    config_name: str
    v: float
    seed: int
    slots: int
    avg_objective: float
    avg_objective_post_warmup: float
    avg_data_backlog: float
    total_grid_cost: float
    violation_count: int = SQLField(default=0)
    output_dir: str = SQLField(default="", sa_column=Column(Text))
    created_at: datetime = SQLField(default_factory=datetime.utcnow)
