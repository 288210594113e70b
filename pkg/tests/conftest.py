import copy

import numpy as np
import pytest

from wmsn.config import config_from_dict, load_config
from wmsn.network import EnvironmentState, Network


LINE_CONFIG = {
    "name": "line",
    "parameters": {"X_max": 1000},
    "nodes": [
        {"id": "A", "power_class": "EH", "position": [0, 0]},
        {"id": "B", "power_class": "EXT", "position": [10, 0]},
    ],
    "links": [{"from": "A", "to": "B", "q": 1.0}],
    "sessions": [{"id": "s1", "sources": ["A"], "sinks": ["B"], "entropy_table": {"A": 1.0}}],
}

TWO_LINK_CONFIG = {
    "name": "two_link",
    "parameters": {"X_max": 1000},
    "nodes": [
        {"id": "A", "power_class": "EH", "position": [0, 0]},
        {"id": "B", "power_class": "EH", "position": [0, 1000]},
        {"id": "C", "power_class": "EXT", "position": [10, 0]},
        {"id": "D", "power_class": "EXT", "position": [10, 1000]},
    ],
    "links": [{"from": "A", "to": "C", "q": 1.0}, {"from": "B", "to": "D", "q": 1.0}],
    "sessions": [{"id": "s1", "sources": ["A", "B"], "sinks": ["C", "D"], "entropy_table": {"A": 1.0, "B": 1.0, "A,B": 2.0}}],
}

# no harvest, no grid, zero entropy: nothing ever moves
IDLE_CONFIG = {
    "name": "idle",
    "parameters": {"D_min": 0.1, "h_EH": [0, 0]},
    "nodes": [
        {"id": "A", "power_class": "EH", "position": [0, 0]},
        {"id": "B", "power_class": "EH", "position": [0, 20]},
        {"id": "E", "power_class": "EXT", "position": [20, 10]},
    ],
    "links": [{"from": "A", "to": "E", "q": 0.5}, {"from": "B", "to": "E", "q": 0.5}],
    "sessions": [{"id": "s1", "sources": ["A", "B"], "sinks": ["E"], "entropy_table": {"A": 0.0, "B": 0.0, "A,B": 0.0}}],
}


@pytest.fixture
def make_config():
    """Build a NetworkConfig from one of the dict templates with top-level overrides."""

    def _make(template, **overrides):
        data = copy.deepcopy(template)
        data.update(overrides)
        return config_from_dict(data)

    return _make


@pytest.fixture(scope="session")
def six_node_config():
    return load_config("six_node.cfg")


@pytest.fixture(scope="session")
def six_node_net(six_node_config):
    return Network(six_node_config)


@pytest.fixture
def line_net(make_config):
    return Network(make_config(LINE_CONFIG))


@pytest.fixture
def idle_config(make_config):
    return make_config(IDLE_CONFIG)


def static_env(net: Network, harvest: float = 0.0, price: float = 1.0) -> EnvironmentState:
    return EnvironmentState(
        gain=net.base_gain,
        harvestable=np.full(net.num_nodes, harvest),
        price=np.full(net.num_nodes, price),
    )


@pytest.fixture
def env_factory():
    return static_env
