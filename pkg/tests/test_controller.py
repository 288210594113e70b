import copy
import math

import numpy as np
import pytest

from wmsn.controller import (
    beta_endpoint,
    compute_A,
    compute_beta,
    compute_epsilon,
    compute_perturbations,
    compute_sigma,
    link_weight_matrix,
    link_weights,
    p_total_max,
)
from wmsn.errors import ConfigError
from wmsn.models import PowerClass
from wmsn.network import Network
from wmsn.queues import DataQueueBank, EnergyQueueBank
from wmsn.utility import LOG1M, NEG_LINEAR

from .conftest import LINE_CONFIG


def test_table_constants(six_node_net, six_node_config):
    assert compute_beta(six_node_config.sessions[0]) == pytest.approx(2.8, abs=1e-6)
    assert compute_sigma(six_node_config) == pytest.approx(0.05)
    assert compute_epsilon(six_node_config) == pytest.approx(30.0)


def test_beta_endpoint_log_utility():
    # -U'(D_max) * D_max = 0.8 / 0.2
    assert beta_endpoint(LOG1M, 0.8) == pytest.approx(4.0)
    assert beta_endpoint(NEG_LINEAR, 0.5) == pytest.approx(0.5)


def test_p_total_max(six_node_net):
    ptot = dict(zip(six_node_net.nodes, p_total_max(six_node_net)))
    # sensing 0.1 * 10, transmit 8, receive 0.05 * l_max * X_max
    assert ptot["A"] == pytest.approx(1.0 + 8.0 + 1.0)
    assert ptot["D"] == pytest.approx(8.0 + 1.0)


@pytest.mark.parametrize("v", [0.0, 50.0, 100.0, 3500.0])
def test_perturbations_linear_in_v(six_node_net, v):
    params = compute_perturbations(six_node_net, v)
    assert params.theta["B"] == pytest.approx(56 * v + 15)
    assert params.theta["C"] == pytest.approx(56 * v + 15)
    assert params.theta["A"] == pytest.approx(224 * v + 10)
    assert params.theta["D"] == pytest.approx(224 * v + 9)
    assert "E" not in params.theta
    assert params.q_bound == pytest.approx(2.8 * v + 10)
    assert params.energy_bound["B"] == pytest.approx(56 * v + 15 + 15)
    assert params.energy_bound["C"] == pytest.approx(56 * v + 15 + 15 + 10)
    assert params.energy_bound["A"] == pytest.approx(params.theta["A"])


def test_dual_bounds_at_v100(six_node_net):
    params = compute_perturbations(six_node_net, 100.0)
    assert params.lambda_bound == pytest.approx(5600.0)
    assert params.rho_bound == pytest.approx(280.0)
    assert params.data_gate == pytest.approx(20.0)
    assert params.q_bound == pytest.approx(290.0)


def test_drift_constants(six_node_net):
    params = compute_perturbations(six_node_net, 100.0)
    assert params.b_q == pytest.approx(650.0)
    expected_b = 6 * 4 * 650.0 + sum(params.b_e.values())
    assert params.b_const == pytest.approx(expected_b)
    assert params.b_tilde == pytest.approx(expected_b + 6 * 1 * 2 * 2 * 30 * 2 * 10)
    assert params.objective_gap == pytest.approx(params.b_tilde / 100.0)


def test_zero_v_has_infinite_gap(six_node_net):
    assert math.isinf(compute_perturbations(six_node_net, 0.0).objective_gap)


def test_negative_v_rejected(six_node_net):
    with pytest.raises(ConfigError):
        compute_perturbations(six_node_net, -1.0)


def test_theta_override(six_node_net):
    params = compute_perturbations(six_node_net, 100.0, theta_override=True)
    assert params.theta_overridden
    assert params.theta["A"] == pytest.approx(224 * 100 + 38)
    assert params.theta["B"] == pytest.approx(56 * 100 + 15)


def test_theta_override_needs_block(make_config):
    net = Network(make_config(LINE_CONFIG))
    with pytest.raises(ConfigError, match="theta_override"):
        compute_perturbations(net, 10.0, theta_override=True)


def test_zero_sensing_cost_rejected(make_config):
    data = copy.deepcopy(LINE_CONFIG)
    data["sessions"][0]["sense_cost"] = 0.0
    with pytest.raises(ConfigError, match="sigma must be positive"):
        compute_sigma(make_config(data))


def test_node_coefficient_by_class(six_node_net):
    params = compute_perturbations(six_node_net, 10.0)
    energy = np.zeros(six_node_net.num_nodes)
    energy[six_node_net.node_index["A"]] = 100.0
    lam = np.full(six_node_net.num_nodes, 3.0)
    bank = EnergyQueueBank(e=energy)
    assert compute_A(six_node_net, "A", bank, lam, params) == pytest.approx(100.0 - params.theta["A"])
    assert compute_A(six_node_net, "B", bank, lam, params) == pytest.approx(-3.0)
    assert compute_A(six_node_net, "C", bank, lam, params) == pytest.approx(-3.0)
    assert compute_A(six_node_net, "E", bank, lam, params) == 0.0
    assert params.power_class["E"] == PowerClass.EXT


def test_link_weights(six_node_net):
    net = six_node_net
    params = compute_perturbations(net, 100.0)
    data = np.zeros((net.num_nodes, net.num_commodities))
    a = net.node_index["A"]
    data[a, net.commodity_names.index("s1|A|E")] = 100.0
    data[a, net.commodity_names.index("s1|A|F")] = 80.0
    coeff = np.zeros(net.num_nodes)
    coeff[net.node_index["C"]] = -2.0
    w, big_w = link_weights(net, ("A", "C"), "s1", DataQueueBank(q=data, delivered=np.zeros(4)), coeff, params)
    # 180 backlog difference, -2 * 0.05 reception term
    assert w == pytest.approx(180.0 - 0.1)
    assert big_w == pytest.approx(180.0 - 0.1 - 4 * 30.0)

    w_all, big_all = link_weight_matrix(net, data, coeff, params.epsilon)
    assert np.all(big_all >= 0)
    assert big_all[net.link_index[("B", "C")], 0] == 0.0
