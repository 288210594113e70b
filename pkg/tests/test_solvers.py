import math

import numpy as np
import pytest

from wmsn.entropy import LOG2_2PIE
from wmsn.queues import ControlDecision
from wmsn.solvers import (
    DualState,
    distortion_objective,
    dual_update,
    lambda_gradient,
    rho_gradient,
    solve_distortion,
    solve_eg,
    solve_eh_harvest,
    solve_me_discharge_purchase,
    solve_me_harvest_charge,
    solve_source_rate,
)
from wmsn.utility import LOG1M, NEG_LINEAR

GRID = dict(v=100.0, varpi1=0.7, varpi2=0.1)


@pytest.mark.parametrize(
    "energy, theta, harvestable, expected",
    [(10.0, 30.0, 50.0, 20.0), (10.0, 30.0, 5.0, 5.0), (40.0, 30.0, 50.0, 0.0), (30.0, 30.0, 50.0, 0.0)],
)
def test_eh_harvest_fills_to_theta(energy, theta, harvestable, expected):
    assert float(solve_eh_harvest(energy, theta, harvestable)) == pytest.approx(expected)


def test_me_harvest_and_charge():
    e, g = solve_me_harvest_charge(10.0, 30.0, 5.0, 7.0, 15.0)
    assert (float(e), float(g)) == (7.0, 15.0)
    # E - theta < 0 but E - theta + lambda > 0
    e, g = solve_me_harvest_charge(28.0, 30.0, 5.0, 7.0, 15.0)
    assert (float(e), float(g)) == (7.0, 0.0)


def test_me_discharge_and_purchase():
    d, y = solve_me_discharge_purchase(28.0, 30.0, 5.0, 1.0, d_max=15.0, y_max=25.0, **GRID)
    assert (float(d), float(y)) == (15.0, 25.0)
    # V (1 - varpi1) varpi2 price = 3 > lambda
    d, y = solve_me_discharge_purchase(10.0, 30.0, 2.0, 1.0, d_max=15.0, y_max=25.0, **GRID)
    assert (float(d), float(y)) == (0.0, 0.0)


def test_purchase_tie_is_zero():
    _, y = solve_me_discharge_purchase(0.0, 0.0, 3.0, 1.0, d_max=15.0, y_max=25.0, **GRID)
    assert float(y) == 0.0


def test_eg_zero_coefficient_idles():
    g, d, y = solve_eg(25.0, 30.0, 5.0, 1.0, g_max=15.0, d_max=15.0, y_max=25.0, **GRID)
    assert (float(g), float(d), float(y)) == (0.0, 0.0, 25.0)


def test_eg_vectorised():
    g, d, _ = solve_eg(np.array([0.0, 50.0]), np.array([30.0, 30.0]), np.zeros(2), np.ones(2), g_max=15.0, d_max=15.0, y_max=25.0, **GRID)
    np.testing.assert_array_equal(g, [15.0, 0.0])
    np.testing.assert_array_equal(d, [0.0, 15.0])


def test_distortion_closed_form():
    # R = rho / ln 2 = 30, V varpi1 = 70
    rho = 30.0 * math.log(2.0)
    dist = solve_distortion(rho, v=100.0, varpi1=0.7, utility=LOG1M, d_min=0.01, d_max=0.8)
    assert float(dist) == pytest.approx(0.3)


def test_distortion_clipped_to_range():
    dist = solve_distortion(np.array([0.0, 1e6]), v=100.0, varpi1=0.7, utility=LOG1M, d_min=0.01, d_max=0.8)
    np.testing.assert_allclose(dist, [0.01, 0.8])


def test_distortion_bounded_search_for_linear_utility():
    rho = 30.0 * math.log(2.0)
    dist = solve_distortion(rho, v=100.0, varpi1=0.7, utility=NEG_LINEAR, d_min=0.01, d_max=0.8)
    assert dist == pytest.approx(30.0 / 70.0, abs=1e-5)
    best = distortion_objective(dist, rho, v=100.0, varpi1=0.7, utility=NEG_LINEAR)
    for point in (0.3, 0.5, 0.8):
        assert best >= distortion_objective(point, rho, v=100.0, varpi1=0.7, utility=NEG_LINEAR)


def test_source_rate_bang_bang():
    assert float(solve_source_rate(5.0, 3.0, 0.0, sense_cost=0.1, r_max=10.0)) == 10.0
    assert float(solve_source_rate(3.0, 3.0, 0.0, sense_cost=0.1, r_max=10.0)) == 0.0
    # a negative battery coefficient makes sensing expensive
    assert float(solve_source_rate(5.0, 3.0, -30.0, sense_cost=0.1, r_max=10.0)) == 0.0


def test_step_sizes_decay():
    dual = DualState(lam=np.zeros(1), rho=np.zeros(1), kappa_lambda=0.5, kappa_rho=1.0)
    assert dual.step_sizes(0) == (0.5, 1.0)
    assert dual.step_sizes(3) == pytest.approx((0.25, 0.5))


def test_lambda_gradient_only_on_grid_nodes(six_node_net):
    net = six_node_net
    b, c = net.node_index["B"], net.node_index["C"]
    dec = ControlDecision.zeros(net)
    dec.g[b] = 5.0
    dec.y[b] = 2.0
    dec.d[c] = 1.0
    dec.p[net.link_index[("A", "C")]] = 2.0
    grad = lambda_gradient(net, dec)
    assert grad[b] == pytest.approx(3.0)
    assert grad[c] == pytest.approx(-1.0)
    assert grad[net.node_index["A"]] == 0.0

    dual = dual_update(net, DualState.initial(net), dec, iteration=0)
    assert dual.lam[b] == pytest.approx(1.5)
    assert dual.lam[c] == 0.0


def test_lambda_gradient_counts_consumption(six_node_net):
    net = six_node_net
    b = net.node_index["B"]
    dec = ControlDecision.zeros(net)
    dec.p[net.link_index[("B", "C")]] = 4.0
    assert lambda_gradient(net, dec)[b] == pytest.approx(4.0)


def test_rho_gradient_at_max_distortion(six_node_net):
    net = six_node_net
    dec = ControlDecision.zeros(net)
    for n in "AB":
        dec.dist[0, net.node_index[n]] = 0.8
    per_source = LOG2_2PIE + math.log2(0.8)
    expected = net.subset_entropy - net.subset_size * per_source
    np.testing.assert_allclose(rho_gradient(net, dec), expected)
    # admissible at zero rate: the multipliers stay at zero
    assert np.all(expected < 0)
    assert np.all(dual_update(net, DualState.initial(net), dec).rho == 0.0)


def test_rho_gradient_subtracts_rates(six_node_net):
    net = six_node_net
    dec = ControlDecision.zeros(net)
    base = rho_gradient(net, dec)
    dec.r[0, net.node_index["A"]] = 10.0
    # subsets {A} and {A, B} contain A
    np.testing.assert_allclose(rho_gradient(net, dec) - base, [-10.0, 0.0, -10.0])
