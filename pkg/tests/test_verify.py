import math

import numpy as np
import pandas as pd
import pytest

from wmsn import solvers
from wmsn.controller import compute_perturbations
from wmsn.network import EnvironmentState, Network
from wmsn.queues import ControlDecision, initial_queues
from wmsn.sim import trace_columns
from wmsn.solvers import DualState
from wmsn.traces import TraceLayout
from wmsn.utility import LOG1M, NEG_LINEAR, NEG_SQUARE
from wmsn.verify import (
    availability_violations,
    bound_violations,
    check_dual_bounds,
    check_trace_bounds,
    dual_bound_violations,
    finite_difference_gradient,
    grid_oracle_subproblem,
    log_sinr_concavity_violations,
)

from .conftest import TWO_LINK_CONFIG


GRID = dict(v=100.0, varpi1=0.7, varpi2=0.1)
LINEAR_KINDS = ["eh_harvest", "me_harvest_charge", "me_discharge_purchase", "eg", "source_rate"]


@pytest.fixture
def params(six_node_net):
    return compute_perturbations(six_node_net, 100.0)


@pytest.fixture
def blank_row(six_node_net):
    columns = trace_columns(six_node_net)
    return {c: 0.0 for c in columns}, TraceLayout.from_columns(columns)


@pytest.mark.parametrize(
    "kind, instance",
    [
        ("eh_harvest", dict(energy=10.0, theta=30.0, harvestable=50.0)),
        ("me_harvest_charge", dict(energy=10.0, theta=30.0, lam=5.0, harvestable=7.0, g_max=15.0)),
        ("me_discharge_purchase", dict(energy=28.0, theta=30.0, lam=5.0, price=0.8, d_max=15.0, y_max=25.0, **GRID)),
        ("eg", dict(energy=40.0, theta=30.0, lam=1.0, price=0.6, g_max=15.0, d_max=15.0, y_max=25.0, **GRID)),
        ("source_rate", dict(rho_sum=5.0, queue_sum=3.0, a=-1.0, sense_cost=0.1, r_max=10.0)),
    ],
)
def test_linear_oracles_agree(kind, instance):
    report = grid_oracle_subproblem(kind, instance)
    assert report.passed, report


@pytest.mark.parametrize("utility, rho", [(LOG1M, 30.0 * math.log(2.0)), (NEG_SQUARE, 12.0), (LOG1M, 0.0)])
def test_distortion_oracle(utility, rho):
    report = grid_oracle_subproblem("distortion", dict(utility=utility, v=100.0, varpi1=0.7, rho_sum=rho, d_min=0.01, d_max=0.8))
    assert report.passed, report
    assert report.instance["rho_sum"] == rho


def test_power_oracle_single_link(line_net, env_factory):
    instance = dict(net=line_net, env=env_factory(line_net), w_star=[1.0], a=[-1.0, 0.0])
    report = grid_oracle_subproblem("power", instance)
    assert report.passed, report
    # 20 p - p at p = P_max
    assert report.solver_value == pytest.approx(152.0, rel=1e-6)


def test_power_oracle_rejects_large_networks(six_node_net, env_factory):
    instance = dict(net=six_node_net, env=env_factory(six_node_net), w_star=np.zeros(7), a=np.zeros(6))
    with pytest.raises(ValueError, match="at most two links"):
        grid_oracle_subproblem("power", instance)


def test_unknown_oracle_kind():
    with pytest.raises(ValueError, match="unknown subproblem kind"):
        grid_oracle_subproblem("routing", {})


def test_oracle_catches_a_broken_solver(monkeypatch):
    monkeypatch.setattr(solvers, "solve_eh_harvest", lambda energy, theta, harvestable: 0.0)
    report = grid_oracle_subproblem("eh_harvest", dict(energy=10.0, theta=30.0, harvestable=50.0))
    assert not report.passed
    assert report.gap == pytest.approx(400.0)


def _random_linear_instance(rng):
    return dict(
        energy=rng.uniform(0.0, 60.0), theta=rng.uniform(0.0, 60.0), lam=rng.uniform(0.0, 20.0),
        harvestable=rng.uniform(0.0, 50.0), price=rng.uniform(0.5, 1.0),
        g_max=15.0, d_max=15.0, y_max=25.0,
        rho_sum=rng.uniform(0.0, 50.0), queue_sum=rng.uniform(0.0, 50.0), a=rng.uniform(-20.0, 0.0),
        sense_cost=0.1, r_max=10.0, **GRID,
    )


@pytest.mark.parametrize("kind", LINEAR_KINDS)
def test_linear_oracles_on_random_instances(kind):
    rng = np.random.default_rng(sum(map(ord, kind)))
    reports = [grid_oracle_subproblem(kind, _random_linear_instance(rng)) for _ in range(100)]
    assert [r for r in reports if not r.passed] == []


def test_distortion_oracle_on_random_instances():
    rng = np.random.default_rng(7)
    utilities = [LOG1M, NEG_LINEAR, NEG_SQUARE]
    reports = []
    for n in range(100):
        instance = dict(
            utility=utilities[n % 3], v=rng.uniform(20.0, 200.0), varpi1=0.7,
            rho_sum=10.0 ** rng.uniform(-2.0, 2.5), d_min=0.01, d_max=0.8,
        )
        reports.append(grid_oracle_subproblem("distortion", instance))
    assert [r for r in reports if not r.passed] == []


def test_power_oracle_on_random_instances(line_net, make_config, env_factory):
    rng = np.random.default_rng(11)
    two_link = Network(make_config(TWO_LINK_CONFIG))
    reports = []
    for n in range(100):
        if n % 2:
            net, w_star = two_link, rng.uniform(0.0, 3.0, 2)
            a = np.array([rng.uniform(-60.0, 0.0), rng.uniform(-60.0, 0.0), 0.0, 0.0])
        else:
            net, w_star = line_net, rng.uniform(0.0, 3.0, 1)
            a = np.array([rng.uniform(-60.0, 0.0), 0.0])
        reports.append(grid_oracle_subproblem("power", dict(net=net, env=env_factory(net), w_star=w_star, a=a)))
    assert [r for r in reports if not r.passed] == []


def test_dual_gradient_on_random_instances(six_node_net, params):
    net = six_node_net
    rng = np.random.default_rng(21)
    n, shape = net.num_nodes, net.source_mask.shape
    reports = []
    for _ in range(50):
        queues = initial_queues(net, params.q_bound, params.energy_bound)
        queues.data.q[:] = rng.uniform(0.0, 100.0, queues.data.q.shape)
        queues.energy.e[:] = rng.uniform(0.0, 500.0, n)
        decision = ControlDecision(
            e=rng.uniform(0.0, 10.0, n), g=rng.uniform(0.0, 15.0, n), d=rng.uniform(0.0, 15.0, n),
            y=rng.uniform(0.0, 25.0, n),
            r=np.where(net.source_mask, rng.uniform(0.0, 10.0, shape), 0.0),
            dist=np.where(net.source_mask, rng.uniform(0.01, 0.8, shape), 0.0),
            p=rng.uniform(0.0, 8.0, net.num_links),
            x=rng.uniform(0.0, 10.0, (net.num_links, net.num_sessions)),
            x_info=rng.uniform(0.0, 10.0, (net.num_links, net.num_commodities)),
        )
        dual = DualState(lam=np.where(net.has_grid, rng.uniform(0.0, 50.0, n), 0.0), rho=rng.uniform(0.0, 50.0, net.num_subsets))
        env = EnvironmentState(gain=net.base_gain, harvestable=rng.uniform(0.0, 50.0, n), price=rng.uniform(0.5, 1.0, n))
        reports.append(finite_difference_gradient(dict(net=net, params=params, queues=queues, env=env, decision=decision, dual=dual)))
    assert [r for r in reports if not r.passed] == []


def test_dual_gradient_matches_finite_differences(six_node_net, params, env_factory):
    net = six_node_net
    queues = initial_queues(net, params.q_bound, params.energy_bound)
    queues.data.q[net.node_index["A"], 0] = 40.0
    dec = ControlDecision.zeros(net)
    a, b, c = (net.node_index[n] for n in "ABC")
    dec.r[0, a] = 10.0
    dec.dist[0, a] = 0.3
    dec.dist[0, net.node_index["B"]] = 0.7
    dec.g[b] = 15.0
    dec.y[b] = 4.0
    dec.d[c] = 2.0
    dec.p[net.link_index[("A", "C")]] = 3.0
    dec.x[net.link_index[("A", "C")], 0] = 6.0
    dec.x_info[net.link_index[("A", "C")], 0] = 6.0
    dual = DualState(lam=np.where(net.has_grid, 2.0, 0.0), rho=np.array([1.0, 0.5, 2.0]))
    report = finite_difference_gradient(dict(net=net, params=params, queues=queues, env=env_factory(net, price=0.7), decision=dec, dual=dual))
    assert report.passed, report


def test_log_sinr_is_concave_in_log_power(six_node_net, env_factory):
    env = env_factory(six_node_net)
    assert log_sinr_concavity_violations(six_node_net, env, np.random.default_rng(0), samples=1000) == 0


def test_log_sinr_is_concave_under_fading(six_node_net):
    rng = np.random.default_rng(3)
    net = six_node_net
    env = EnvironmentState(
        gain=net.base_gain * rng.exponential(1.0, size=net.base_gain.shape),
        harvestable=np.zeros(net.num_nodes),
        price=np.ones(net.num_nodes),
    )
    assert log_sinr_concavity_violations(net, env, rng, samples=1000) == 0


def test_clean_row_has_no_violations(blank_row, params):
    row, layout = blank_row
    assert bound_violations(row, params, layout) == []
    assert availability_violations(row, params, layout) == []
    assert dual_bound_violations(row, params, layout) == []


def test_queue_and_energy_bounds(blank_row, params):
    row, layout = blank_row
    row["Q[C|s1|A|E]"] = 300.0
    row["E[A]"] = params.theta["A"] + 1.0
    row["E[C]"] = params.energy_bound["C"]
    kinds = sorted(v.kind for v in bound_violations(row, params, layout, slot=7))
    assert kinds == ["energy_bound_EH", "queue_bound"]


def test_energy_reserve_before_spending(blank_row, params):
    row, layout = blank_row
    row["p[A->C]"] = 1.0
    row["E[A]"] = 9.0
    row["d[B]"] = 15.0
    row["E[B]"] = 14.0
    found = {(v.kind, v.node) for v in bound_violations(row, params, layout)}
    assert found == {("energy_reserve", "A"), ("energy_reserve", "B")}


def test_transmit_backlog_gate(blank_row, params):
    row, layout = blank_row
    row["xi[A->C|s1|A|E]"] = 5.0
    row["Q[A|s1|A|E]"] = 19.0
    violations = bound_violations(row, params, layout)
    assert [v.kind for v in violations] == ["transmit_backlog"]
    row["Q[A|s1|A|E]"] = 20.0
    assert bound_violations(row, params, layout) == []


def test_availability_from_row(blank_row, params):
    row, layout = blank_row
    row["Ptot[A]"] = 5.0
    row["E[A]"] = 1.0
    row["xi[C->E|s1|A|E]"] = 4.0
    row["xi[C->F|s1|A|E]"] = 4.0
    row["Q[C|s1|A|E]"] = 6.0
    kinds = sorted(v.kind for v in availability_violations(row, params, layout))
    assert kinds == ["data_availability", "energy_availability"]


def test_dual_bounds(blank_row, params):
    row, layout = blank_row
    row["rhosum[A|s1]"] = 280.1
    row["lam[B]"] = 5600.0
    assert dual_bound_violations(row, params, layout) == []
    row["rhosum[A|s1]"] = 300.0
    row["lam[B]"] = 6000.0
    kinds = sorted(v.kind for v in dual_bound_violations(row, params, layout))
    assert kinds == ["lambda_bound", "rho_bound"]


def test_trace_scans_report_slots(blank_row, params):
    row, _ = blank_row
    rows = []
    for t in range(3):
        r = dict(row, t=t)
        if t == 2:
            r["Q[D|s1|B|F]"] = 291.0
            r["lam[C]"] = 9000.0
        rows.append(r)
    trace = pd.DataFrame(rows)
    bounds = check_trace_bounds(trace, params)
    assert [(v.kind, v.slot) for v in bounds] == [("queue_bound", 2)]
    duals = check_dual_bounds(trace, params)
    assert [(v.kind, v.slot) for v in duals] == [("lambda_bound", 2)]
