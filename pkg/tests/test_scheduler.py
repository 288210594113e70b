import numpy as np
import pytest

from wmsn.controller import link_weight_matrix
from wmsn.scheduler import ScheduleDecision, coding_consistency_check, schedule, schedule_link

EPSILON = 30.0


@pytest.fixture
def backlog(six_node_net):
    net = six_node_net
    data = np.zeros((net.num_nodes, net.num_commodities))
    a = net.node_index["A"]
    data[a, net.commodity_names.index("s1|A|E")] = 160.0
    data[a, net.commodity_names.index("s1|A|F")] = 20.0
    return data


def _schedule(net, data, caps, **kwargs):
    a = np.zeros(net.num_nodes)
    _, big_w = link_weight_matrix(net, data, a, EPSILON)
    return schedule(net, big_w, caps, data, a, EPSILON, **kwargs)


def test_positive_weight_gets_full_capacity(six_node_net, backlog):
    net = six_node_net
    dec = _schedule(net, backlog, np.full(net.num_links, 5.0))
    l = net.link_index[("A", "C")]
    assert dec.chosen_session(net, ("A", "C")) == "s1"
    assert dec.x[l, 0] == 5.0
    # only the pair whose differential clears epsilon carries information
    assert dec.x_info[l, net.commodity_names.index("s1|A|E")] == 5.0
    assert dec.x_info[l, net.commodity_names.index("s1|A|F")] == 0.0
    assert dec.chosen_session(net, ("B", "C")) is None
    assert np.all(dec.x[net.link_index[("B", "C")]] == 0.0)


def test_weight_below_pair_penalty_idles(six_node_net):
    net = six_node_net
    data = np.zeros((net.num_nodes, net.num_commodities))
    data[net.node_index["A"], 0] = 110.0
    dec = _schedule(net, data, np.full(net.num_links, 5.0))
    assert np.all(dec.chosen == -1)
    assert dec.x.sum() == 0.0


def test_defensive_clamp_limits_to_backlog(six_node_net, backlog):
    net = six_node_net
    caps = np.full(net.num_links, 200.0)
    loose = _schedule(net, backlog, caps)
    clamped = _schedule(net, backlog, caps, defensive_clamp=True)
    l, k = net.link_index[("A", "C")], net.commodity_names.index("s1|A|E")
    assert loose.x_info[l, k] == 200.0
    assert clamped.x_info[l, k] == 160.0
    assert coding_consistency_check(net, clamped, caps) == []


def test_schedule_link_view(six_node_net, backlog):
    net = six_node_net
    a = np.zeros(net.num_nodes)
    _, big_w = link_weight_matrix(net, backlog, a, EPSILON)
    session, x_row, info_row = schedule_link(net, ("A", "C"), big_w, np.full(net.num_links, 5.0), backlog, a, EPSILON)
    assert session == "s1"
    assert x_row.tolist() == [5.0]
    assert info_row.sum() == 5.0


def test_consistency_check_flags_info_above_physical(six_node_net):
    net = six_node_net
    dec = ScheduleDecision(
        chosen=np.zeros(net.num_links, dtype=int),
        x=np.zeros((net.num_links, 1)),
        x_info=np.zeros((net.num_links, net.num_commodities)),
    )
    dec.x[0, 0] = 2.0
    dec.x_info[0, 1] = 3.0
    kinds = [v.kind for v in coding_consistency_check(net, dec, capacities=np.ones(net.num_links))]
    assert sorted(kinds) == ["capacity", "coding"]
