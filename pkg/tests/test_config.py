import copy

import pytest
import yaml

from wmsn.config import load_config, resolve_config_path
from wmsn.errors import ConfigError
from wmsn.models import PowerClass

from .conftest import LINE_CONFIG, TWO_LINK_CONFIG


def test_bundled_six_node_loads_by_bare_name(six_node_config):
    assert six_node_config.name == "six_node"
    assert [n.id for n in six_node_config.nodes] == ["A", "B", "C", "D", "E", "F"]
    assert len(six_node_config.links) == 7
    assert six_node_config.node("C").power_class == PowerClass.ME
    assert six_node_config.node("E").power_class == PowerClass.EXT
    assert six_node_config.l_max == 2


def test_bundled_name_with_suffix_resolves():
    assert resolve_config_path("six_node").name == "six_node.cfg"
    assert resolve_config_path("six_node.cfg").exists()


@pytest.mark.parametrize("name", ["fig2.cfg", "fig2"])
def test_published_name_loads_bundled_network(name):
    assert resolve_config_path(name).name == "six_node.cfg"
    config = load_config(name)
    assert config.name == "six_node"
    assert len(config.nodes) == 6 and len(config.links) == 7


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.cfg")


def test_yaml_syntax_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("nodes: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(path)


def test_top_level_must_be_mapping(tmp_path):
    path = tmp_path / "list.cfg"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(path)


def test_name_defaults_to_file_stem(tmp_path):
    data = copy.deepcopy(LINE_CONFIG)
    data.pop("name")
    path = tmp_path / "tiny.cfg"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    assert load_config(path).name == "tiny"


def test_access_probability_out_of_range(make_config):
    data = copy.deepcopy(LINE_CONFIG)
    data["links"][0]["q"] = 1.5
    with pytest.raises(ConfigError, match="probability out of range"):
        make_config(data)


def test_access_probabilities_summing_above_one(make_config):
    data = copy.deepcopy(TWO_LINK_CONFIG)
    data["links"] = [{"from": "A", "to": "C", "q": 0.7}, {"from": "A", "to": "D", "q": 0.7}]
    with pytest.raises(ConfigError, match="probability out of range"):
        make_config(data)


def test_missing_entropy_subset_is_named(make_config):
    data = copy.deepcopy(TWO_LINK_CONFIG)
    del data["sessions"][0]["entropy_table"]["A,B"]
    with pytest.raises(ConfigError, match=r"missing entropy entry for subset \{A, B\}"):
        make_config(data)


def test_entropy_keys_are_canonicalised(make_config):
    data = copy.deepcopy(TWO_LINK_CONFIG)
    data["sessions"][0]["entropy_table"] = {"A": 1.0, "B": 1.0, "B+A": 2.0}
    config = make_config(data)
    assert config.sessions[0].entropy_table["A,B"] == 2.0


def test_gaussian_entropy_model_fills_table(make_config):
    data = copy.deepcopy(TWO_LINK_CONFIG)
    session = data["sessions"][0]
    del session["entropy_table"]
    session["entropy"] = {"model": "gaussian", "variances": [1.0, 1.0], "correlation": 0.5}
    table = make_config(data).sessions[0].entropy_table
    assert set(table) == {"A", "B", "A,B"}
    assert table["A,B"] > table["A"] > 0


def test_unknown_node_in_link(make_config):
    data = copy.deepcopy(LINE_CONFIG)
    data["links"][0]["to"] = "Z"
    with pytest.raises(ConfigError, match="unknown node"):
        make_config(data)


def test_l_max_below_degree_rejected(make_config):
    data = copy.deepcopy(TWO_LINK_CONFIG)
    data["parameters"]["l_max"] = 1
    data["links"].append({"from": "A", "to": "D", "q": 0.0})
    with pytest.raises(ConfigError, match="l_max"):
        make_config(data)


def test_grid_caps_on_eh_node_rejected(make_config):
    data = copy.deepcopy(LINE_CONFIG)
    data["nodes"][0]["y_max"] = 3
    with pytest.raises(ConfigError, match="no grid or battery caps"):
        make_config(data)


def test_unknown_utility_rejected(make_config):
    data = copy.deepcopy(LINE_CONFIG)
    data["sessions"][0]["utility"] = "sqrt"
    with pytest.raises(ConfigError, match="unknown utility"):
        make_config(data)


def test_table_values_fill_blocks(make_config):
    config = make_config(LINE_CONFIG)
    node = config.node("A")
    assert node.p_max == 8.0
    assert node.harvest_range == (0.0, 50.0)
    assert config.links[0].noise == 5e-13
    session = config.sessions[0]
    assert (session.r_max, session.sense_cost, session.d_min, session.d_max_distortion) == (10.0, 0.1, 0.01, 0.8)


def test_initial_data_key_format(make_config):
    data = copy.deepcopy(LINE_CONFIG)
    data["initial_data"] = {"A|s1|A": 3.0}
    with pytest.raises(ConfigError, match="initial_data"):
        make_config(data)
