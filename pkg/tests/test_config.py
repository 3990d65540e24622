import pytest

from mrcoord.config import (
    ScenarioConfig,
    config_hash,
    dump_config,
    from_dict,
    parse_config,
    parse_text,
    with_overrides,
)
from mrcoord.errors import ConfigurationError


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    c = parse_config(p)
    assert c.team_size == 7 and len(c.tasks) == 10
    assert c.budget == 1200 and c.match_length == 1200.0
    assert c.channel.loss == 0.1
    assert c == ScenarioConfig()


def test_roundtrip():
    c = from_dict({"channel": {"loss": 0.25}, "team_size": 5, "seeds": [3, 4]})
    again = parse_text(dump_config(c))
    assert again == c
    assert config_hash(again) == config_hash(c)


def test_desk_preset():
    c = from_dict({}, preset="desk")
    assert c.match_length == 120.0 and c.budget == 120
    assert from_dict({"budget": 50}, preset="desk").budget == 50


def test_more_agents_than_tasks_rejected():
    tasks = [{"id": f"t{k}", "kind": "generic", "target": [0, 0], "priority": k} for k in range(7)]
    with pytest.raises(ConfigurationError, match="N <= M"):
        from_dict({"team_size": 8, "tasks": tasks})


def test_unknown_key_named_with_line():
    with pytest.raises(ConfigurationError, match=r"line 2.*'bogus'"):
        parse_text("team_size: 5\nbogus: 1\n")
    with pytest.raises(ConfigurationError, match="lossy"):
        parse_text("channel:\n  lossy: 0.2\n")


def test_malformed_yaml_has_position():
    with pytest.raises(ConfigurationError, match=r"line \d+, column \d+"):
        parse_text("team_size: [1, 2\n")


def test_type_errors_are_described():
    with pytest.raises(ConfigurationError, match="team_size"):
        parse_text("team_size: many\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        parse_config(tmp_path / "nope.yaml")


def test_unknown_preset():
    with pytest.raises(ConfigurationError, match="preset"):
        from_dict({}, preset="huge")


@pytest.mark.parametrize("override", [
    {"dt": 0.5},
    {"channel": {"loss": 1.5}},
    {"opponents": [{"anchor": [9, 9]}]},
    {"coordination": {"resolution": 4}},
    {"overlap_threshold": 1},
])
def test_constraint_violations(override):
    with pytest.raises(ConfigurationError):
        from_dict(override)


def test_with_overrides_is_nested():
    c = with_overrides(ScenarioConfig(), channel={"loss": 0.0})
    assert c.channel.loss == 0.0 and c.channel.latency_mean == 0.1


def test_hash_changes_with_content():
    assert config_hash(ScenarioConfig()) != config_hash(from_dict({"budget": 10}))


@pytest.mark.parametrize("name", ["default", "desk", "perfect", "lossy"])
def test_shipped_configs_parse(name):
    from pathlib import Path

    c = parse_config(Path(__file__).parent.parent / "configs" / f"{name}.yaml")
    assert parse_text(dump_config(c)) == c
