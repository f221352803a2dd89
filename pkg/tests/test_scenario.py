import pytest
import yaml

from gullyfire.scenario import ScenarioError, load_scenario, parse_scenario, scenario_digest


def write_yaml(path, document) -> None:
    path.write_text(yaml.safe_dump(document), encoding="utf-8")


def test_load_scenario_from_disk(tmp_path, make_document):
    path = tmp_path / "gully.yaml"
    write_yaml(path, make_document())
    scenario = load_scenario(path)
    assert scenario.curve.kind == "segment"
    assert scenario.epsilon_list == [0.2, 0.1, 0.05]
    assert scenario.analysis.lambda_ == pytest.approx(0.2)


def test_every_shipped_scenario_loads(scenarios_dir):
    names = sorted(path.name for path in scenarios_dir.glob("*.yaml"))
    assert names == ["circle.yaml", "heat.yaml", "straight.yaml", "zero.yaml"]
    for name in names:
        load_scenario(scenarios_dir / name)


def test_seed_override(tmp_path, make_document):
    path = tmp_path / "gully.yaml"
    write_yaml(path, make_document(analysis={"seed": 3}))
    assert load_scenario(path).analysis.seed == 3
    assert load_scenario(path, seed=11).analysis.seed == 11


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError, match="Cannot read scenario"):
        load_scenario(tmp_path / "absent.yaml")


def test_malformed_yaml(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("curve: [unclosed\n", encoding="utf-8")
    with pytest.raises(ScenarioError, match="Malformed YAML"):
        load_scenario(path)


def test_top_level_must_be_a_mapping(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ScenarioError, match="expected a mapping"):
        load_scenario(path)


def test_errors_name_the_source_and_key(caplog, make_document):
    with pytest.raises(ScenarioError) as raised:
        parse_scenario(make_document(kernel={"r": -1.0}), "gully.yaml")
    assert str(raised.value).startswith("gully.yaml: invalid scenario")
    assert "kernel.r" in str(raised.value)
    assert "invalid scenario" in caplog.text


def test_digest_ignores_key_order(make_document):
    document = make_document()
    shuffled = {name: dict(reversed(list(section.items()))) for name, section in reversed(list(document.items()))}
    assert scenario_digest(parse_scenario(document)) == scenario_digest(parse_scenario(shuffled))
    changed = parse_scenario(make_document(domain={"T": 0.02}))
    assert scenario_digest(changed) != scenario_digest(parse_scenario(document))
