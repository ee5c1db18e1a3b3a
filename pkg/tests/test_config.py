import json

import pytest

from limber.config import ExperimentConfig, SchemaError


def test_defaults_round_trip_through_json(tmp_path):
    cfg = ExperimentConfig(seed=11)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    back = ExperimentConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.to_json() == cfg.to_json()


def test_partial_sections_keep_other_defaults():
    cfg = ExperimentConfig.from_dict({"limber": {"steps": 10}, "vqa": {"shots": [0, 2]}})
    assert cfg.limber.steps == 10
    assert cfg.limber.lr == ExperimentConfig().limber.lr
    assert cfg.vqa.shots == (0, 2)


def test_encoder_override_keeps_the_variants_own_defaults():
    base = ExperimentConfig().encoders["contrastive"]
    cfg = ExperimentConfig.from_dict({"encoders": {"contrastive": {"steps": 5}}})
    assert cfg.encoders["contrastive"].steps == 5
    assert cfg.encoders["contrastive"].hidden == base.hidden
    assert cfg.encoders["ssl"] == ExperimentConfig().encoders["ssl"]


@pytest.mark.parametrize("data", [
    {"limbr": {}},
    {"limber": {"stepz": 3}},
    {"encoders": {"vit": {}}},
    {"encoders": {"ssl": {"width": 3}}},
])
def test_unknown_keys_are_rejected(data):
    with pytest.raises(SchemaError):
        ExperimentConfig.from_dict(data)


@pytest.mark.parametrize("data", [
    {"seed": "7"},
    {"seed": True},
    {"limber": {"lr": "fast"}},
    {"limber": {"tune_encoder": 1}},
    {"vqa": {"shots": 4}},
    {"vqa": {"shots": [0, "two"]}},
    {"data": []},
])
def test_wrong_types_are_rejected(data):
    with pytest.raises(SchemaError):
        ExperimentConfig.from_dict(data)


def test_integers_are_accepted_for_floats():
    assert ExperimentConfig.from_dict({"limber": {"lr": 1}}).limber.lr == 1.0


def test_values_rejected_by_a_section_become_schema_errors():
    with pytest.raises(SchemaError):
        ExperimentConfig.from_dict({"limber": {"lr": -1.0}})
    with pytest.raises(SchemaError):
        ExperimentConfig.from_dict({"variants": ["classifier", "vit"]})


def test_load_rejects_malformed_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SchemaError):
        ExperimentConfig.load(bad)
    arr = tmp_path / "arr.json"
    arr.write_text(json.dumps([1, 2]))
    with pytest.raises(SchemaError):
        ExperimentConfig.load(arr)
