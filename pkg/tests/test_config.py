import json

import pytest

from autoframe.config import (
    ActuatorKind,
    ConfigError,
    SensorKind,
    fixture_config,
    fixture_document,
    parse_vehicle_config,
    serialize_vehicle_config,
    validate_config,
)


def test_fixture_parses_with_three_sensors_two_actuators():
    cfg = parse_vehicle_config(fixture_document())
    assert cfg.model_name == "C-Class Coupé"
    assert len(cfg.sensors) == 3
    assert len(cfg.actuators) == 2
    assert {s.kind for s in cfg.sensors} == {
        SensorKind.RGB_CAMERA, SensorKind.DEPTH_CAMERA, SensorKind.VEHICLE_STATE}
    assert {a.kind for a in cfg.actuators} == {ActuatorKind.STEERING, ActuatorKind.DISPLAY}


def test_fixture_physical_parameters():
    cfg = fixture_config()
    assert cfg.physical.wheelbase == 2.84
    assert cfg.physical.mass == 1600.0
    assert cfg.physical.max_steering_angle == 0.61
    cam = cfg.sensor("rgb").camera()
    assert (cam.width, cam.height) == (320, 240)
    assert cam.fov_deg == 90.0
    assert cam.focal_px == pytest.approx(160.0)


def test_empty_sensor_and_actuator_lists_are_valid():
    doc = json.dumps({
        "model": "bare",
        "physical": {"mass": 1000, "wheelbase": 2.5,
                     "max_steering_angle": 0.5, "tire_friction": 1.0},
        "sensors": [],
        "actuators": [],
    })
    cfg = parse_vehicle_config(doc)
    assert cfg.sensors == ()
    assert cfg.actuators == ()
    assert validate_config(cfg) == []


def test_missing_port_names_field_path():
    doc = json.loads(fixture_document())
    del doc["actuators"][0]["connection"]["port"]
    with pytest.raises(ConfigError) as err:
        parse_vehicle_config(json.dumps(doc))
    assert err.value.path == "actuators[0].connection.port"
    assert "actuators[0].connection.port" in str(err.value)


def test_syntax_error_reported():
    with pytest.raises(ConfigError) as err:
        parse_vehicle_config("{not json")
    assert "syntax" in str(err.value)


def test_unknown_sensor_kind_is_a_parse_error():
    doc = json.loads(fixture_document())
    doc["sensors"][0]["kind"] = "lidar"
    with pytest.raises(ConfigError) as err:
        parse_vehicle_config(json.dumps(doc))
    assert "lidar" in str(err.value)


def test_round_trip_is_identity():
    cfg = fixture_config()
    assert parse_vehicle_config(serialize_vehicle_config(cfg)) == cfg


def test_validate_fixture_is_clean():
    assert validate_config(fixture_config()) == []


def test_duplicate_sensor_name_flagged():
    doc = json.loads(fixture_document())
    doc["sensors"][1]["name"] = doc["sensors"][0]["name"]
    cfg_doc = json.dumps(doc)
    with pytest.raises(ConfigError) as err:
        parse_vehicle_config(cfg_doc)
    assert err.value.rule == "unique-names"


def test_fov_boundary_is_excluded():
    doc = json.loads(fixture_document())
    doc["sensors"][0]["params"]["fov_deg"] = 180.0
    with pytest.raises(ConfigError) as err:
        parse_vehicle_config(json.dumps(doc))
    assert err.value.rule == "fov-range"


def test_validate_reports_violations_as_data():
    import dataclasses
    cfg = fixture_config()
    bad = dataclasses.replace(cfg, sensors=cfg.sensors + (cfg.sensors[0],))
    violations = validate_config(bad)
    assert len(violations) == 1
    assert violations[0].rule == "unique-names"
    assert violations[0].path.startswith("sensors[3]")


def test_steering_limit_above_physical_max_flagged():
    doc = json.loads(fixture_document())
    doc["actuators"][0]["limits"]["max_angle"] = 0.9
    with pytest.raises(ConfigError) as err:
        parse_vehicle_config(json.dumps(doc))
    assert err.value.rule == "steering-limit"


def test_bad_port_flagged():
    doc = json.loads(fixture_document())
    doc["sensors"][0]["connection"]["port"] = 0
    with pytest.raises(ConfigError) as err:
        parse_vehicle_config(json.dumps(doc))
    assert err.value.rule == "port-range"


def test_parse_accepts_implies_validate_clean():
    # Sweep a handful of structurally valid variants through parse and
    # confirm the parse/validate agreement contract.
    base = json.loads(fixture_document())
    variants = []
    for fov in (1.0, 45.0, 179.0):
        doc = json.loads(json.dumps(base))
        doc["sensors"][0]["params"]["fov_deg"] = fov
        variants.append(doc)
    for port in (1, 80, 65535):
        doc = json.loads(json.dumps(base))
        doc["actuators"][1]["connection"]["port"] = port
        variants.append(doc)
    for doc in variants:
        cfg = parse_vehicle_config(json.dumps(doc))
        assert validate_config(cfg) == []
