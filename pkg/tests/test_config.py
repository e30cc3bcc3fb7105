import json

import pytest

from collapse_lab.config import config_hash, from_dict, load_config, serialize
from collapse_lab.errors import ConfigError
from collapse_lab.scenarios import builtin_scenario


def minimal_qnd_dict():
    return {
        "name": "minimal",
        "space": {
            "subsystems": [
                {"label": "spin", "kind": "spin", "dim": 2},
                {"label": "pointer", "kind": "lattice1d", "dim": 2,
                 "grid_spacing": 1.0},
            ]
        },
        "operators": {
            "terms": [
                {"type": "spin_coupling", "spin_subsystem": "spin",
                 "pointer_subsystem": "pointer", "strength": 2.0}
            ]
        },
        "collapse": {"enabled": True, "c_scale": 1.0, "tau0": 1.0},
        "initial_state": {
            "kind": "product",
            "factors": {"spin": [1.0, 1.0], "pointer": [0.0, 1.0]},
        },
        "plan": {"dt": 0.001, "n_steps": 100, "seed": 0, "record_every": 10},
    }


def test_minimal_config_valid():
    cfg = from_dict(minimal_qnd_dict())
    assert cfg.name == "minimal"
    assert cfg.collapse_enabled
    assert cfg.subsystem_labels == ("spin", "pointer")


def test_unknown_key_named_in_error():
    d = minimal_qnd_dict()
    d["space"]["subsystems"][0]["massess"] = 2.0
    with pytest.raises(ConfigError) as err:
        from_dict(d)
    assert any("massess" in msg for msg in err.value.errors)


def test_all_errors_collected():
    d = minimal_qnd_dict()
    d["space"]["subsystems"][0]["massess"] = 2.0
    d["plan"]["dt"] = -1.0
    d["observables"] = [{"name": "x", "kind": "nope"}]
    with pytest.raises(ConfigError) as err:
        from_dict(d)
    text = "\n".join(err.value.errors)
    assert "massess" in text
    assert "dt" in text
    assert "nope" in text


def test_round_trip_hash_stable(tmp_path):
    cfg = builtin_scenario("qnd-two-level")
    text = serialize(cfg)
    path = tmp_path / "qnd.json"
    path.write_text(text)
    cfg2 = load_config(path)
    assert config_hash(cfg) == config_hash(cfg2)
    # key order must not matter
    shuffled = json.loads(text)
    shuffled = dict(reversed(list(shuffled.items())))
    cfg3 = from_dict(shuffled)
    assert config_hash(cfg) == config_hash(cfg3)


def test_parse_error_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"space": [,]}')
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert any("line 1" in msg for msg in err.value.errors)


def test_unknown_subsystem_in_term():
    d = minimal_qnd_dict()
    d["operators"]["terms"][0]["spin_subsystem"] = "ghost"
    with pytest.raises(ConfigError) as err:
        from_dict(d)
    assert any("ghost" in msg for msg in err.value.errors)


def test_interaction_needs_distinct_subsystems():
    d = minimal_qnd_dict()
    d["space"]["subsystems"].append(
        {"label": "p2", "kind": "lattice1d", "dim": 4, "grid_spacing": 1.0}
    )
    d["operators"]["terms"] = [
        {"type": "interaction", "subsystem_i": "p2", "subsystem_j": "p2",
         "potential": {"family": "gaussian_well", "depth": 1.0, "width": 1.0}}
    ]
    with pytest.raises(ConfigError) as err:
        from_dict(d)
    assert any("distinct" in msg for msg in err.value.errors)


def test_branches_must_partition():
    d = minimal_qnd_dict()
    d["branches"] = [{"label": "up", "subsystem": "spin", "sites": [0]}]
    with pytest.raises(ConfigError) as err:
        from_dict(d)
    assert any("partition" in msg for msg in err.value.errors)


def test_factor_length_checked():
    d = minimal_qnd_dict()
    d["initial_state"]["factors"]["spin"] = [1.0, 0.0, 0.0]
    with pytest.raises(ConfigError):
        from_dict(d)


def test_plan_divisibility_checked():
    d = minimal_qnd_dict()
    d["plan"]["record_every"] = 7
    with pytest.raises(ConfigError):
        from_dict(d)


def test_shift_sector_requires_periodic():
    d = minimal_qnd_dict()
    d["initial_state"]["shift_sector"] = 0
    with pytest.raises(ConfigError) as err:
        from_dict(d)
    assert any("periodic" in msg for msg in err.value.errors)


def test_quasimomentum_audit_requires_periodic():
    d = minimal_qnd_dict()
    d["audits"] = [{"name": "t", "kind": "total_quasimomentum"}]
    with pytest.raises(ConfigError):
        from_dict(d)


def test_amplitude_pairs_normalized():
    d = minimal_qnd_dict()
    d["initial_state"]["factors"]["spin"] = [[1.0, 0.5], 0.25]
    cfg = from_dict(d)
    assert cfg.initial_state["factors"]["spin"] == [[1.0, 0.5], [0.25, 0.0]]


def test_external_potential_flag():
    d = minimal_qnd_dict()
    d["operators"]["terms"].append(
        {"type": "external_potential", "subsystem": "pointer",
         "samples": [0.0, 1.0]}
    )
    cfg = from_dict(d)
    assert cfg.has_external_potential
