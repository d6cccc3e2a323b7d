"""Config invariants, strategy composition rules, manifest round-trip."""

import pytest

from attnshare.config import ModelConfig, default_cla_pairs, parse_cla, toy_config
from attnshare.errors import ConfigError
from attnshare.plan import SharingPlan


def test_dimension_invariants():
    with pytest.raises(ConfigError):
        toy_config(d_model=60)  # not n_heads * d_head
    with pytest.raises(ConfigError):
        toy_config(n_heads=4, n_kv_heads=3)
    with pytest.raises(ConfigError):
        ModelConfig(n_layers=2, n_heads=2, n_kv_heads=2, d_model=6, d_head=3,
                    d_ff=8, vocab_size=16, max_seq=8)  # odd d_head
    with pytest.raises(ConfigError):
        toy_config(n_layers=0)


def test_plan_must_fit_layer_range():
    with pytest.raises(ConfigError):
        toy_config(sharing_plan=SharingPlan(((6, 9),)))


def test_cla_validation():
    with pytest.raises(ConfigError):
        toy_config(cla_map=((0, 1),))  # parent after child
    with pytest.raises(ConfigError):
        toy_config(cla_map=((3, 1), (3, 2)))  # duplicate child
    with pytest.raises(ConfigError):
        toy_config(cla_map=((1, 0), (2, 1)))  # chain through a child
    assert toy_config(cla_map=default_cla_pairs(8)).cla_parent(7) == 6


def test_cla_and_spans_disjoint():
    with pytest.raises(ConfigError):
        toy_config(sharing_plan=SharingPlan(((2, 6),)), cla_map=((3, 0),))
    with pytest.raises(ConfigError):
        toy_config(sharing_plan=SharingPlan(((2, 6),)), cla_map=((7, 4),))
    # touching disjoint layers is fine
    toy_config(sharing_plan=SharingPlan(((4, 6),)), cla_map=((1, 0),))


def test_group_size():
    assert toy_config().group_size == 1
    assert toy_config(n_kv_heads=2).group_size == 2
    assert toy_config(n_kv_heads=1).group_size == 4


def test_manifest_dict_roundtrip():
    config = toy_config(n_kv_heads=2, sharing_plan=SharingPlan(((4, 6),)), cla_map=((1, 0),))
    assert ModelConfig.from_manifest_dict(config.to_manifest_dict()) == config


def test_manifest_dict_missing_field():
    d = toy_config().to_manifest_dict()
    del d["vocab_size"]
    with pytest.raises(ConfigError):
        ModelConfig.from_manifest_dict(d)


def test_parse_cla():
    assert parse_cla(["3:2", "1:0"]) == ((1, 0), (3, 2))
    with pytest.raises(ConfigError):
        parse_cla(["3"])
    with pytest.raises(ConfigError):
        parse_cla(["a:b"])


def test_default_cla_pairs():
    assert default_cla_pairs(8) == ((1, 0), (3, 2), (5, 4), (7, 6))
    assert default_cla_pairs(5) == ((1, 0), (3, 2))
