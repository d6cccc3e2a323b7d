"""Role contracts and shape accounting of the KV cache."""

import numpy as np
import pytest

from attnshare.cache import KvCache
from attnshare.config import toy_config
from attnshare.errors import CacheContractError, CapacityError, SequencingError
from attnshare.plan import SharingPlan


def _kv(config, fill=1.0):
    return np.full((config.n_kv_heads, config.d_head), fill, dtype=np.float32)


def test_standard_layer_stores_keys_and_values():
    config = toy_config()
    cache = KvCache(config)
    for _ in range(3):
        cache.append(0, _kv(config), _kv(config, 2.0))
    assert cache.token_count(0) == 3
    assert cache.keys(0).shape == (3, config.n_kv_heads, config.d_head)
    assert np.all(cache.values(0) == 2.0)


def test_member_layer_rejects_keys():
    config = toy_config(sharing_plan=SharingPlan(((2, 6),)))
    cache = KvCache(config)
    with pytest.raises(CacheContractError):
        cache.append(3, _kv(config), _kv(config))
    cache.append(3, None, _kv(config))  # values-only is the contract
    with pytest.raises(SequencingError):
        cache.keys(3)
    assert cache.values(3).shape[0] == 1


def test_standard_layer_requires_keys_and_values():
    config = toy_config()
    cache = KvCache(config)
    with pytest.raises(CacheContractError):
        cache.append(0, None, _kv(config))
    with pytest.raises(CacheContractError):
        cache.append(0, _kv(config), None)


def test_cla_child_stores_nothing_and_aliases_parent():
    config = toy_config(cla_map=((1, 0), (3, 2)))
    cache = KvCache(config)
    cache.append(0, _kv(config, 5.0), _kv(config, 6.0))
    cache.append(1, None, None)
    with pytest.raises(CacheContractError):
        cache.append(1, None, _kv(config))
    assert cache.token_count(1) == 1
    assert np.all(cache.keys(1) == 5.0)
    assert np.all(cache.values(1) == 6.0)


def test_capacity_error_when_full():
    config = toy_config(max_seq=2)
    cache = KvCache(config)
    cache.append(0, _kv(config), _kv(config))
    cache.append(0, _kv(config), _kv(config))
    with pytest.raises(CapacityError):
        cache.append(0, _kv(config), _kv(config))


def test_anchor_rows_sequencing():
    config = toy_config(sharing_plan=SharingPlan(((2, 6),)))
    cache = KvCache(config)
    with pytest.raises(SequencingError):
        cache.anchor_rows(0, member_layer=3)
    rows = np.ones((config.n_heads, 1), dtype=np.float32)
    cache.publish_rows(0, rows)
    assert cache.anchor_rows(0, member_layer=3) is rows
    cache.begin_step()
    with pytest.raises(SequencingError):
        cache.anchor_rows(0, member_layer=3)


def _fill_all_layers(config, cache, t):
    roles = config.layer_roles()
    for _ in range(t):
        for layer in range(config.n_layers):
            if config.cla_parent(layer) is not None:
                cache.append(layer, None, None)
            elif roles[layer].is_member:
                cache.append(layer, None, _kv(config))
            else:
                cache.append(layer, _kv(config), _kv(config))


def test_entry_counts_match_shape_law():
    t = 5
    per_token = 4 * 16  # n_kv_heads * d_head of the toy config
    plain = toy_config()
    cache = KvCache(plain)
    _fill_all_layers(plain, cache, t)
    assert cache.key_entries() == 8 * t * per_token
    assert cache.value_entries() == 8 * t * per_token

    spanned = toy_config(sharing_plan=SharingPlan(((2, 6),)))
    cache = KvCache(spanned)
    _fill_all_layers(spanned, cache, t)
    # 4 member layers drop their keys; values are untouched.
    assert cache.key_entries() == (8 - 4) * t * per_token
    assert cache.value_entries() == 8 * t * per_token
    assert cache.key_bytes() == 4 * cache.key_entries()


def test_empty_cache_counts_zero():
    cache = KvCache(toy_config())
    assert cache.key_entries() == 0
    assert cache.value_entries() == 0
