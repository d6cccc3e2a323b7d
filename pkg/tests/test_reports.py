"""Artifact serialization: repr floats, sorted meta, no time-dependent content."""

import json

import numpy as np

from attnshare import toy_config
from attnshare.reports import (
    build_meta,
    config_digest,
    csv_text,
    format_cell,
    json_text,
    plain,
)


def test_config_digest_stable_and_plan_sensitive():
    from attnshare import SharingPlan
    a = config_digest(toy_config())
    assert a == config_digest(toy_config())
    assert len(a) == 64
    assert a != config_digest(toy_config(sharing_plan=SharingPlan(((2, 6),))))


def test_format_cell_types():
    assert format_cell(True) == "true"
    assert format_cell(False) == "false"
    assert format_cell(3) == "3"
    assert format_cell(0.1) == "0.1"
    assert format_cell(np.float32(0.5)) == "0.5"
    assert format_cell(float(np.float32(1) / 3)) == "0.3333333432674408"
    assert format_cell("x,y") == "x,y"


def test_plain_handles_numpy_containers():
    out = plain({"a": np.int64(2), "b": np.arange(3.0), "c": (np.float32(1.5),)})
    assert out == {"a": 2, "b": [0.0, 1.0, 2.0], "c": [1.5]}
    assert json.dumps(out)  # round-trips through json


def test_csv_layout():
    meta = build_meta(toy_config(), {"command": "x", "tau": 0.8})
    text = csv_text(("a", "b"), [{"a": 1, "b": 2.5}, {"a": 3, "b": -0.5}], meta)
    lines = text.splitlines()
    assert lines[0] == "# tool=attnshare"
    assert lines[1].startswith("# version=")
    assert lines[2].startswith("# config_sha256=")
    assert lines[3] == "# flag.command=x"
    assert lines[4] == "# flag.tau=0.8"
    assert lines[5] == "a,b"
    assert lines[6] == "1,2.5"
    assert lines[7] == "3,-0.5"
    assert text.endswith("\n")


def test_json_sorted_and_newline_terminated():
    text = json_text({"z": 1, "a": np.float64(2.0)})
    assert text == '{\n  "a": 2.0,\n  "z": 1\n}\n'


def test_identical_inputs_identical_bytes():
    meta = build_meta(toy_config(), {"command": "y"})
    rows = [{"v": 1.0 / 3.0}]
    assert csv_text(("v",), rows, meta) == csv_text(("v",), rows, meta)
    assert json_text({"meta": meta, "rows": rows}) == json_text({"meta": meta, "rows": rows})
