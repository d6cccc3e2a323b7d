"""Command-line client: exit codes, stderr error envelopes, artifact files
that are byte-identical across reruns."""

import json

import pytest

from attnshare import random_weights, save_model, toy_config
from attnshare.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-toy", "--out", str(root / "model")]) == 0
    ids = root / "prompt.txt"
    ids.write_text("".join(f"{t}\n" for t in [4, 8, 15, 16, 23, 42]))
    corpus = root / "corpus"
    corpus.mkdir()
    (corpus / "s1.txt").write_text("1\n2\n3\n4\n")
    (corpus / "s0.txt").write_text("9\n8\n7\n")
    return root


def _model(workdir):
    return str(workdir / "model")


def _stdout_payload(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


def _stderr_envelope(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_make_toy_matches_library_save(workdir, tmp_path):
    config = toy_config()
    save_model(tmp_path, config, random_weights(config))
    assert (workdir / "model" / "manifest.json").read_bytes() == \
        (tmp_path / "manifest.json").read_bytes()
    assert (workdir / "model" / "weights.bin").read_bytes() == \
        (tmp_path / "weights.bin").read_bytes()


def test_make_toy_reruns_byte_identical(tmp_path, capsys):
    for sub in ("a", "b"):
        assert main(["make-toy", "--out", str(tmp_path / sub),
                     "--span", "2:6", "--n-layers", "8"]) == 0
    capsys.readouterr()
    assert (tmp_path / "a" / "weights.bin").read_bytes() == \
        (tmp_path / "b" / "weights.bin").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == \
        (tmp_path / "b" / "manifest.json").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config"]["sharing_plan"] == [[2, 6]]


def test_run_writes_prompt_plus_continuation(workdir, tmp_path, capsys):
    out = tmp_path / "gen.txt"
    argv = ["run", "--model", _model(workdir), "--ids", str(workdir / "prompt.txt"),
            "--steps", "4", "--out", str(out)]
    assert main(argv) == 0
    payload = _stdout_payload(capsys)
    assert len(payload["tokens"]) == 4
    lines = out.read_text().splitlines()
    assert [int(x) for x in lines[:6]] == [4, 8, 15, 16, 23, 42]
    assert len(lines) == 10
    first = out.read_bytes()
    assert main(argv) == 0
    capsys.readouterr()
    assert out.read_bytes() == first


def test_ppl_csv_meta_and_rows(workdir, tmp_path, capsys):
    out_csv = tmp_path / "ppl.csv"
    out_json = tmp_path / "ppl.json"
    argv = ["ppl", "--model", _model(workdir), "--corpus", str(workdir / "corpus"),
            "--out", str(out_csv), "--out", str(out_json)]
    assert main(argv) == 0
    payload = _stdout_payload(capsys)
    assert payload["n_samples"] == 2

    lines = out_csv.read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    assert any(l.startswith("# tool=") for l in header)
    assert any(l.startswith("# version=") for l in header)
    assert any(l.startswith("# config_sha256=") for l in header)
    assert any(l.startswith("# flag.command=ppl") for l in header)
    data = [l for l in lines if not l.startswith("#")]
    assert data[0] == "sample,n_tokens,perplexity"
    assert data[1].startswith("s0.txt,3,") and data[2].startswith("s1.txt,4,")

    body = json.loads(out_json.read_text())
    assert body["meta"]["config_sha256"] == payload["config_sha256"]
    assert body["mean_perplexity"] == payload["mean_perplexity"]
    assert [row["sample"] for row in body["rows"]] == ["s0.txt", "s1.txt"]

    first_csv, first_json = out_csv.read_bytes(), out_json.read_bytes()
    assert main(argv) == 0
    capsys.readouterr()
    assert out_csv.read_bytes() == first_csv
    assert out_json.read_bytes() == first_json


def test_sim_outputs_pairwise_rows_and_groups(workdir, tmp_path, capsys):
    out_csv = tmp_path / "sim.csv"
    out_json = tmp_path / "sim.json"
    argv = ["sim", "--model", _model(workdir), "--ids", str(workdir / "prompt.txt"),
            "--span", "2:6", "--out", str(out_csv), "--out", str(out_json)]
    assert main(argv) == 0
    payload = _stdout_payload(capsys)
    assert payload["n_layers"] == 8

    data = [l for l in out_csv.read_text().splitlines() if not l.startswith("#")]
    assert data[0] == "layer_i,layer_j,similarity"
    assert len(data) == 1 + 64
    body = json.loads(out_json.read_text())
    assert body["groups"]  # grouping travels in the JSON artifact
    shared = {(row["layer_i"], row["layer_j"]): row["similarity"] for row in body["rows"]}
    assert shared[(2, 6)] == pytest.approx(1.0, abs=1e-6)
    flags = body["meta"]["flags"]
    assert flags["span"] == "2:6" and flags["head"] == "mean"


def test_var_outputs_layer_head_rows(workdir, tmp_path, capsys):
    out_csv = tmp_path / "var.csv"
    argv = ["var", "--model", _model(workdir), "--corpus", str(workdir / "corpus"),
            "--out", str(out_csv)]
    assert main(argv) == 0
    capsys.readouterr()
    data = [l for l in out_csv.read_text().splitlines() if not l.startswith("#")]
    assert data[0] == "layer,head,variance,wcv"
    assert len(data) == 1 + 8 * 4
    assert data[1].startswith("0,0,")


def test_budget_with_span_override(workdir, tmp_path, capsys):
    out_json = tmp_path / "budget.json"
    argv = ["budget", "--model", _model(workdir), "--seq-len", "4",
            "--span", "2:6", "--out", str(out_json)]
    assert main(argv) == 0
    payload = _stdout_payload(capsys)
    rows = payload["rows"]
    assert [r["plan"] for r in rows] == ["none", "2:6"]
    assert rows[0]["flops_total"] == 2651072
    assert rows[1]["flops_total"] == 2379232
    assert rows[1]["key_bytes_delta_pct"] == -50.0
    body = json.loads(out_json.read_text())
    assert body["rows"] == rows


def test_budget_default_uses_manifest_plan(workdir, capsys):
    assert main(["budget", "--model", _model(workdir), "--seq-len", "4"]) == 0
    rows = _stdout_payload(capsys)["rows"]
    assert [r["plan"] for r in rows] == ["none"]  # toy manifest has no plan


def test_parity_passes_and_is_repeatable(workdir, tmp_path, capsys):
    out_csv = tmp_path / "parity.csv"
    argv = ["parity", "--model", _model(workdir), "--seq-len", "8",
            "--n-inputs", "2", "--out", str(out_csv)]
    assert main(argv) == 0
    assert _stdout_payload(capsys)["ok"] is True
    first = out_csv.read_bytes()
    assert main(argv) == 0
    capsys.readouterr()
    assert out_csv.read_bytes() == first
    data = [l for l in first.decode().splitlines() if not l.startswith("#")]
    assert data[0] == "name,ok,detail"
    assert all(",true," in line for line in data[1:])


def test_parity_failure_exits_2(workdir, capsys):
    code = main(["parity", "--model", _model(workdir), "--seq-len", "8",
                 "--n-inputs", "1", "--tolerance", "0"])
    assert code == 2
    envelope = _stderr_envelope(capsys)
    assert envelope["error"]["type"] == "parity_mismatch"
    assert "decode_matches_full" in envelope["error"]["message"]


def test_missing_model_exits_3(workdir, capsys):
    code = main(["ppl", "--model", str(workdir / "nope"),
                 "--ids", str(workdir / "prompt.txt")])
    assert code == 3
    assert _stderr_envelope(capsys)["error"]["type"] == "io_error"


def test_unreachable_server_exits_3(workdir, capsys):
    code = main(["--server", "http://127.0.0.1:9", "budget",
                 "--model", _model(workdir)])
    assert code == 3
    envelope = _stderr_envelope(capsys)
    assert envelope["error"]["type"] == "io_error"
    assert "unreachable" in envelope["error"]["message"]


@pytest.mark.parametrize("argv_tail", [
    ["--span", "6:2"],
    ["--span", "abc"],
    ["--span", "1:2", "--no-sharing"],
    ["--cla", "1:0", "--cla-pairs"],
])
def test_bad_strategy_flags_exit_1(workdir, capsys, argv_tail):
    code = main(["budget", "--model", _model(workdir)] + argv_tail)
    assert code == 1
    envelope = _stderr_envelope(capsys)
    assert envelope["error"]["type"] in ("usage_error", "plan_error")


def test_sample_source_must_be_exactly_one(workdir, capsys):
    assert main(["ppl", "--model", _model(workdir)]) == 1
    assert _stderr_envelope(capsys)["error"]["type"] == "usage_error"
    code = main(["ppl", "--model", _model(workdir),
                 "--ids", str(workdir / "prompt.txt"),
                 "--corpus", str(workdir / "corpus")])
    assert code == 1


def test_bad_token_file_exits_1(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("1\nnope\n")
    code = main(["run", "--model", _model(workdir), "--ids", str(bad)])
    assert code == 1
    assert _stderr_envelope(capsys)["error"]["type"] == "input_error"


def test_unknown_out_extension_exits_1(workdir, tmp_path, capsys):
    code = main(["var", "--model", _model(workdir),
                 "--corpus", str(workdir / "corpus"),
                 "--out", str(tmp_path / "var.xlsx")])
    assert code == 1
    assert _stderr_envelope(capsys)["error"]["type"] == "usage_error"


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "make-toy" in capsys.readouterr().out
