import hashlib
import json
import os
import subprocess
import sys
from dataclasses import fields
from pathlib import Path

import pytest

from entirespace.cli import SPLIT_KEYS, RunConfig, main
from entirespace.es3 import ES3Config
from entirespace.harness import HarnessConfig, OptimConfig
from entirespace.hhsft import ModelConfig
from entirespace.synthlog import SimConfig, WorldConfig

ROOT = Path(__file__).resolve().parents[1]
EXAMPLE = ROOT / "configs" / "example.json"
SCHEMA = ROOT / "configs" / "runconfig.schema.json"

# a smaller grid than the bundled example keeps the repeated runs quick
FAST = {
    "schema_version": "1",
    "seed": 3,
    "world": {"n_users": 20, "n_items": 60, "n_queries": 10},
    "sim": {"requests": [60, 40, 30]},
    "model": {"d_H": 8, "d_G": 8},
    "optimizer": {"batch_size": 128, "steps": 4},
    "harness": {"seeds": [0, 1], "model_variants": ["HHFI", "+both"], "scale_ratios": [1, 2]},
}


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def files(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def fast(tmp_path_factory):
    return write_config(tmp_path_factory.mktemp("cfg") / "fast.json", FAST)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """The six commands on the bundled example config."""
    out = tmp_path_factory.mktemp("pipeline")
    cfg = str(EXAMPLE)
    codes = [
        run("gen-logs", "--config", cfg, "--out", out / "logs"),
        run("build-samples", "--config", cfg, "--logs", out / "logs", "--out", out / "samples"),
        run("train", "--config", cfg, "--data", out / "samples" / "es3.ndjson", "--out", out / "model"),
        run("eval", "--config", cfg, "--checkpoint", out / "model" / "model.json",
            "--data", out / "samples" / "test.ndjson", "--out", out / "eval"),
        run("ablate", "--config", cfg, "--out", out / "ablate"),
        run("scaling", "--config", cfg, "--out", out / "scaling"),
    ]
    return out, codes


def test_schema_file_lists_every_accepted_key():
    schema = json.loads(SCHEMA.read_text())
    props = schema["properties"]
    assert schema["additionalProperties"] is False
    assert props["schema_version"]["const"] == "1"
    expected = {
        "world": {f.name for f in fields(WorldConfig)},
        "sim": {f.name for f in fields(SimConfig)},
        "es3": {f.name for f in fields(ES3Config)},
        "model": {f.name for f in fields(ModelConfig)},
        "optimizer": {f.name for f in fields(OptimConfig)},
        "harness": {f.name for f in fields(HarnessConfig)} - {"data_seed"} | set(SPLIT_KEYS),
    }
    for section, keys in expected.items():
        assert set(props[section]["properties"]) == keys, section
        assert props[section]["additionalProperties"] is False


def test_example_config_validates():
    cfg = RunConfig.from_dict(json.loads(EXAMPLE.read_text()))
    assert cfg.world.n_users == 30 and cfg.harness.seeds == (0, 1)


def test_pipeline_completes_and_emits_reports(pipeline):
    out, codes = pipeline
    assert codes == [0] * 6
    expected = {
        "logs": {"world.ndjson", "events.ndjson", "candidates.ndjson"},
        "samples": {"es3.ndjson", "search_only.ndjson", "test.ndjson", "stats.json"},
        "model": {"model.json", "model.bin", "train.json"},
        "eval": {"scores.csv", "metrics.json"},
        "ablate": {"ablation.json", "ablation.csv"},
        "scaling": {"scaling.json", "scaling.csv"},
    }
    for step, names in expected.items():
        manifest = json.loads((out / step / "manifest.json").read_text())
        assert set(manifest["outputs"]) == names
        for name, digest in manifest["outputs"].items():
            assert hashlib.sha256((out / step / name).read_bytes()).hexdigest() == digest
        assert manifest["tool_version"] and manifest["seed"] == 0
        assert manifest["inputs"]["config"] == hashlib.sha256(EXAMPLE.read_bytes()).hexdigest()
    samples = json.loads((out / "samples" / "manifest.json").read_text())
    assert samples["inputs"]["events.ndjson"] == \
        json.loads((out / "logs" / "manifest.json").read_text())["outputs"]["events.ndjson"]
    metrics = json.loads((out / "eval" / "metrics.json").read_text())
    assert 0 <= metrics["auc"] <= 1
    ablation = json.loads((out / "ablate" / "ablation.json").read_text())
    assert {(r["dataset"], r["variant"]) for r in ablation["rows"]} == \
        {(d, v) for d in ("search_only", "es3") for v in ("HHFI", "+both")}
    stats = json.loads((out / "samples" / "stats.json").read_text())
    assert stats["stages"][1]["multipliers"]["samples"] == 3.0


def test_commands_do_not_mutate_inputs(pipeline, tmp_path):
    out, _ = pipeline
    before = files(out / "logs")
    assert run("build-samples", "--config", EXAMPLE, "--logs", out / "logs", "--out", tmp_path / "s") == 0
    assert files(out / "logs") == before


def test_gen_logs_twice_is_byte_identical(fast, tmp_path):
    assert run("gen-logs", "--config", fast, "--out", tmp_path / "a") == 0
    assert run("gen-logs", "--config", fast, "--out", tmp_path / "b") == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_seed_flag_overrides_config(fast, tmp_path):
    run("gen-logs", "--config", fast, "--out", tmp_path / "a")
    run("gen-logs", "--config", fast, "--out", tmp_path / "b", "--seed", 9)
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a["events.ndjson"] != b["events.ndjson"]
    assert json.loads(b["manifest.json"])["seed"] == 9


def test_build_train_eval_repeat_byte_identical_across_threads(fast, tmp_path):
    run("gen-logs", "--config", fast, "--out", tmp_path / "logs")
    for tag, threads in (("a", 1), ("b", 3)):
        d = tmp_path / tag
        assert run("build-samples", "--config", fast, "--logs", tmp_path / "logs", "--out", d / "samples",
                   "--threads", threads) == 0
        assert run("train", "--config", fast, "--data", d / "samples" / "es3.ndjson", "--out", d / "model") == 0
        assert run("eval", "--config", fast, "--checkpoint", d / "model" / "model", "--data",
                   d / "samples" / "test.ndjson", "--out", d / "eval") == 0
    for step in ("samples", "model", "eval"):
        assert files(tmp_path / "a" / step) == files(tmp_path / "b" / step), step


def test_stages_disabled_give_unit_multipliers(tmp_path):
    doc = dict(FAST, es3={"unexposed_expansion": False, "attribution": False, "searchification": False})
    cfg = write_config(tmp_path / "c.json", doc)
    run("gen-logs", "--config", cfg, "--out", tmp_path / "logs")
    assert run("build-samples", "--config", cfg, "--logs", tmp_path / "logs", "--out", tmp_path / "s") == 0
    stats = json.loads((tmp_path / "s" / "stats.json").read_text())
    for stage in stats["stages"]:
        assert all(v == 1.0 for v in stage["multipliers"].values())


def test_parallel_processes_give_identical_ablations(fast, tmp_path):
    env = dict(os.environ, PYTHONPATH=str(ROOT / "src"))
    cmd = [sys.executable, "-m", "entirespace", "ablate", "--config", fast]
    procs = [subprocess.Popen(cmd + ["--out", str(tmp_path / tag), "--threads", str(t)], env=env,
                              stderr=subprocess.PIPE) for tag, t in (("a", 1), ("b", 2), ("c", 2))]
    for p in procs:
        _, err = p.communicate(timeout=600)
        assert p.returncode == 0, err.decode()
    a = files(tmp_path / "a")
    assert a == files(tmp_path / "b") == files(tmp_path / "c")


def test_scaling_repeat_is_identical(fast, tmp_path):
    run("scaling", "--config", fast, "--out", tmp_path / "a")
    run("scaling", "--config", fast, "--out", tmp_path / "b", "--threads", 2)
    assert files(tmp_path / "a") == files(tmp_path / "b")


def _error(capsys):
    line = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(line)


@pytest.mark.parametrize("doc, field", [
    ({"schema_version": "2"}, "schema_version"),
    ({"seed": 0}, "schema_version"),
    ({"schema_version": "1", "extra": {}}, "extra"),
    ({"schema_version": "1", "sim": {"k_exp": 40}}, "sim.k_exp"),
    ({"schema_version": "1", "model": {"d_model": 4}}, "model.d_model"),
    ({"schema_version": "1", "harness": {"data_seed": 1}}, "harness.data_seed"),
    ({"schema_version": "1", "harness": {"test_fraction": 1.5}}, "harness.test_fraction"),
    ({"schema_version": "1", "seed": -1}, "seed"),
    ({"schema_version": "1", "world": []}, "world"),
])
def test_config_violations_exit_2(doc, field, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", doc)
    assert run("gen-logs", "--config", cfg, "--out", tmp_path / "o") == 2
    err = _error(capsys)
    assert err == {"error": "config", "exit": 2, "message": err["message"], "field": field}
    assert not (tmp_path / "o").exists()


def test_schema_version_is_checked_before_anything_else(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"schema_version": "0", "bogus": 1, "sim": {"k_exp": 999}})
    assert run("gen-logs", "--config", cfg, "--out", tmp_path / "o") == 2
    assert _error(capsys)["field"] == "schema_version"


def test_malformed_json_exits_2(tmp_path, capsys):
    (tmp_path / "c.json").write_text("{not json")
    assert run("gen-logs", "--config", tmp_path / "c.json", "--out", tmp_path / "o") == 2
    assert _error(capsys)["error"] == "config"


def test_missing_inputs_exit_3(fast, tmp_path, capsys):
    assert run("gen-logs", "--config", tmp_path / "none.json", "--out", tmp_path / "o") == 3
    assert _error(capsys)["error"] == "missing_input"
    assert run("build-samples", "--config", fast, "--logs", tmp_path / "empty", "--out", tmp_path / "o") == 3
    assert _error(capsys)["path"].endswith("world.ndjson")
    assert run("eval", "--config", fast, "--checkpoint", tmp_path / "m.json", "--data", tmp_path / "d",
               "--out", tmp_path / "o") == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_exits_4(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", dict(FAST, optimizer={"lr": 1e300, "steps": 6, "batch_size": 32}))
    run("gen-logs", "--config", cfg, "--out", tmp_path / "logs")
    run("build-samples", "--config", cfg, "--logs", tmp_path / "logs", "--out", tmp_path / "s")
    assert run("train", "--config", cfg, "--data", tmp_path / "s" / "es3.ndjson", "--out", tmp_path / "m") == 4
    err = _error(capsys)
    assert err["error"] == "numeric_abort" and "step" in err["message"]
