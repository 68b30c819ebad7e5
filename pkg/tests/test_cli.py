"""CLI tests: stage wiring, manifests, exit codes."""

import json
from pathlib import Path

import pytest

from trajlab.cli import main


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def staged_workdir(tmp_path_factory):
    wd = tmp_path_factory.mktemp("wd")
    assert run("gen-scenes", "--workdir", str(wd), "--seed", "42") == 0
    assert run("collect", "--workdir", str(wd), "--seed", "42") == 0
    return wd


def test_gen_scenes_writes_suites_and_manifest(staged_workdir):
    assert (staged_workdir / "scenes_train.json").exists()
    assert (staged_workdir / "scenes_test.json").exists()
    manifest = json.loads((staged_workdir / "manifest.json").read_text())
    assert "gen-scenes" in manifest["stages"]
    assert "collect" in manifest["stages"]


def test_collect_without_scenes_fails_with_exit_2(tmp_path):
    assert run("collect", "--workdir", str(tmp_path), "--seed", "42") == 2


def test_eval_without_checkpoint_names_train_stage(staged_workdir, capsys):
    code = run("eval", "--workdir", str(staged_workdir), "--seed", "42",
               "--method", "trained")
    err = capsys.readouterr().err
    assert code == 2
    assert "train" in err


def test_eval_without_memory_fails(tmp_path):
    assert run("gen-scenes", "--workdir", str(tmp_path), "--seed", "42") == 0
    assert run("eval", "--workdir", str(tmp_path), "--seed", "42",
               "--method", "plain") == 2


def test_stale_input_detected_by_manifest_hash(tmp_path, capsys):
    assert run("gen-scenes", "--workdir", str(tmp_path), "--seed", "42") == 0
    assert run("collect", "--workdir", str(tmp_path), "--seed", "42",
               "--split", "train") == 0
    scenes = tmp_path / "scenes_train.json"
    scenes.write_text(scenes.read_text().replace("kitchen", "kitchen"))
    # identical rewrite keeps the hash: still fine
    assert run("collect", "--workdir", str(tmp_path), "--seed", "42",
               "--split", "train") == 0
    data = json.loads(scenes.read_text())
    data["master_seed"] = 123456
    scenes.write_text(json.dumps(data))
    code = run("collect", "--workdir", str(tmp_path), "--seed", "42",
               "--split", "train")
    assert code == 2
    assert "manifest hash differs" in capsys.readouterr().err


def test_config_seed_mismatch_counts_as_stale(tmp_path, capsys):
    assert run("gen-scenes", "--workdir", str(tmp_path), "--seed", "42") == 0
    code = run("collect", "--workdir", str(tmp_path), "--seed", "7")
    assert code == 2
    assert "manifest hash differs" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path):
    config = tmp_path / "config.json"
    config.write_text('{"seed": 1, "bogus_section": {}}')
    code = run("gen-scenes", "--workdir", str(tmp_path), "--config", str(config))
    assert code == 2


def test_unknown_flag_gives_exit_2(tmp_path):
    assert run("gen-scenes", "--workdir", str(tmp_path), "--bogus") == 2


def test_stage_rerun_is_byte_identical(staged_workdir, tmp_path):
    first = (staged_workdir / "memory_train.jsonl").read_bytes()
    assert run("collect", "--workdir", str(staged_workdir), "--seed", "42",
               "--split", "train") == 0
    assert (staged_workdir / "memory_train.jsonl").read_bytes() == first


def test_report_requires_eval_outputs(staged_workdir):
    assert run("report", "--workdir", str(staged_workdir), "--seed", "42") == 2
