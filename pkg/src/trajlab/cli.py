"""Pipeline CLI: seeded, resumable stages over a working directory.

Stages: gen-scenes -> collect -> gen-prefs -> train -> eval / correlate ->
report. Each stage records input/output hashes in manifest.json; consuming a
file whose hash no longer matches the producer's record aborts with exit
code 2 (stale input). Exit codes: 0 ok, 2 validation error, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from . import harness, memory, prefgen, retriever
from .config import ALL_METHODS, Config, ConfigError, load_config
from .seeding import canonical_json, sha256_hex
from .suite import build_suite, suite_from_json, suite_to_json

MANIFEST = "manifest.json"

# stage -> files it produces
STAGE_OUTPUTS = {
    "gen-scenes": ("scenes_train.json", "scenes_test.json"),
    "collect": ("memory_train.jsonl", "memory_test.jsonl"),
    "gen-prefs": ("prefs.jsonl",),
    "train": ("checkpoint.json", "train_report.json"),
}
PRODUCER = {f: stage for stage, files in STAGE_OUTPUTS.items() for f in files}


class ValidationError(Exception):
    pass


# ---------------------------------------------------------------------------
# manifest helpers

def _load_manifest(workdir: Path) -> dict:
    path = workdir / MANIFEST
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {"stages": {}}


def _save_manifest(workdir: Path, manifest: dict) -> None:
    (workdir / MANIFEST).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_output(workdir: Path, name: str, text: str, outputs: dict) -> None:
    (workdir / name).write_text(text, encoding="utf-8")
    outputs[name] = sha256_hex(text)


def _require_input(workdir: Path, manifest: dict, name: str,
                   config_hash: str) -> str:
    producer = PRODUCER[name]
    path = workdir / name
    if not path.exists():
        raise ValidationError(f"missing input {name}; run `{producer}` first")
    entry = manifest["stages"].get(producer)
    if entry is None:
        raise ValidationError(f"{name} has no manifest entry; run `{producer}` first")
    recorded = entry["outputs"].get(name)
    text = path.read_text(encoding="utf-8")
    if recorded != sha256_hex(text):
        raise ValidationError(
            f"stale input {name} (manifest hash differs); re-run `{producer}`"
        )
    if entry["config_hash"] != config_hash:
        raise ValidationError(
            f"{name} was produced under a different config "
            f"(manifest hash differs); re-run `{producer}`"
        )
    return text


def _record_stage(workdir: Path, manifest: dict, stage: str, cfg: Config,
                  inputs: dict, outputs: dict) -> None:
    manifest["stages"][stage] = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "inputs": inputs,
        "outputs": outputs,
    }
    _save_manifest(workdir, manifest)


# ---------------------------------------------------------------------------
# stages

def _stage_gen_scenes(workdir: Path, cfg: Config, args) -> None:
    manifest = _load_manifest(workdir)
    outputs: dict = {}
    for split in ("train", "test"):
        suite = build_suite(split, cfg.seed, cfg.horizon_per_subtask)
        _write_output(
            workdir, f"scenes_{split}.json",
            canonical_json(suite_to_json(suite)) + "\n", outputs,
        )
    _record_stage(workdir, manifest, "gen-scenes", cfg, {}, outputs)
    print(f"gen-scenes: wrote {', '.join(sorted(outputs))}")


def _load_suite(workdir: Path, manifest: dict, split: str, cfg: Config):
    text = _require_input(workdir, manifest, f"scenes_{split}.json", cfg.config_hash())
    return suite_from_json(json.loads(text))


def _stage_collect(workdir: Path, cfg: Config, args) -> None:
    manifest = _load_manifest(workdir)
    config_hash = cfg.config_hash()
    splits = ("train", "test") if args.split == "both" else (args.split,)
    inputs: dict = {}
    outputs: dict = {}
    # keep both outputs in the manifest entry even for one-split runs
    prev = manifest["stages"].get("collect", {}).get("outputs", {})
    outputs.update(prev)
    for split in splits:
        name = f"scenes_{split}.json"
        text = _require_input(workdir, manifest, name, config_hash)
        inputs[name] = sha256_hex(text)
        suite = suite_from_json(json.loads(text))
        store = memory.collect_memory(suite.tasks, suite.scenes, split, cfg.seed)
        _write_output(workdir, f"memory_{split}.jsonl",
                      memory.store_to_jsonl(store), outputs)
        print(f"collect[{split}]: {len(suite.tasks)} tasks -> "
              f"{len(store)} trajectories after filtering")
    _record_stage(workdir, manifest, "collect", cfg, inputs, outputs)


def _stage_gen_prefs(workdir: Path, cfg: Config, args) -> None:
    manifest = _load_manifest(workdir)
    config_hash = cfg.config_hash()
    suite = _load_suite(workdir, manifest, "train", cfg)
    store_text = _require_input(workdir, manifest, "memory_train.jsonl", config_hash)
    store = memory.store_from_jsonl(store_text)
    k = args.k if args.k is not None else cfg.prefgen.k
    trials = args.trials if args.trials is not None else cfg.prefgen.trials
    pairs = prefgen.generate_preferences(
        suite, store, k, trials, cfg.seed, jobs=args.jobs
    )
    inputs = {
        "scenes_train.json": sha256_hex(
            (workdir / "scenes_train.json").read_text(encoding="utf-8")),
        "memory_train.jsonl": sha256_hex(store_text),
    }
    outputs: dict = {}
    _write_output(workdir, "prefs.jsonl", prefgen.pairs_to_jsonl(pairs), outputs)
    _record_stage(workdir, manifest, "gen-prefs", cfg, inputs, outputs)
    print(f"gen-prefs: {len(pairs)} pairs from {len(suite.tasks)} tasks "
          f"(k={k}, trials={trials})")


def _stage_train(workdir: Path, cfg: Config, args) -> None:
    manifest = _load_manifest(workdir)
    config_hash = cfg.config_hash()
    pairs_text = _require_input(workdir, manifest, "prefs.jsonl", config_hash)
    pairs = prefgen.pairs_from_jsonl(pairs_text)
    suite = _load_suite(workdir, manifest, "train", cfg)
    tasks_by_id = {t.task_id: t for t in suite.tasks}
    train_cfg = retriever.TrainConfig(
        epochs=cfg.train.epochs, lr=cfg.train.lr, batch=cfg.train.batch,
        seed=cfg.seed, val_frac=cfg.train.val_frac,
        feature_dim=cfg.train.feature_dim, hidden_dim=cfg.train.hidden_dim,
    )
    model, report = retriever.train_retriever(pairs, tasks_by_id, train_cfg)
    model.config_hash = config_hash
    inputs = {"prefs.jsonl": sha256_hex(pairs_text)}
    outputs: dict = {}
    _write_output(
        workdir, "checkpoint.json",
        canonical_json(retriever.checkpoint_to_json(model)) + "\n", outputs,
    )
    report_json = {
        "n_pairs": report.n_pairs, "n_train": report.n_train,
        "n_val": report.n_val, "val_accuracy": report.val_accuracy,
        "final_train_loss": report.final_train_loss,
        "config_hash": config_hash,
    }
    _write_output(workdir, "train_report.json",
                  canonical_json(report_json) + "\n", outputs)
    _record_stage(workdir, manifest, "train", cfg, inputs, outputs)
    print(f"train: {report.n_pairs} pairs, val accuracy "
          f"{report.val_accuracy if report.val_accuracy is not None else 'n/a'}")


def _load_model_if_needed(workdir: Path, manifest: dict, cfg: Config,
                          methods: list[str]):
    if not any(m in harness.MODEL_METHODS for m in methods):
        return None
    if not (workdir / "checkpoint.json").exists():
        raise ValidationError(
            "missing checkpoint.json for a trained method; run `train` first"
        )
    _require_input(workdir, manifest, "checkpoint.json", cfg.config_hash())
    return retriever.load_checkpoint(workdir / "checkpoint.json")


def _stage_eval(workdir: Path, cfg: Config, args) -> None:
    manifest = _load_manifest(workdir)
    config_hash = cfg.config_hash()
    methods = list(cfg.eval.methods) if args.method == "all" else [args.method]
    suite = _load_suite(workdir, manifest, "test", cfg)
    store_text = _require_input(workdir, manifest, "memory_test.jsonl", config_hash)
    store = memory.store_from_jsonl(store_text)
    model = _load_model_if_needed(workdir, manifest, cfg, methods)
    inputs = {
        "scenes_test.json": sha256_hex(
            (workdir / "scenes_test.json").read_text(encoding="utf-8")),
        "memory_test.jsonl": sha256_hex(store_text),
    }
    if model is not None:
        inputs["checkpoint.json"] = sha256_hex(
            (workdir / "checkpoint.json").read_text(encoding="utf-8"))
    stage_name = "eval" if args.method == "all" else f"eval[{args.method}]"
    outputs = dict(
        _load_manifest(workdir)["stages"].get(stage_name, {}).get("outputs", {})
    )
    reports = []
    for method in methods:
        report = harness.evaluate(
            method, suite, store, cfg.eval.repeats, cfg.seed,
            model=model, w_text=cfg.retrieval.w_text, w_vis=cfg.retrieval.w_vis,
            topk=cfg.retrieval.topk, raw_truncate=cfg.retrieval.raw_truncate,
            config_hash=config_hash, jobs=args.jobs,
        )
        reports.append(report)
        _write_output(
            workdir, f"eval_{method}.json",
            canonical_json(harness.report_to_json(report)) + "\n", outputs,
        )
        print(f"eval[{method}]: SR={report.sr:.3f} AS={report.avg_steps:.2f} "
              f"SR_Sub={report.sr_sub:.3f} AS_Sub={report.avg_steps_sub:.2f}")
    _write_output(workdir, "eval_table.txt", harness.render_comparison(reports),
                  outputs)
    _record_stage(workdir, _load_manifest(workdir), stage_name, cfg, inputs, outputs)


def _stage_correlate(workdir: Path, cfg: Config, args) -> None:
    manifest = _load_manifest(workdir)
    config_hash = cfg.config_hash()
    suite = _load_suite(workdir, manifest, "test", cfg)
    store_text = _require_input(workdir, manifest, "memory_test.jsonl", config_hash)
    store = memory.store_from_jsonl(store_text)
    if not (workdir / "checkpoint.json").exists():
        raise ValidationError("missing checkpoint.json; run `train` first")
    _require_input(workdir, manifest, "checkpoint.json", config_hash)
    model = retriever.load_checkpoint(workdir / "checkpoint.json")
    trials = args.trials if args.trials is not None else cfg.correlate.trials
    sample = harness.default_study_sample(suite, store, cfg.correlate.per_task)
    study = harness.correlation_study(
        suite, store, sample, trials, cfg.seed, model,
        w_text=cfg.retrieval.w_text, w_vis=cfg.retrieval.w_vis, jobs=args.jobs,
    )
    inputs = {
        "scenes_test.json": sha256_hex(
            (workdir / "scenes_test.json").read_text(encoding="utf-8")),
        "memory_test.jsonl": sha256_hex(store_text),
        "checkpoint.json": sha256_hex(
            (workdir / "checkpoint.json").read_text(encoding="utf-8")),
    }
    outputs: dict = {}
    _write_output(workdir, "correlation.csv", study.to_csv(), outputs)
    summary = {
        "n_rows": len(study.rows),
        "r_similarity": study.r_similarity,
        "r_trained": study.r_trained,
        "r_similarity_undefined": study.r_similarity is None,
        "r_trained_undefined": study.r_trained is None,
        "config_hash": config_hash,
    }
    _write_output(workdir, "correlation_summary.json",
                  canonical_json(summary) + "\n", outputs)
    _record_stage(workdir, manifest, "correlate", cfg, inputs, outputs)
    print(f"correlate: n={len(study.rows)} r_trained={study.r_trained} "
          f"r_similarity={study.r_similarity}")


def _stage_report(workdir: Path, cfg: Config, args) -> None:
    lines = ["trajlab evaluation report", ""]
    found = sorted(workdir.glob("eval_*.json"))
    if not found:
        raise ValidationError("no eval_*.json in the workdir; run `eval` first")
    rows = []
    for path in found:
        data = json.loads(path.read_text(encoding="utf-8"))
        rows.append((data["method"], data["SR"], data["AS"],
                     data["SR_Sub"], data["AS_Sub"]))
    lines.append(f"{'method':<14}{'SR':>8}{'AS':>10}{'SR_Sub':>9}{'AS_Sub':>9}")
    for method, sr, avg, srs, avgs in rows:
        lines.append(f"{method:<14}{sr:>8.3f}{avg:>10.2f}{srs:>9.3f}{avgs:>9.2f}")
    summary_path = workdir / "correlation_summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        lines += [
            "",
            f"correlation with measured success rate over {summary['n_rows']} samples:",
            f"  trained score:    r = {summary['r_trained']}",
            f"  similarity score: r = {summary['r_similarity']}",
        ]
    text = "\n".join(lines) + "\n"
    (workdir / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")


STAGES = {
    "gen-scenes": _stage_gen_scenes,
    "collect": _stage_collect,
    "gen-prefs": _stage_gen_prefs,
    "train": _stage_train,
    "eval": _stage_eval,
    "correlate": _stage_correlate,
    "report": _stage_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajlab",
        description="Household gridworld lab for effectiveness-learned "
                    "trajectory retrieval",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--workdir", required=True, type=Path)
        p.add_argument("--config", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
        if name == "collect":
            p.add_argument("--split", choices=("train", "test", "both"),
                           default="both")
        if name == "gen-prefs":
            p.add_argument("--k", type=int, default=None)
            p.add_argument("--trials", type=int, default=None)
        if name == "eval":
            p.add_argument("--method", choices=ALL_METHODS + ("all",),
                           default="all")
        if name == "correlate":
            p.add_argument("--trials", type=int, default=None)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    stage = args.command
    try:
        cfg = load_config(args.config, args.seed)
        workdir: Path = args.workdir
        workdir.mkdir(parents=True, exist_ok=True)
        STAGES[stage](workdir, cfg, args)
        return 0
    except (ValidationError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal error
        print(f"internal error [{stage}]: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
