"""Experiment driver: method evaluation, ablations, and the
similarity-vs-effectiveness correlation study."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .abstraction import AbstractTrajectory, abstract_trajectory
from .agent import execute_episode
from .memory import MemoryStore
from .planner import plan_expert
from .prefgen import measure_effectiveness
from .retriever import (
    RetrievalResult, ScorerModel, YesNoModel, featurize, init_yesno_model,
    retrieve, score as model_score, similarity_score,
)
from .seeding import canonical_json, derive_seed, sha256_hex
from .suite import Suite
from .world import Environment, Task

# method name -> (retrieval strategy, uses abstraction)
METHODS: dict[str, tuple[Optional[str], bool]] = {
    "plain": (None, True),
    "yesno": ("yesno", True),
    "sim_yesno": ("sim_then_yesno", True),
    "similarity": ("similarity", True),
    "sim_trained": ("sim_then_trained", True),
    "trained": ("trained", True),
    "trained_raw": ("trained", False),
}
MODEL_METHODS = frozenset({"sim_trained", "trained", "trained_raw"})


@dataclass
class CellResult:
    task_id: str
    repeat: int
    episode_seed: int
    success: bool
    steps: int
    subtask_successes: list[bool]
    subtask_steps: list[int]
    retrieved_traj_id: Optional[str]
    retrieval_score: Optional[float]


@dataclass
class EvalReport:
    method: str
    master_seed: int
    repeats: int
    config_hash: str
    sr: float
    avg_steps: float
    sr_sub: float
    avg_steps_sub: float
    cells: list[CellResult] = field(default_factory=list)


def _episode_cell(args) -> tuple[bool, int, list[bool], list[int]]:
    scene, task, reference, episode_seed = args
    result = execute_episode(scene, task, reference, episode_seed)
    return (result.success, result.steps, result.subtask_successes,
            result.subtask_steps)


def _run_cells(calls, jobs: int):
    if jobs <= 1 or len(calls) <= 1:
        return [_episode_cell(c) for c in calls]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_episode_cell, calls, chunksize=4))


def evaluate(method: str, suite: Suite, memory: MemoryStore, repeats: int,
             master_seed: int, *, model: Optional[ScorerModel] = None,
             yesno_model: Optional[YesNoModel] = None,
             w_text: float = 0.5, w_vis: float = 0.5, topk: int = 5,
             raw_truncate: int = 64, config_hash: str = "",
             jobs: int = 1) -> EvalReport:
    """Evaluate one method over the suite; deterministic per master_seed and
    independent of the job count."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    strategy, use_abstraction = METHODS[method]
    if method in MODEL_METHODS and model is None:
        raise ValueError(f"method {method} requires a trained checkpoint")
    if strategy in ("yesno", "sim_then_yesno") and yesno_model is None:
        yesno_model = init_yesno_model()

    abstract_cache: dict = {}
    calls = []
    meta = []
    tasks = sorted(suite.tasks, key=lambda t: t.task_id)
    for task in tasks:
        scene = suite.scene_of(task)
        for repeat in range(repeats):
            episode_seed = derive_seed(master_seed, "eval", task.task_id, repeat)
            retrieved: Optional[RetrievalResult] = None
            reference: Optional[AbstractTrajectory] = None
            if strategy is not None:
                env = Environment(scene)
                initial_obs = env.reset(task, episode_seed)
                retrieved = retrieve(
                    strategy, memory, task, initial_obs,
                    model=model, yesno_model=yesno_model,
                    w_text=w_text, w_vis=w_vis, topk=topk,
                    use_abstraction=use_abstraction, raw_truncate=raw_truncate,
                    abstract_cache=abstract_cache,
                )
                reference = retrieved.abstract
            calls.append((scene, task, reference, episode_seed))
            meta.append((task, repeat, episode_seed, retrieved))

    outcomes = _run_cells(calls, jobs)
    cells = []
    successes = 0
    total_steps = 0
    sub_success = 0
    sub_total = 0
    sub_steps = 0
    for (task, repeat, episode_seed, retrieved), outcome in zip(meta, outcomes):
        ok, steps, subtask_successes, subtask_steps = outcome
        cells.append(CellResult(
            task_id=task.task_id, repeat=repeat, episode_seed=episode_seed,
            success=ok, steps=steps,
            subtask_successes=subtask_successes, subtask_steps=subtask_steps,
            retrieved_traj_id=retrieved.traj_id if retrieved else None,
            retrieval_score=retrieved.score if retrieved else None,
        ))
        successes += 1 if ok else 0
        total_steps += steps
        sub_success += sum(subtask_successes)
        sub_total += len(subtask_successes)
        sub_steps += sum(subtask_steps)
    n = len(cells)
    return EvalReport(
        method=method,
        master_seed=master_seed,
        repeats=repeats,
        config_hash=config_hash,
        sr=successes / n,
        avg_steps=total_steps / n,
        sr_sub=sub_success / sub_total,
        avg_steps_sub=sub_steps / sub_total,
        cells=cells,
    )


def report_to_json(report: EvalReport) -> dict:
    return {
        "method": report.method,
        "master_seed": report.master_seed,
        "repeats": report.repeats,
        "config_hash": report.config_hash,
        "SR": report.sr,
        "AS": report.avg_steps,
        "SR_Sub": report.sr_sub,
        "AS_Sub": report.avg_steps_sub,
        "cells": [
            {
                "task_id": c.task_id, "repeat": c.repeat,
                "episode_seed": c.episode_seed, "success": c.success,
                "steps": c.steps, "subtask_successes": c.subtask_successes,
                "subtask_steps": c.subtask_steps,
                "retrieved_traj_id": c.retrieved_traj_id,
                "retrieval_score": c.retrieval_score,
            }
            for c in report.cells
        ],
    }


def report_digest(report: EvalReport) -> str:
    return sha256_hex(canonical_json(report_to_json(report)))


def render_comparison(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text table across methods."""
    headers = ["method", "SR", "AS", "SR_Sub", "AS_Sub"]
    rows = [
        [r.method, f"{r.sr:.3f}", f"{r.avg_steps:.2f}",
         f"{r.sr_sub:.3f}", f"{r.avg_steps_sub:.2f}"]
        for r in reports
    ]
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(row))))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# correlation study

def pearson(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Pearson r; None when either column is constant (undefined, not 0)."""
    n = len(xs)
    if n < 2:
        return None
    mx = sum(xs) / n
    my = sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    if vx <= 0.0 or vy <= 0.0:
        return None
    return cov / math.sqrt(vx * vy)


@dataclass
class CorrelationStudy:
    rows: list[dict]
    r_similarity: Optional[float]
    r_trained: Optional[float]

    def to_csv(self) -> str:
        lines = ["task_id,traj_id,score_sim,score_trained,sr"]
        for row in self.rows:
            lines.append(
                f"{row['task_id']},{row['traj_id']},{row['score_sim']!r},"
                f"{row['score_trained']!r},{row['sr']!r}"
            )
        return "\n".join(lines) + "\n"


def default_study_sample(suite: Suite, memory: MemoryStore,
                         per_task: int = 2) -> list[tuple[Task, str]]:
    """A deterministic (task, candidate) sample mixing likely-good references
    (same scene) with rotating cross-scene ones."""
    ids = sorted(memory.trajectories)
    sample: list[tuple[Task, str]] = []
    tasks = sorted(suite.tasks, key=lambda t: t.task_id)
    for i, task in enumerate(tasks):
        chosen: list[str] = []
        own = f"traj:{task.task_id}"
        if own in memory.trajectories:
            chosen.append(own)
        else:
            same_scene = [
                t for t in ids
                if memory.trajectories[t].task.scene_id == task.scene_id
            ]
            chosen.append(same_scene[0] if same_scene else ids[i % len(ids)])
        offset = 1
        while len(chosen) < per_task:
            cand = ids[(i * per_task + offset) % len(ids)]
            if cand not in chosen:
                chosen.append(cand)
            offset += 1
        sample.extend((task, tid) for tid in chosen)
    return sample


def correlation_study(suite: Suite, memory: MemoryStore,
                      sample: Sequence[tuple[Task, str]], trials: int,
                      master_seed: int, model: ScorerModel, *,
                      w_text: float = 0.5, w_vis: float = 0.5,
                      jobs: int = 1) -> CorrelationStudy:
    """Measure per-(task, reference) success rate and compare how well the
    similarity score and the trained score track it."""
    if len(sample) < 30:
        raise ValueError("correlation study needs at least 30 sample pairs")
    rows = []
    for task, traj_id in sample:
        traj = memory.trajectories[traj_id]
        scene = suite.scene_of(task)
        env = Environment(scene)
        initial_obs = env.reset(
            task, derive_seed(master_seed, "correlate", task.task_id, "obs")
        )
        abstract = abstract_trajectory(traj, task)
        sim = similarity_score(task, initial_obs, traj, w_text, w_vis)
        trained = model_score(
            model, featurize(task, initial_obs, abstract, model.feature_dim)
        )
        (_, sr), = measure_effectiveness(
            task, scene, [traj], trials,
            derive_seed(master_seed, "correlate", task.task_id, traj_id),
            jobs=jobs,
        )
        rows.append({
            "task_id": task.task_id, "traj_id": traj_id,
            "score_sim": sim, "score_trained": trained, "sr": sr,
        })
    srs = [r["sr"] for r in rows]
    return CorrelationStudy(
        rows=rows,
        r_similarity=pearson([r["score_sim"] for r in rows], srs),
        r_trained=pearson([r["score_trained"] for r in rows], srs),
    )


# ---------------------------------------------------------------------------
# reference-quality gradient experiment

def reference_gradient(suite: Suite, n_seeds: int,
                       master_seed: int, jobs: int = 1) -> tuple[float, float]:
    """Mean success rate with each task's own expert reference versus a
    cross-scene reference, paired over the same episode seeds."""
    tasks = sorted(suite.tasks, key=lambda t: t.task_id)
    calls = []
    for i, task in enumerate(tasks):
        scene = suite.scene_of(task)
        own = plan_expert(
            scene, task, derive_seed(master_seed, "gradient", "own", task.task_id)
        )
        matching = abstract_trajectory(own, task)
        cross_task = next(
            t for t in tasks[i + 1:] + tasks[:i] if t.scene_id != task.scene_id
        )
        cross_expert = plan_expert(
            suite.scene_of(cross_task), cross_task,
            derive_seed(master_seed, "gradient", "cross", cross_task.task_id),
        )
        crossing = abstract_trajectory(cross_expert, task)
        for s in range(n_seeds):
            episode_seed = derive_seed(master_seed, "gradient", task.task_id, s)
            calls.append((scene, task, matching, episode_seed))
            calls.append((scene, task, crossing, episode_seed))
    outcomes = _run_cells(calls, jobs)
    match_ok = sum(1 for i in range(0, len(outcomes), 2) if outcomes[i][0])
    cross_ok = sum(1 for i in range(1, len(outcomes), 2) if outcomes[i][0])
    n = len(outcomes) // 2
    return match_ok / n, cross_ok / n
