"""Interaction-derived preference pairs.

Each training task is rolled out under several candidate references; the
measured success rates induce a partial order and every strictly ordered
candidate pair becomes a training pair.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .abstraction import AbstractTrajectory, abstract_from_json, abstract_to_json, \
    abstract_trajectory
from .agent import execute_episode
from .memory import MemoryStore, Trajectory
from .seeding import canonical_json, derive_seed
from .suite import Suite
from .world import Observation, Environment, Task, observation_from_json, \
    observation_to_json


@dataclass
class PreferencePair:
    task_id: str
    initial_observation: Observation
    winner: AbstractTrajectory
    loser: AbstractTrajectory
    winner_sr: float
    loser_sr: float
    trials: int

    def validate(self) -> None:
        if not self.winner_sr > self.loser_sr:
            raise ValueError("winner_sr must exceed loser_sr strictly")


def _own_candidate(store: MemoryStore, task: Task) -> Optional[str]:
    own = f"traj:{task.task_id}"
    if own in store.trajectories:
        return own
    same_scene = [
        t for t in sorted(store.trajectories)
        if store.trajectories[t].task.scene_id == task.scene_id
    ]
    return same_scene[0] if same_scene else None


def sample_candidates(store: MemoryStore, task: Task, k: int, seed: int,
                      stratified: bool = True) -> list[Trajectory]:
    """Seeded candidate sample that always contains the task's own-scene
    expert when the store has one.

    The default draws one candidate per relatedness stratum (same scene,
    same archetype, elsewhere) before topping up uniformly, so each task
    compares reference qualities that actually differ; stratified=False
    gives a plain uniform sample instead."""
    from .world import archetype_of_scene_id

    ids = sorted(store.trajectories)
    if k > len(ids):
        raise ValueError(f"k={k} exceeds store size {len(ids)}")
    rng = random.Random(derive_seed(seed, "sample", task.task_id))
    own = _own_candidate(store, task)
    if not stratified:
        chosen = rng.sample(ids, k)
        if own is not None and own not in chosen:
            chosen[-1] = own
        return [store.trajectories[t] for t in chosen]

    chosen: list[str] = [own] if own is not None else []
    arch = archetype_of_scene_id(task.scene_id)
    same_scene = [
        t for t in ids if t not in chosen
        and store.trajectories[t].task.scene_id == task.scene_id
    ]
    same_arch = [
        t for t in ids if t not in chosen
        and store.trajectories[t].task.scene_id != task.scene_id
        and archetype_of_scene_id(store.trajectories[t].task.scene_id) == arch
    ]
    elsewhere = [
        t for t in ids
        if archetype_of_scene_id(store.trajectories[t].task.scene_id) != arch
    ]
    for pool in (same_scene, same_arch, elsewhere):
        if len(chosen) < k and pool:
            chosen.append(rng.choice(pool))
    remaining = [t for t in ids if t not in chosen]
    while len(chosen) < k:
        pick = rng.choice(remaining)
        remaining.remove(pick)
        chosen.append(pick)
    return [store.trajectories[t] for t in chosen]


def canonical_initial_observation(suite_scene, task: Task, master_seed: int) -> Observation:
    env = Environment(suite_scene)
    return env.reset(task, derive_seed(master_seed, "prefs", task.task_id, "obs"))


def measure_effectiveness(task: Task, scene, candidates: Sequence[Trajectory],
                          trials: int, seed: int,
                          jobs: int = 1) -> list[tuple[str, float]]:
    """Success rate of the task under each candidate reference."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    calls = []
    for cand in candidates:
        abstract = abstract_trajectory(cand, task)
        for t in range(trials):
            episode_seed = derive_seed(seed, "trial", task.task_id, cand.traj_id, t)
            calls.append((cand.traj_id, scene, task, abstract, episode_seed))
    results = _run_episodes(calls, jobs)
    out: list[tuple[str, float]] = []
    i = 0
    for cand in candidates:
        wins = sum(1 for r in results[i:i + trials] if r)
        out.append((cand.traj_id, wins / trials))
        i += trials
    return out


def _episode_success(args) -> bool:
    _traj_id, scene, task, abstract, episode_seed = args
    return execute_episode(scene, task, abstract, episode_seed).success


def _run_episodes(calls, jobs: int) -> list[bool]:
    if jobs <= 1 or len(calls) <= 1:
        return [_episode_success(c) for c in calls]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_episode_success, calls, chunksize=4))


def make_pairs(task: Task, initial_observation: Observation,
               scored: Sequence[tuple[AbstractTrajectory, float]],
               trials: int) -> list[PreferencePair]:
    """All strictly ordered unordered pairs; equal success rates are dropped."""
    pairs = []
    for i in range(len(scored)):
        for j in range(i + 1, len(scored)):
            (abs_i, sr_i), (abs_j, sr_j) = scored[i], scored[j]
            if sr_i == sr_j:
                continue
            winner, w_sr = (abs_i, sr_i) if sr_i > sr_j else (abs_j, sr_j)
            loser, l_sr = (abs_j, sr_j) if sr_i > sr_j else (abs_i, sr_i)
            pair = PreferencePair(
                task_id=task.task_id,
                initial_observation=initial_observation,
                winner=winner,
                loser=loser,
                winner_sr=w_sr,
                loser_sr=l_sr,
                trials=trials,
            )
            pair.validate()
            pairs.append(pair)
    return pairs


def generate_preferences(suite: Suite, store: MemoryStore, k: int, trials: int,
                         master_seed: int, jobs: int = 1) -> list[PreferencePair]:
    pairs: list[PreferencePair] = []
    for task in sorted(suite.tasks, key=lambda t: t.task_id):
        scene = suite.scene_of(task)
        candidates = sample_candidates(store, task, k, master_seed)
        scored_ids = measure_effectiveness(
            task, scene, candidates, trials, master_seed, jobs=jobs
        )
        initial_obs = canonical_initial_observation(scene, task, master_seed)
        scored = []
        for cand, (traj_id, sr) in zip(candidates, scored_ids):
            assert cand.traj_id == traj_id
            scored.append((abstract_trajectory(cand, task), sr))
        pairs.extend(make_pairs(task, initial_obs, scored, trials))
    return pairs


# ---------------------------------------------------------------------------
# persistence

def pair_to_json(p: PreferencePair) -> dict:
    return {
        "task_id": p.task_id,
        "initial_observation": observation_to_json(p.initial_observation),
        "winner": abstract_to_json(p.winner),
        "loser": abstract_to_json(p.loser),
        "winner_sr": p.winner_sr,
        "loser_sr": p.loser_sr,
        "trials": p.trials,
    }


def pair_from_json(d: dict) -> PreferencePair:
    pair = PreferencePair(
        task_id=d["task_id"],
        initial_observation=observation_from_json(d["initial_observation"]),
        winner=abstract_from_json(d["winner"]),
        loser=abstract_from_json(d["loser"]),
        winner_sr=d["winner_sr"],
        loser_sr=d["loser_sr"],
        trials=d["trials"],
    )
    pair.validate()
    return pair


def pairs_to_jsonl(pairs: Sequence[PreferencePair]) -> str:
    lines = [canonical_json(pair_to_json(p)) for p in pairs]
    return "\n".join(lines) + ("\n" if lines else "")


def pairs_from_jsonl(text: str) -> list[PreferencePair]:
    return [
        pair_from_json(json.loads(line))
        for line in text.splitlines() if line.strip()
    ]


def save_pairs(pairs: Sequence[PreferencePair], path: Path) -> None:
    path.write_text(pairs_to_jsonl(pairs), encoding="utf-8")


def load_pairs(path: Path) -> list[PreferencePair]:
    return pairs_from_jsonl(path.read_text(encoding="utf-8"))
