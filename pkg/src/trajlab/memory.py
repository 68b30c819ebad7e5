"""Expert trajectory stores with redundancy filtering and JSONL persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .planner import PlanFailure, plan_expert
from .seeding import canonical_json, derive_seed, sha256_hex
from .world import (
    Action, Environment, Observation, Scene, Task, action_from_json,
    action_to_json, archetype_of_scene_id, check_goal, observation_from_json,
    observation_to_json, task_from_json, task_to_json,
)


@dataclass
class Trajectory:
    """One episode: |observations| = |feedbacks| = steps + 1 (index 0 is the
    reset observation); actions[i] leads from observations[i] to [i+1]."""

    traj_id: str
    task: Task
    observations: list[Observation]
    actions: list[Action]
    feedbacks: list[str]
    steps: int
    success: bool
    split: str

    def validate(self) -> None:
        if len(self.observations) != len(self.actions) + 1:
            raise ValueError("observation count must be action count + 1")
        if len(self.feedbacks) != len(self.actions) + 1:
            raise ValueError("feedback count must be action count + 1")
        if self.steps != len(self.actions):
            raise ValueError("steps must equal action count")


@dataclass
class MemoryStore:
    split: str
    trajectories: dict[str, Trajectory] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)

    def ordered(self) -> list[Trajectory]:
        return [self.trajectories[k] for k in sorted(self.trajectories)]


def collect_memory(tasks: list[Task], scenes: dict[str, Scene], split: str,
                   master_seed: int) -> MemoryStore:
    """One expert trajectory per task, then redundancy filtering."""
    store = MemoryStore(split=split)
    for task in sorted(tasks, key=lambda t: t.task_id):
        scene = scenes.get(task.scene_id)
        if scene is None:
            raise ValueError(f"task {task.task_id} references unknown scene")
        episode_seed = derive_seed(master_seed, "collect", split, task.task_id)
        try:
            traj = plan_expert(scene, task, episode_seed)
        except PlanFailure as exc:
            raise PlanFailure(f"{task.task_id}: {exc}") from exc
        traj.split = split
        traj.validate()
        store.trajectories[traj.traj_id] = traj
    store.provenance = {
        "master_seed": master_seed,
        "scene_seeds": {sid: scenes[sid].seed for sid in sorted(scenes)},
    }
    return filter_redundant(store)


def redundancy_key(traj: Trajectory) -> tuple:
    task = traj.task
    return (task.family, task.target_type, task.receptacle_type,
            archetype_of_scene_id(task.scene_id))


def filter_redundant(store: MemoryStore) -> MemoryStore:
    """Among trajectories sharing (family, target, receptacle, archetype),
    keep the one with the fewest steps (ties: smallest traj_id)."""
    best: dict[tuple, Trajectory] = {}
    for traj in store.ordered():
        key = redundancy_key(traj)
        cur = best.get(key)
        if cur is None or (traj.steps, traj.traj_id) < (cur.steps, cur.traj_id):
            best[key] = traj
    kept = {t.traj_id for t in best.values()}
    out = MemoryStore(split=store.split, provenance=dict(store.provenance))
    for traj in store.ordered():
        if traj.traj_id in kept:
            out.trajectories[traj.traj_id] = traj
    return out


# ---------------------------------------------------------------------------
# replay

def replay_to_success(traj: Trajectory, scene: Scene) -> bool:
    """Re-execute the recorded actions from the recorded start pose and check
    that feedbacks match and every subtask goal is reached in order."""
    env = Environment(scene)
    obs = env.reset(traj.task, pose=traj.observations[0].pose)
    if obs.feedback != traj.feedbacks[0]:
        return False
    pending = list(traj.task.subtasks)
    while pending and check_goal(env, pending[0].goal):
        pending.pop(0)
    for i, action in enumerate(traj.actions):
        obs = env.step(action)
        if obs.feedback != traj.feedbacks[i + 1]:
            return False
        while pending and check_goal(env, pending[0].goal):
            pending.pop(0)
    return not pending


# ---------------------------------------------------------------------------
# persistence (JSONL, one trajectory per line)

def trajectory_to_json(traj: Trajectory) -> dict:
    return {
        "traj_id": traj.traj_id,
        "task": task_to_json(traj.task),
        "obs": [observation_to_json(o) for o in traj.observations],
        "acts": [action_to_json(a) for a in traj.actions],
        "fbs": list(traj.feedbacks),
        "steps": traj.steps,
        "success": traj.success,
        "split": traj.split,
    }


def trajectory_from_json(d: dict) -> Trajectory:
    traj = Trajectory(
        traj_id=d["traj_id"],
        task=task_from_json(d["task"]),
        observations=[observation_from_json(o) for o in d["obs"]],
        actions=[action_from_json(a) for a in d["acts"]],
        feedbacks=list(d["fbs"]),
        steps=d["steps"],
        success=d["success"],
        split=d["split"],
    )
    traj.validate()
    return traj


def store_to_jsonl(store: MemoryStore) -> str:
    lines = [canonical_json(trajectory_to_json(t)) for t in store.ordered()]
    return "\n".join(lines) + ("\n" if lines else "")


def store_from_jsonl(text: str, split: Optional[str] = None) -> MemoryStore:
    trajectories: dict[str, Trajectory] = {}
    inferred = split
    for line in text.splitlines():
        if not line.strip():
            continue
        traj = trajectory_from_json(json.loads(line))
        trajectories[traj.traj_id] = traj
        inferred = inferred or traj.split
    store = MemoryStore(split=inferred or "")
    for key in sorted(trajectories):
        store.trajectories[key] = trajectories[key]
    return store


def save_store(store: MemoryStore, path: Path) -> None:
    path.write_text(store_to_jsonl(store), encoding="utf-8")


def load_store(path: Path) -> MemoryStore:
    return store_from_jsonl(path.read_text(encoding="utf-8"))


def store_digest(store: MemoryStore) -> str:
    return sha256_hex(store_to_jsonl(store))
