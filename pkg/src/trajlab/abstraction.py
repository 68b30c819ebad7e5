"""Milestone compression of trajectories, conditioned on the current task.

A step is kept as a milestone when it is an interaction, when a subtask goal
of the source task first becomes satisfied, when the current task's target
type first shows up in the visible set, at step 0, or when the feedback
carries any event sentence (state changes). Navigation between milestones is
summarized into an "overarching actions" string.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional

from .memory import Trajectory
from .world import (
    DECLARE_RE, FEEDBACK_KIND_RES, GoalPredicate, INTERACTION_KINDS,
    LOOK_KINDS, MOVE_AHEAD, Observation, PICK_RE, PUT_RE, STATE_RE,
    Task, TURN_LEFT, TURN_RIGHT, observation_from_json,
    observation_to_json,
)


@dataclass(frozen=True)
class Milestone:
    description: str
    step_index: int
    observation: Observation
    feedback: str
    overarching_actions: str


@dataclass(frozen=True)
class AbstractTrajectory:
    source_traj_id: str
    conditioning_task_id: str
    milestones: tuple[Milestone, ...]


def _event_core(feedback: str) -> str:
    """Event sentences of a step feedback (empty for plain navigation)."""
    body = feedback.split(" You see: ")[0]
    if body.startswith("OK."):
        body = body[len("OK."):].strip()
    elif body.startswith("You see:"):
        body = ""
    return body


class _EventState:
    """Replays the feedback grammar to track what each instance has become."""

    def __init__(self) -> None:
        self.types: dict[int, str] = {}
        self.held: Optional[int] = None
        self.parent_type: dict[int, str] = {}
        self.marks: dict[str, set[int]] = {"hot": set(), "cold": set(), "clean": set()}
        self.declared: set[int] = set()

    def observe(self, obs: Observation) -> None:
        for entry in obs.visible:
            self.types[entry.id] = entry.obj_type

    def apply_feedback(self, feedback: str) -> None:
        core = _event_core(feedback)
        if not core:
            return
        m = PICK_RE.search(core)
        if m:
            oid = int(m.group(2))
            self.types[oid] = m.group(1)
            self.held = oid
            self.parent_type.pop(oid, None)
        m = PUT_RE.search(core)
        if m:
            oid, rid = int(m.group(2)), int(m.group(5))
            self.types[oid] = m.group(1)
            self.types[rid] = m.group(4)
            self.parent_type[oid] = m.group(4)
            if self.held == oid:
                self.held = None
        m = DECLARE_RE.search(core)
        if m:
            oid = int(m.group(2))
            self.types[oid] = m.group(1)
            self.declared.add(oid)
        for m in STATE_RE.finditer(core):
            oid = int(m.group(2))
            self.types[oid] = m.group(1)
            self.marks[m.group(3)].add(oid)

    def satisfies(self, goal: GoalPredicate, obs: Observation) -> bool:
        near_ids = {
            e.id for e in obs.visible
            if e.obj_type == goal.target_type and e.distance <= 1
        }
        candidates = {
            oid for oid, t in self.types.items() if t == goal.target_type
        } | near_ids
        for oid in candidates:
            ok = True
            for cond in goal.conditions:
                if cond == "held":
                    ok = self.held == oid
                elif cond == "near":
                    ok = oid in near_ids
                elif cond == "placed":
                    ok = self.parent_type.get(oid) == goal.receptacle_type
                elif cond in ("hot", "cold", "clean"):
                    ok = oid in self.marks[cond]
                elif cond == "declared":
                    ok = oid in self.declared
                else:
                    ok = False
                if not ok:
                    break
            if ok:
                return True
        return False


def _summarize_actions(actions) -> str:
    if not actions:
        return "none"
    counts: Counter[str] = Counter()
    for act in actions:
        if act.kind == MOVE_AHEAD:
            counts["move"] += 1
        elif act.kind in (TURN_LEFT, TURN_RIGHT):
            counts["turn"] += 1
        elif act.kind in LOOK_KINDS:
            counts["look"] += 1
        else:
            counts[act.kind] += 1
    parts = []
    for key in ("move", "turn", "look"):
        n = counts.pop(key, 0)
        if n:
            parts.append(f"{n} {key}{'s' if n != 1 else ''}")
    for key in sorted(counts):
        parts.append(f"{counts[key]} {key}")
    return ", ".join(parts)


def abstract_trajectory(traj: Trajectory, current_task: Task) -> AbstractTrajectory:
    """Compress a successful trajectory into milestones for current_task."""
    if not traj.success:
        raise ValueError("abstraction requires a successful trajectory")
    if traj.steps == 0:
        raise ValueError("cannot abstract an empty trajectory")

    state = _EventState()
    reasons: dict[int, list[str]] = {0: [f"start of task: {traj.task.instruction}"]}
    goal_pending = list(enumerate(traj.task.subtasks))
    target_seen = False

    def add(index: int, text: str) -> None:
        reasons.setdefault(index, []).append(text)

    for i in range(traj.steps + 1):
        obs = traj.observations[i]
        fb = traj.feedbacks[i]
        state.observe(obs)
        state.apply_feedback(fb)
        core = _event_core(fb)
        interaction = i >= 1 and any(r.search(core) for r in FEEDBACK_KIND_RES.values())
        if interaction:
            add(i, f"interaction: {core.split(' You see:')[0]}")
        still_pending = []
        for idx, sub in goal_pending:
            if state.satisfies(sub.goal, obs):
                add(i, f"goal reached: {sub.description}")
            else:
                still_pending.append((idx, sub))
        goal_pending = still_pending
        if not target_seen and any(
            e.obj_type == current_task.target_type for e in obs.visible
        ):
            target_seen = True
            add(i, f"current target {current_task.target_type} is visible")
        if i >= 1 and not interaction and core:
            add(i, f"state change: {core}")

    indices = sorted(reasons)
    if len(indices) > traj.steps and 0 in reasons and len(indices) > 1:
        # every action step is already a milestone; the start frame is redundant
        indices.remove(0)

    milestones = []
    for pos, index in enumerate(indices):
        next_index = indices[pos + 1] if pos + 1 < len(indices) else traj.steps
        milestones.append(Milestone(
            description="; ".join(reasons[index]),
            step_index=index,
            observation=traj.observations[index],
            feedback=traj.feedbacks[index],
            overarching_actions=_summarize_actions(traj.actions[index:next_index]),
        ))
    return AbstractTrajectory(
        source_traj_id=traj.traj_id,
        conditioning_task_id=current_task.task_id,
        milestones=tuple(milestones),
    )


def raw_abstract(traj: Trajectory, current_task: Task,
                 max_steps: int = 64) -> AbstractTrajectory:
    """No compression: every step becomes a milestone (truncated). Used by the
    no-abstraction ablation."""
    last = min(traj.steps, max_steps)
    milestones = []
    for i in range(last + 1):
        milestones.append(Milestone(
            description=f"step {i}",
            step_index=i,
            observation=traj.observations[i],
            feedback=traj.feedbacks[i],
            overarching_actions=_summarize_actions(traj.actions[i:i + 1]),
        ))
    return AbstractTrajectory(
        source_traj_id=traj.traj_id,
        conditioning_task_id=current_task.task_id,
        milestones=tuple(milestones),
    )


def interaction_step_indices(traj: Trajectory) -> list[int]:
    """Post-action indices of the source trajectory's interaction steps."""
    return [
        i + 1 for i, act in enumerate(traj.actions)
        if act.kind in INTERACTION_KINDS
    ]


def abstract_to_json(a: AbstractTrajectory) -> dict:
    return {
        "source_traj_id": a.source_traj_id,
        "conditioning_task_id": a.conditioning_task_id,
        "milestones": [
            {
                "description": m.description,
                "step_index": m.step_index,
                "observation": observation_to_json(m.observation),
                "feedback": m.feedback,
                "overarching_actions": m.overarching_actions,
            }
            for m in a.milestones
        ],
    }


def abstract_from_json(d: dict) -> AbstractTrajectory:
    return AbstractTrajectory(
        source_traj_id=d["source_traj_id"],
        conditioning_task_id=d["conditioning_task_id"],
        milestones=tuple(
            Milestone(
                description=m["description"],
                step_index=m["step_index"],
                observation=observation_from_json(m["observation"]),
                feedback=m["feedback"],
                overarching_actions=m["overarching_actions"],
            )
            for m in d["milestones"]
        ),
    )
