"""Milestone-following agent with self-reflection.

The policy is deterministic and partially observing: it keeps a believed map
(unknown cells are optimistically traversable), remembers every object it has
seen, blacklists actions that failed at a pose, and falls back from direct
navigation to reference waypoints, container hunting and frontier probing.
Reference quality therefore changes success rates by construction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .abstraction import AbstractTrajectory, _event_core
from .memory import Trajectory
from .planner import astar_route, interaction_goal_states
from .world import (
    Action, AgentPose, BLOCKING_TYPES, CLOSE, Cell, DECLARE, Environment,
    FEEDBACK_KIND_RES, HEADING_VECTORS, LOOK_DOWN, LOOK_UP, MOVE_AHEAD,
    OBJECT_TYPES, OPEN, OPENABLE_TYPES, Observation, PICK_UP, PUT, Scene,
    STOP, SubTask, SURFACE_TYPES, Task, TOGGLE_OFF, TOGGLE_ON, TURN_LEFT,
    check_goal, surface_band,
)

SEEK_PITCH = -30  # low+mid band covers everything except shelf tops
HIGH_PITCH = 30


# ---------------------------------------------------------------------------
# reference hints

@dataclass(frozen=True)
class Waypoint:
    cell: Cell
    pitch: int
    heading: int


@dataclass
class ReferenceHints:
    waypoints: list[Waypoint] = field(default_factory=list)
    object_types: list[str] = field(default_factory=list)
    container_types: list[str] = field(default_factory=list)
    interaction_plan: list[str] = field(default_factory=list)
    # poses at which the source trajectory opened a container: the places
    # the reference actually vouches for when hunting hidden objects
    open_waypoints: list[Waypoint] = field(default_factory=list)


def extract_hints(abstract: Optional[AbstractTrajectory]) -> ReferenceHints:
    """Deterministic hint extraction; waypoints keep milestone order."""
    hints = ReferenceHints()
    if abstract is None:
        return hints
    seen_types: list[str] = []

    def mention(t: str) -> None:
        if t not in seen_types:
            seen_types.append(t)

    for milestone in abstract.milestones:
        pose = milestone.observation.pose
        wp = Waypoint(pose.cell, pose.pitch, pose.heading)
        if not hints.waypoints or hints.waypoints[-1] != wp:
            hints.waypoints.append(wp)
        core = _event_core(milestone.feedback)
        for kind, regex in FEEDBACK_KIND_RES.items():
            m = regex.search(core)
            if not m:
                continue
            hints.interaction_plan.append(kind)
            if kind == OPEN:
                if m.group(1) not in hints.container_types:
                    hints.container_types.append(m.group(1))
                if wp not in hints.open_waypoints:
                    hints.open_waypoints.append(wp)
            for group in m.groups():
                if group in OBJECT_TYPES:
                    mention(group)
        for t in OBJECT_TYPES:
            if t in milestone.description:
                mention(t)
    hints.object_types = seen_types
    return hints


# ---------------------------------------------------------------------------
# belief

@dataclass(frozen=True)
class ReflectionNote:
    pose: AgentPose
    action: Action
    reason: str


def self_reflection(prev_action: Action, prev_obs: Observation,
                    prev_feedback: str) -> Optional[ReflectionNote]:
    """A note is produced only for failed actions."""
    if not prev_feedback.startswith("Failed:"):
        return None
    reason = prev_feedback[len("Failed:"):].split(" You see:")[0].strip()
    return ReflectionNote(prev_obs.pose, prev_action, reason)


@dataclass
class SeenObject:
    obj_type: str
    cell: Cell
    relation_kind: str
    parent_id: Optional[int]


@dataclass
class AgentBelief:
    """The floor plan (walls and doors) is known a priori, as for an agent
    that can see the room; object locations are not. known_free tracks the
    cells whose contents have been visually covered so far."""

    grid: tuple[str, ...]
    known_free: set[Cell] = field(default_factory=set)
    bump_cells: set[Cell] = field(default_factory=set)
    seen_objects: dict[int, SeenObject] = field(default_factory=dict)
    open_state: dict[int, bool] = field(default_factory=dict)  # default closed
    on_state: dict[int, bool] = field(default_factory=dict)  # default off
    reflection_notes: list[ReflectionNote] = field(default_factory=list)
    current_subtask_index: int = 0
    focus_id: Optional[int] = None
    opened_ids: set[int] = field(default_factory=set)

    def floor(self, cell: Cell) -> bool:
        x, y = cell
        if 0 <= y < len(self.grid) and 0 <= x < len(self.grid[0]):
            return self.grid[y][x] in ".D"
        return False

    def blocked_object_cells(self) -> set[Cell]:
        return {
            s.cell for s in self.seen_objects.values()
            if s.obj_type in BLOCKING_TYPES
        }

    def passable(self, cell: Cell) -> bool:
        """Grid-passable minus furniture seen so far; cells holding unseen
        furniture are walked into optimistically and corrected on a bump."""
        if not self.floor(cell):
            return False
        if cell in self.bump_cells:
            return False
        return cell not in self.blocked_object_cells()

    def elevation_of(self, oid: int) -> str:
        seen = self.seen_objects[oid]
        if seen.obj_type in SURFACE_TYPES or seen.obj_type in BLOCKING_TYPES:
            return surface_band(seen.obj_type) if seen.obj_type in SURFACE_TYPES else "mid"
        if seen.relation_kind == "FLOOR":
            return "low"
        if seen.relation_kind == "IN":
            return "mid"
        parent = self.seen_objects.get(seen.parent_id)
        return surface_band(parent.obj_type) if parent else "mid"


def _line_cells(a: Cell, b: Cell) -> list[Cell]:
    from .world import _line_cells as line
    return line(a, b)


def _blacklist_key(pose: AgentPose, action: Action) -> tuple:
    return (pose.cell, pose.heading, pose.pitch, action.kind, action.target)


# ---------------------------------------------------------------------------
# controller

class AgentController:
    """Stateful wrapper around the per-step policy; one per episode."""

    def __init__(self, scene: Scene, task: Task,
                 reference: Optional[AbstractTrajectory]):
        self.task = task
        self.hints = extract_hints(reference)
        # the first waypoint is the reference's spawn pose, which says nothing
        # about the task; visit it last
        self._waypoints = (
            self.hints.waypoints[1:] + self.hints.waypoints[:1]
            if len(self.hints.waypoints) > 1 else list(self.hints.waypoints)
        )
        self.belief = AgentBelief(grid=scene.grid)
        self.blacklist: set[tuple] = set()
        self._prev: Optional[tuple[Observation, Action]] = None
        self._last_fail_pose: Optional[AgentPose] = None
        self.plan: deque[Action] = deque()
        self.plan_id = 0
        self._plan_objective: Optional[tuple] = None
        self.sweep_queue: deque[Action] = deque()
        self._sweep_round = 0
        self._wp_idx = 0
        self._unreachable: set[int] = set()
        self._probe_arrivals = 0
        self._last_probe_target: Optional[Cell] = None

    # -- public ------------------------------------------------------------

    def begin_subtask(self, index: int) -> None:
        self.belief.current_subtask_index = index
        self._drop_plan()
        self.sweep_queue.clear()
        self._unreachable.clear()

    def next_action(self, obs: Observation) -> Action:
        self._ingest(obs)
        action = self._choose(obs)
        if _blacklist_key(obs.pose, action) in self.blacklist:
            action = Action(TURN_LEFT)  # turns never fail; changes the pose
        self._prev = (obs, action)
        return action

    # -- belief updates ------------------------------------------------------

    def _drop_plan(self) -> None:
        self.plan.clear()
        self._plan_objective = None
        self.plan_id += 1

    def _ingest(self, obs: Observation) -> None:
        if self._prev is not None:
            prev_obs, prev_act = self._prev
            note = self_reflection(prev_act, prev_obs, obs.feedback)
            if note is not None:
                self.belief.reflection_notes.append(note)
                self.blacklist.add(_blacklist_key(prev_obs.pose, prev_act))
                if prev_act.kind == MOVE_AHEAD:
                    hx, hy = HEADING_VECTORS[prev_obs.pose.heading]
                    ahead = (prev_obs.pose.cell[0] + hx, prev_obs.pose.cell[1] + hy)
                    self.belief.bump_cells.add(ahead)
                if self._last_fail_pose == prev_obs.pose:
                    self._drop_plan()
                    self._last_fail_pose = None
                else:
                    self._last_fail_pose = prev_obs.pose
            else:
                self._last_fail_pose = None
                self._apply_effect(prev_obs, prev_act)
        b = self.belief
        if obs.pose.pitch == SEEK_PITCH:
            b.known_free.update(self._covered_cells(obs.pose))
        for entry in obs.visible:
            parent_id = None
            rel = entry.relation
            kind = rel.split(" ")[0]
            if kind in ("ON", "IN"):
                parent_id = int(rel.split(" ")[1])
                if kind == "IN":
                    b.open_state[parent_id] = True  # contents visible => open
            # believed position comes from the parent when attached
            cell = self._entry_cell(obs, entry)
            b.seen_objects[entry.id] = SeenObject(entry.obj_type, cell, kind, parent_id)

    def _covered_cells(self, pose: AgentPose) -> list[Cell]:
        """Floor cells inside the current view cone with clear line of sight;
        coverage is what frontier exploration tries to exhaust."""
        b = self.belief
        ax, ay = pose.cell
        hx, hy = HEADING_VECTORS[pose.heading]
        covered = []
        for dy in range(-5, 6):
            for dx in range(-5, 6):
                cell = (ax + dx, ay + dy)
                if not b.floor(cell):
                    continue
                dot = dx * hx + dy * hy
                if dot < abs(dx * hy - dy * hx):
                    continue
                clear = True
                for rc in _line_cells((ax, ay), cell)[1:-1]:
                    x, y = rc
                    if not (0 <= y < len(b.grid) and 0 <= x < len(b.grid[0])) \
                            or b.grid[y][x] == "#":
                        clear = False
                        break
                if clear:
                    covered.append(cell)
        return covered

    def _entry_cell(self, obs: Observation, entry) -> Cell:
        parent_rel = entry.relation.split(" ")
        if parent_rel[0] in ("ON", "IN"):
            parent = self.belief.seen_objects.get(int(parent_rel[1]))
            if parent is not None:
                return parent.cell
        # reconstruct from distance+bearing is lossy; search visible parents
        # failed, fall back to dead-reckoning along the bearing
        import math
        ax, ay = obs.pose.cell
        hx, hy = HEADING_VECTORS[obs.pose.heading]
        ang = math.radians(entry.bearing)
        # rotate heading vector by bearing (positive = counterclockwise here)
        vx = hx * math.cos(ang) + hy * math.sin(ang)
        vy = -hx * math.sin(ang) + hy * math.cos(ang)
        scale = entry.distance / max(abs(vx), abs(vy), 1e-9)
        return (round(ax + vx * scale), round(ay + vy * scale))

    def _apply_effect(self, prev_obs: Observation, act: Action) -> None:
        b = self.belief
        if act.kind == OPEN:
            b.open_state[act.target] = True
            b.opened_ids.add(act.target)
        elif act.kind == CLOSE:
            b.open_state[act.target] = False
        elif act.kind == TOGGLE_ON:
            b.on_state[act.target] = True
        elif act.kind == TOGGLE_OFF:
            b.on_state[act.target] = False
        elif act.kind == PICK_UP:
            seen = b.seen_objects.get(act.target)
            if seen is not None:
                seen.relation_kind = "CARRIED"
                seen.parent_id = None
            sub = self.task.subtasks[b.current_subtask_index]
            if seen is not None and seen.obj_type == sub.goal.target_type:
                b.focus_id = act.target
        elif act.kind == PUT:
            held = prev_obs.pose.held
            seen = b.seen_objects.get(held)
            receptacle = b.seen_objects.get(act.target)
            if seen is not None and receptacle is not None:
                interior = receptacle.obj_type in OPENABLE_TYPES or receptacle.obj_type == "Sink"
                seen.relation_kind = "IN" if interior else "ON"
                seen.parent_id = act.target
                seen.cell = receptacle.cell

    # -- selection ----------------------------------------------------------

    def _choose(self, obs: Observation) -> Action:
        sub = self.task.subtasks[self.belief.current_subtask_index]
        act = self._interaction_action(obs, sub)
        if act is not None and _blacklist_key(obs.pose, act) not in self.blacklist:
            self.sweep_queue.clear()
            self._drop_plan()
            return act
        objective = self._nav_objective(obs, sub)
        if objective is not None:
            act = self._approach_object(obs, objective)
            if act is not None:
                self.sweep_queue.clear()
                return act
        if self.sweep_queue:
            return self.sweep_queue.popleft()
        act = self._waypoint_action(obs)
        if act is not None:
            return act
        act = self._probe_action(obs)
        if act is not None:
            return act
        return Action(STOP)

    # priority 1: an interaction that is executable right now ----------------

    def _visible_in_range(self, obs: Observation, obj_type: Optional[str] = None,
                          oid: Optional[int] = None):
        for entry in obs.visible:
            if entry.distance > 1:
                continue
            if oid is not None and entry.id == oid:
                return entry
            if obj_type is not None and oid is None and entry.obj_type == obj_type:
                return entry
        return None

    def _held_type(self, obs: Observation) -> Optional[str]:
        held = obs.pose.held
        if held is None:
            return None
        seen = self.belief.seen_objects.get(held)
        return seen.obj_type if seen else None

    def _trusted_container_cell(self, cell: Cell) -> bool:
        """The reference vouches exactly for the cells it faced while opening
        containers; anything else would be a guess, not grounding."""
        for wp in self.hints.open_waypoints:
            hx, hy = HEADING_VECTORS[wp.heading]
            if cell == (wp.cell[0] + hx, wp.cell[1] + hy):
                return True
        return False

    def _open_candidate(self, obs: Observation) -> Optional[Action]:
        """Open a closed, not-yet-opened container standing next to us.

        With a reference in hand the agent trusts it and only opens
        containers near its waypoints; a misleading reference therefore
        really does mislead. Without one it searches freely."""
        best = None
        for entry in obs.visible:
            if entry.distance > 1 or entry.obj_type not in OPENABLE_TYPES:
                continue
            if self.belief.open_state.get(entry.id, False):
                continue
            if entry.id in self.belief.opened_ids:
                continue
            if self.hints.waypoints:
                seen = self.belief.seen_objects.get(entry.id)
                if seen is None or not self._trusted_container_cell(seen.cell):
                    continue
                if entry.obj_type not in self.hints.container_types:
                    continue
            if best is None or entry.id < best:
                best = entry.id
        return Action(OPEN, best) if best is not None else None

    def _target_seen(self, obj_type: str) -> bool:
        return any(
            s.obj_type == obj_type for s in self.belief.seen_objects.values()
        )

    def _interaction_action(self, obs: Observation, sub: SubTask) -> Optional[Action]:
        conds = set(sub.goal.conditions)
        target_type = sub.goal.target_type
        b = self.belief

        if conds == {"near"}:
            return None

        if conds == {"declared"}:
            entry = self._visible_in_range(obs, target_type)
            if entry is not None:
                return Action(DECLARE, entry.id)
            if not self._target_seen(target_type):
                return self._open_candidate(obs)
            return None

        if conds == {"held"}:
            if obs.pose.held is not None:
                return None
            entry = self._visible_in_range(obs, target_type)
            if entry is not None:
                return Action(PICK_UP, entry.id)
            if not self._target_seen(target_type):
                return self._open_candidate(obs)
            return None

        if conds in ({"hot"}, {"cold"}):
            appliance_type = "Microwave" if conds == {"hot"} else "Fridge"
            if obs.pose.held is not None:
                entry = self._visible_in_range(obs, appliance_type)
                if entry is None:
                    return None
                if not b.open_state.get(entry.id, False):
                    return Action(OPEN, entry.id)
                return Action(PUT, entry.id)
            focus = b.seen_objects.get(b.focus_id) if b.focus_id else None
            if focus is not None and focus.relation_kind == "IN":
                entry = self._visible_in_range(obs, oid=focus.parent_id)
                if entry is None:
                    return None
                if b.open_state.get(entry.id, False):
                    return Action(CLOSE, entry.id)
                if conds == {"hot"} and not b.on_state.get(entry.id, False):
                    return Action(TOGGLE_ON, entry.id)
            return None

        if conds == {"clean"}:
            if obs.pose.held is not None:
                entry = self._visible_in_range(obs, "Sink")
                if entry is not None:
                    return Action(PUT, entry.id)
                return None
            focus = b.seen_objects.get(b.focus_id) if b.focus_id else None
            if focus is not None and focus.relation_kind == "IN":
                entry = self._visible_in_range(obs, "Faucet")
                if entry is not None and not b.on_state.get(entry.id, False):
                    return Action(TOGGLE_ON, entry.id)
            return None

        if "placed" in conds:
            receptacle_type = sub.goal.receptacle_type
            if obs.pose.held is not None:
                entry = self._visible_in_range(obs, receptacle_type)
                if entry is None:
                    return None
                if entry.obj_type in OPENABLE_TYPES and not b.open_state.get(entry.id, False):
                    return Action(OPEN, entry.id)
                return Action(PUT, entry.id)
            entry = None
            if b.focus_id is not None:
                entry = self._visible_in_range(obs, oid=b.focus_id)
            if entry is None:
                entry = self._visible_in_range(obs, target_type)
            if entry is not None:
                return Action(PICK_UP, entry.id)
            focus = b.seen_objects.get(b.focus_id) if b.focus_id else None
            if focus is not None and focus.parent_id is not None:
                parent_entry = self._visible_in_range(obs, oid=focus.parent_id)
                if parent_entry is not None and not b.open_state.get(parent_entry.id, False):
                    return Action(OPEN, parent_entry.id)
            return None
        return None

    # priority 2: navigate to a seen object of interest ----------------------

    def _nearest_seen(self, obs: Observation, obj_type: str) -> Optional[int]:
        best = None
        ax, ay = obs.pose.cell
        for oid in sorted(self.belief.seen_objects):
            if oid in self._unreachable:
                continue
            seen = self.belief.seen_objects[oid]
            if seen.obj_type != obj_type or seen.relation_kind == "CARRIED":
                continue
            dist = max(abs(seen.cell[0] - ax), abs(seen.cell[1] - ay))
            if best is None or (dist, oid) < best:
                best = (dist, oid)
        return best[1] if best else None

    def _hinted_container(self, obs: Observation) -> Optional[int]:
        """A closed container matching the reference both by type and by
        place: the hint grounds a location, not a global prior."""
        best = None
        ax, ay = obs.pose.cell
        for oid in sorted(self.belief.seen_objects):
            if oid in self._unreachable or oid in self.belief.opened_ids:
                continue
            seen = self.belief.seen_objects[oid]
            if seen.obj_type not in self.hints.container_types:
                continue
            if seen.obj_type not in OPENABLE_TYPES:
                continue
            if self.belief.open_state.get(oid, False):
                continue
            if not self._trusted_container_cell(seen.cell):
                continue
            dist = max(abs(seen.cell[0] - ax), abs(seen.cell[1] - ay))
            if best is None or (dist, oid) < best:
                best = (dist, oid)
        return best[1] if best else None

    def _nav_objective(self, obs: Observation, sub: SubTask) -> Optional[int]:
        conds = set(sub.goal.conditions)
        target_type = sub.goal.target_type
        b = self.belief
        if conds in ({"near"}, {"declared"}, {"held"}):
            oid = self._nearest_seen(obs, target_type)
            if oid is not None:
                return oid
            return self._hinted_container(obs)
        if conds in ({"hot"}, {"cold"}, {"clean"}):
            appliance = {"hot": "Microwave", "cold": "Fridge", "clean": "Sink"}[
                next(iter(conds))
            ]
            if obs.pose.held is not None:
                return self._nearest_seen(obs, appliance)
            focus = b.seen_objects.get(b.focus_id) if b.focus_id else None
            if focus is not None and focus.parent_id is not None:
                if focus.parent_id not in self._unreachable:
                    return focus.parent_id
            return None
        if "placed" in conds:
            if obs.pose.held is not None:
                return self._nearest_seen(obs, sub.goal.receptacle_type)
            focus = b.seen_objects.get(b.focus_id) if b.focus_id else None
            if focus is not None:
                if focus.parent_id is not None and focus.parent_id not in self._unreachable:
                    return focus.parent_id
                if b.focus_id not in self._unreachable:
                    return b.focus_id
            return self._nearest_seen(obs, target_type)
        return None

    def _approach_object(self, obs: Observation, oid: int) -> Optional[Action]:
        seen = self.belief.seen_objects[oid]
        pose = obs.pose
        goals = interaction_goal_states(
            seen.cell, self.belief.passable,
            include_on_cell=seen.obj_type not in BLOCKING_TYPES,
        )
        state = (pose.cell[0], pose.cell[1], pose.heading)
        if state in goals:
            band = self.belief.elevation_of(oid)
            want = {"low": -30, "high": 30}.get(band, None)
            if want is not None and pose.pitch != want:
                return Action(LOOK_DOWN if want < pose.pitch else LOOK_UP)
            if not any(e.id == oid for e in obs.visible):
                # elevation bookkeeping was wrong; probe the other bands
                if pose.pitch > -30:
                    return Action(LOOK_DOWN)
                self._unreachable.add(oid)
                self._drop_plan()
                return None
            return None  # aligned and visible; priority 1 acts next step
        objective = ("obj", oid, self.belief.current_subtask_index)
        act = self._nav_step(obs, goals, objective)
        if act is None:
            self._unreachable.add(oid)
            self._drop_plan()
        return act

    def _nav_step(self, obs: Observation, goals: set,
                  objective: tuple) -> Optional[Action]:
        """Follow the cached route for this objective, replanning in place
        when new knowledge invalidates the next move."""
        if not goals:
            return None
        state = (obs.pose.cell[0], obs.pose.cell[1], obs.pose.heading)
        for _ in range(2):
            if self._plan_objective != objective or not self.plan:
                route = astar_route(state, goals, self.belief.passable)
                if not route:  # unreachable, or already standing in the goal set
                    self._drop_plan()
                    return None
                self.plan = deque(route)
                self._plan_objective = objective
                self.plan_id += 1
            act = self.plan.popleft()
            if act.kind == MOVE_AHEAD:
                hx, hy = HEADING_VECTORS[obs.pose.heading]
                ahead = (obs.pose.cell[0] + hx, obs.pose.cell[1] + hy)
                if not self.belief.passable(ahead) or \
                        _blacklist_key(obs.pose, act) in self.blacklist:
                    self._drop_plan()
                    continue
            return act
        return None

    # priority 3: reference waypoints ----------------------------------------

    def _queue_sweep(self, pitch_target: Optional[int], pose: AgentPose) -> None:
        self.sweep_queue.clear()
        if pitch_target is not None:
            pitch = pose.pitch
            while pitch > pitch_target:
                self.sweep_queue.append(Action(LOOK_DOWN))
                pitch -= 30
            while pitch < pitch_target:
                self.sweep_queue.append(Action(LOOK_UP))
                pitch += 30
        for _ in range(3):
            self.sweep_queue.append(Action(TURN_LEFT))
        self._sweep_round += 1

    def _waypoint_action(self, obs: Observation) -> Optional[Action]:
        while self._wp_idx < len(self._waypoints):
            wp = self._waypoints[self._wp_idx]
            if not self.belief.passable(wp.cell):
                self._wp_idx += 1
                continue
            if obs.pose.cell == wp.cell:
                self._wp_idx += 1
                self._queue_sweep(wp.pitch, obs.pose)
                return self.sweep_queue.popleft()
            goals = {(wp.cell[0], wp.cell[1], h) for h in HEADING_VECTORS}
            act = self._nav_step(obs, goals, ("wp", self._wp_idx))
            if act is not None:
                return act
            self._wp_idx += 1
        return None

    # priority 4: frontier probing -------------------------------------------

    def _probe_action(self, obs: Observation) -> Optional[Action]:
        b = self.belief
        start = obs.pose.cell
        if obs.pose.pitch > SEEK_PITCH:
            return Action(LOOK_DOWN)  # probe with the low+mid band in view
        if self._last_probe_target is not None and start == self._last_probe_target:
            # arrived at the probed cell; scan every other arrival
            self._last_probe_target = None
            self._probe_arrivals += 1
            if self._probe_arrivals % 2 == 1:
                pitch = HIGH_PITCH if self._sweep_round % 3 == 2 else SEEK_PITCH
                self._queue_sweep(pitch, obs.pose)
                return self.sweep_queue.popleft()
        # BFS over optimistically passable cells for the nearest unknown cell
        frontier: Optional[Cell] = None
        seen_cells = {start}
        queue: deque[tuple[Cell, int]] = deque([(start, 0)])
        best: Optional[tuple[int, Cell]] = None
        while queue:
            cell, dist = queue.popleft()
            if best is not None and dist > best[0]:
                break
            if cell not in b.known_free and cell != start:
                cand = (dist, cell)
                if best is None or cand < best:
                    best = cand
                continue
            x, y = cell
            for nxt in ((x, y - 1), (x + 1, y), (x, y + 1), (x - 1, y)):
                if nxt in seen_cells or not b.passable(nxt):
                    continue
                seen_cells.add(nxt)
                queue.append((nxt, dist + 1))
        if best is None:
            return None
        frontier = best[1]
        goals = {(frontier[0], frontier[1], h) for h in HEADING_VECTORS}
        act = self._nav_step(obs, goals, ("probe", frontier))
        if act is None:
            b.bump_cells.add(frontier)
            return None
        self._last_probe_target = frontier
        return act


# ---------------------------------------------------------------------------
# episode driver

@dataclass
class EpisodeResult:
    success: bool
    steps: int
    subtask_successes: list[bool]
    subtask_steps: list[int]
    trajectory: Trajectory


def execute_episode(scene: Scene, task: Task,
                    reference: Optional[AbstractTrajectory],
                    episode_seed: int) -> EpisodeResult:
    """Run the frozen policy for one task; failure is a result, not an error.

    A failed or unattempted subtask is charged its full step budget, so a
    failed episode always accounts for the full horizon.
    """
    env = Environment(scene)
    obs = env.reset(task, episode_seed)
    controller = AgentController(scene, task, reference)
    budget = task.horizon_per_subtask
    n = len(task.subtasks)
    observations = [obs]
    actions: list[Action] = []
    feedbacks = [obs.feedback]
    subtask_successes = [False] * n
    subtask_steps = [budget] * n
    overall = True
    for si, sub in enumerate(task.subtasks):
        controller.begin_subtask(si)
        if check_goal(env, sub.goal):
            subtask_successes[si] = True
            subtask_steps[si] = 0
            continue
        used = 0
        done = False
        while used < budget:
            action = controller.next_action(obs)
            if action.kind == STOP:
                break
            obs = env.step(action)
            observations.append(obs)
            actions.append(action)
            feedbacks.append(obs.feedback)
            used += 1
            if check_goal(env, sub.goal):
                done = True
                break
        subtask_successes[si] = done
        subtask_steps[si] = used if done else budget
        if not done:
            overall = False
            break
    steps = sum(subtask_steps) if overall else task.total_horizon
    trajectory = Trajectory(
        traj_id=f"rollout:{task.task_id}:{episode_seed}",
        task=task,
        observations=observations,
        actions=actions,
        feedbacks=feedbacks,
        steps=len(actions),
        success=overall,
        split="rollout",
    )
    return EpisodeResult(
        success=overall,
        steps=steps,
        subtask_successes=subtask_successes,
        subtask_steps=subtask_steps,
        trajectory=trajectory,
    )
