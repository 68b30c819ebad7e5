"""Deterministic multi-room household gridworld with symbolic observations.

Cells are (x, y) with y growing downward. The grid is a tuple of row strings:
'#' wall, '.' floor, 'D' door. Objects sit on floor cells and form an ON/IN
forest; the agent observes instances inside a 90-degree cone, limited by
range, line of sight, pitch/elevation bands and closed containers. Feedback
is a fixed English grammar ("OK. ..." / "Failed: <reason> ...") that other
modules parse back.
"""

from __future__ import annotations

import copy
import math
import random
import re
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Optional

from .seeding import canonical_json, derive_seed

# ---------------------------------------------------------------------------
# object catalog

OBJECT_TYPES = (
    "Cup", "Plate", "Potato", "Apple", "DishSponge", "Knife",
    "Microwave", "Fridge", "Cabinet", "Sink", "Faucet",
    "CounterTop", "Table", "Shelf", "Sofa", "Person",
)
TYPE_INDEX = {t: i for i, t in enumerate(OBJECT_TYPES)}

PICKUPABLE_TYPES = frozenset({"Cup", "Plate", "Potato", "Apple", "DishSponge", "Knife"})
OPENABLE_TYPES = frozenset({"Microwave", "Fridge", "Cabinet"})
TOGGLEABLE_TYPES = frozenset({"Microwave", "Faucet"})
SURFACE_TYPES = frozenset({"CounterTop", "Table", "Shelf", "Sofa"})
# Receptacles whose contents use the IN relation; Sink is open-topped.
INTERIOR_TYPES = frozenset({"Microwave", "Fridge", "Cabinet", "Sink"})
RECEPTACLE_TYPES = SURFACE_TYPES | INTERIOR_TYPES
# Faucet shares the sink's cell; everything else non-pickupable blocks it.
BLOCKING_TYPES = frozenset(
    t for t in OBJECT_TYPES if t not in PICKUPABLE_TYPES and t != "Faucet"
)

# Elevation of a surface determines the elevation of items placed on it.
SURFACE_ELEVATION = {"Shelf": "high", "Sofa": "low"}  # default "mid"


def surface_band(obj_type: str) -> str:
    return SURFACE_ELEVATION.get(obj_type, "mid")


HEADINGS = (0, 90, 180, 270)
HEADING_VECTORS = {0: (0, -1), 90: (1, 0), 180: (0, 1), 270: (-1, 0)}
PITCHES = (-30, 0, 30)
# pitch -30 looks down, +30 looks up.
PITCH_BANDS = {-30: ("low", "mid"), 0: ("mid",), 30: ("mid", "high")}

VISIBILITY_RANGE = 5
INTERACT_RANGE = 1

# ---------------------------------------------------------------------------
# actions

MOVE_AHEAD = "MoveAhead"
TURN_LEFT = "TurnLeft"
TURN_RIGHT = "TurnRight"
LOOK_UP = "LookUp"
LOOK_DOWN = "LookDown"
PICK_UP = "PickUp"
PUT = "Put"
OPEN = "Open"
CLOSE = "Close"
TOGGLE_ON = "ToggleOn"
TOGGLE_OFF = "ToggleOff"
DECLARE = "Declare"
STOP = "Stop"

MOVE_KINDS = frozenset({MOVE_AHEAD, TURN_LEFT, TURN_RIGHT})
LOOK_KINDS = frozenset({LOOK_UP, LOOK_DOWN})
INTERACTION_KINDS = frozenset({PICK_UP, PUT, OPEN, CLOSE, TOGGLE_ON, TOGGLE_OFF, DECLARE})
TARGETED_KINDS = INTERACTION_KINDS
ALL_KINDS = MOVE_KINDS | LOOK_KINDS | INTERACTION_KINDS | {STOP}


@dataclass(frozen=True)
class Action:
    kind: str
    target: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind in TARGETED_KINDS and self.target is None:
            raise ValueError(f"{self.kind} requires a target id")
        if self.kind not in TARGETED_KINDS and self.target is not None:
            raise ValueError(f"{self.kind} takes no target id")


def action_to_json(a: Action) -> dict:
    return {"kind": a.kind, "id": a.target}


def action_from_json(d: dict) -> Action:
    return Action(d["kind"], d["id"])


# ---------------------------------------------------------------------------
# world types

Cell = tuple[int, int]


@dataclass
class ObjectInstance:
    id: int
    obj_type: str
    position: Cell
    elevation: str  # low | mid | high
    relation_kind: str  # FLOOR | ON | IN | CARRIED
    relation_parent: Optional[int]
    openable: bool
    is_open: bool
    toggleable: bool
    is_on: bool
    pickupable: bool
    receptacle: bool
    temperature: str  # normal | hot | cold
    cleanliness: str  # dirty | clean


def make_object(oid: int, obj_type: str, position: Cell, elevation: str,
                relation_kind: str = "FLOOR", relation_parent: Optional[int] = None,
                ) -> ObjectInstance:
    return ObjectInstance(
        id=oid,
        obj_type=obj_type,
        position=position,
        elevation=elevation,
        relation_kind=relation_kind,
        relation_parent=relation_parent,
        openable=obj_type in OPENABLE_TYPES,
        is_open=False,
        toggleable=obj_type in TOGGLEABLE_TYPES,
        is_on=False,
        pickupable=obj_type in PICKUPABLE_TYPES,
        receptacle=obj_type in RECEPTACLE_TYPES,
        temperature="normal",
        cleanliness="dirty" if obj_type in PICKUPABLE_TYPES else "clean",
    )


@dataclass
class Scene:
    scene_id: str
    archetype: str
    seed: int
    grid: tuple[str, ...]  # row-major strings
    objects: list[ObjectInstance]

    @property
    def width(self) -> int:
        return len(self.grid[0])

    @property
    def height(self) -> int:
        return len(self.grid)


@dataclass(frozen=True)
class AgentPose:
    cell: Cell
    heading: int
    pitch: int
    held: Optional[int]


class VisibleEntry(NamedTuple):
    id: int
    obj_type: str
    relation: str  # "FLOOR" | "ON <pid>" | "IN <pid>"
    distance: int  # Chebyshev cells
    bearing: int  # degrees relative to heading, positive = counterclockwise


@dataclass(frozen=True)
class Observation:
    visible: tuple[VisibleEntry, ...]
    pose: AgentPose
    feedback: str


@dataclass(frozen=True)
class GoalPredicate:
    """Existential conjunction: one instance of target_type must satisfy all
    conditions. Conditions: held, near, placed, declared, hot, cold, clean."""

    target_type: str
    conditions: tuple[str, ...]
    receptacle_type: Optional[str] = None


@dataclass(frozen=True)
class SubTask:
    description: str
    goal: GoalPredicate


TASK_FAMILIES = (
    "goto", "answer_where", "pick_and_place",
    "pick_clean_then_place", "pick_cool_then_place", "pick_heat_then_place",
)

INSTRUCTION_TEMPLATES = {
    "goto": "Go to the {target}.",
    "answer_where": "Find the {target} and declare where it is.",
    "pick_and_place": "Pick up the {target} and put it on the {receptacle}.",
    "pick_clean_then_place": "Clean the {target} in the Sink, then put it on the {receptacle}.",
    "pick_cool_then_place": "Cool the {target} in the Fridge, then put it on the {receptacle}.",
    "pick_heat_then_place": "Heat the {target} in the Microwave, then put it on the {receptacle}.",
}


@dataclass(frozen=True)
class Task:
    task_id: str
    family: str
    instruction: str
    target_type: str
    receptacle_type: Optional[str]
    scene_id: str
    horizon_per_subtask: int
    subtasks: tuple[SubTask, ...]

    @property
    def total_horizon(self) -> int:
        return self.horizon_per_subtask * len(self.subtasks)


def render_instruction(family: str, target_type: str, receptacle_type: Optional[str]) -> str:
    return INSTRUCTION_TEMPLATES[family].format(target=target_type, receptacle=receptacle_type)


def decompose(family: str, target_type: str, receptacle_type: Optional[str]) -> tuple[SubTask, ...]:
    """Fixed template table; one-step fragments are already merged into these."""
    if family == "goto":
        return (SubTask(f"go to the {target_type}",
                        GoalPredicate(target_type, ("near",))),)
    if family == "answer_where":
        return (SubTask(f"find the {target_type} and declare it",
                        GoalPredicate(target_type, ("declared",))),)
    pick = SubTask(f"find and pick up the {target_type}",
                   GoalPredicate(target_type, ("held",)))
    if family == "pick_and_place":
        return (pick,
                SubTask(f"put the {target_type} on the {receptacle_type}",
                        GoalPredicate(target_type, ("placed",), receptacle_type)))
    state_by_family = {
        "pick_heat_then_place": ("hot", f"heat the {target_type} in the Microwave"),
        "pick_cool_then_place": ("cold", f"cool the {target_type} in the Fridge"),
        "pick_clean_then_place": ("clean", f"clean the {target_type} in the Sink"),
    }
    cond, desc = state_by_family[family]
    return (
        pick,
        SubTask(desc, GoalPredicate(target_type, (cond,))),
        SubTask(f"put the {target_type} on the {receptacle_type}",
                GoalPredicate(target_type, (cond, "placed"), receptacle_type)),
    )


def make_task(task_id: str, family: str, target_type: str,
              receptacle_type: Optional[str], scene_id: str,
              horizon_per_subtask: int = 50) -> Task:
    if family not in TASK_FAMILIES:
        raise ValueError(f"unknown task family {family!r}")
    return Task(
        task_id=task_id,
        family=family,
        instruction=render_instruction(family, target_type, receptacle_type),
        target_type=target_type,
        receptacle_type=receptacle_type,
        scene_id=scene_id,
        horizon_per_subtask=horizon_per_subtask,
        subtasks=decompose(family, target_type, receptacle_type),
    )


# ---------------------------------------------------------------------------
# feedback grammar

PICK_RE = re.compile(r"You pick up the (\w+) (\d+)\.")
PUT_RE = re.compile(r"You put the (\w+) (\d+) (on|in) the (\w+) (\d+)\.")
OPEN_RE = re.compile(r"You open the (\w+) (\d+)\.")
CLOSE_RE = re.compile(r"You close the (\w+) (\d+)\.")
TURN_ON_RE = re.compile(r"You turn on the (\w+) (\d+)\.")
TURN_OFF_RE = re.compile(r"You turn off the (\w+) (\d+)\.")
DECLARE_RE = re.compile(r"You declare the (\w+) (\d+) is here\.")
STATE_RE = re.compile(r"The (\w+) (\d+) is now (hot|cold|clean)\.")

FEEDBACK_KIND_RES = {
    PICK_UP: PICK_RE, PUT: PUT_RE, OPEN: OPEN_RE, CLOSE: CLOSE_RE,
    TOGGLE_ON: TURN_ON_RE, TOGGLE_OFF: TURN_OFF_RE, DECLARE: DECLARE_RE,
}


def listing_from_visible(visible: Iterable[VisibleEntry]) -> str:
    names = [f"{v.obj_type} {v.id}" for v in visible]
    return "You see: " + (", ".join(names) if names else "nothing") + "."


def plain_feedback(visible: Iterable[VisibleEntry]) -> str:
    """A step feedback with no event sentence (what navigation produces)."""
    return "OK. " + listing_from_visible(visible)


# ---------------------------------------------------------------------------
# scene generation

@dataclass(frozen=True)
class _ArchetypeSpec:
    width: int
    height: int
    rooms: int
    kind: str  # kitchen | living
    min_objects: int
    max_objects: int


ARCHETYPES: dict[str, _ArchetypeSpec] = {
    "kitchen-1room": _ArchetypeSpec(15, 13, 1, "kitchen", 12, 20),
    "kitchen-2room": _ArchetypeSpec(19, 13, 2, "kitchen", 12, 20),
    "livingroom-1room": _ArchetypeSpec(15, 13, 1, "living", 8, 14),
    "livingroom-2room": _ArchetypeSpec(19, 13, 2, "living", 8, 14),
}

_KITCHEN_FURNITURE = ("CounterTop", "Sink", "Fridge", "Microwave",
                      "Cabinet", "Cabinet", "Cabinet", "Cabinet", "Cabinet",
                      "Table")
_KITCHEN_EXTRAS = ("CounterTop", "Shelf")
_LIVING_FURNITURE = ("Sofa", "Table", "Shelf",
                     "Cabinet", "Cabinet", "Cabinet", "Cabinet")
_LIVING_EXTRAS = ("Table",)
# extra clutter never duplicates a guaranteed type: task goals are
# existential, so a visible duplicate would trivialize the search
_KITCHEN_GUARANTEED_ITEMS = ("Cup", "Potato", "Plate")
_KITCHEN_ITEM_POOL = ("Apple", "DishSponge", "Knife")
_LIVING_GUARANTEED_ITEMS = ("Cup", "Apple", "Plate")
_LIVING_ITEM_POOL = ("DishSponge", "Knife")

# Loose items never start on these receptacle types so that the shipped
# pick-and-place goals are never satisfied at reset.
EXCLUDED_START_PARENT = {
    "Cup": {"Table"},
    "Potato": {"Table", "CounterTop"},
    "Plate": {"Sofa", "Shelf", "Table"},
    "Apple": {"Sofa", "Shelf"},
}


class SceneInvalidError(Exception):
    pass


def _build_grid(spec: _ArchetypeSpec, rng: random.Random) -> tuple[str, ...]:
    w, h = spec.width, spec.height
    rows = [["#"] * w for _ in range(h)]
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            rows[y][x] = "."
    if spec.rooms == 2:
        divider = w // 2
        for y in range(1, h - 1):
            rows[y][divider] = "#"
        rows[rng.randrange(2, h - 2)][divider] = "D"
    return tuple("".join(r) for r in rows)


def _grid_cells(grid: tuple[str, ...], chars: str) -> list[Cell]:
    return [(x, y) for y, row in enumerate(grid) for x, ch in enumerate(row) if ch in chars]


def _orth_neighbors(cell: Cell) -> list[Cell]:
    x, y = cell
    return [(x, y - 1), (x + 1, y), (x, y + 1), (x - 1, y)]


def _connected(passable: set[Cell]) -> bool:
    if not passable:
        return False
    seen = set()
    stack = [min(passable)]
    while stack:
        c = stack.pop()
        if c in seen or c not in passable:
            continue
        seen.add(c)
        stack.extend(_orth_neighbors(c))
    return seen == passable


def _place_blocking(grid: tuple[str, ...], occupied: set[Cell],
                    rng: random.Random, wall_adjacent: bool) -> Cell:
    floor = set(_grid_cells(grid, "."))
    doors = set(_grid_cells(grid, "D"))
    door_zone = doors | {n for d in doors for n in _orth_neighbors(d)}

    def ok(cell: Cell) -> bool:
        if cell in occupied or cell in door_zone:
            return False
        if wall_adjacent and not any(
            grid[ny][nx] == "#" for nx, ny in _orth_neighbors(cell)
            if 0 <= ny < len(grid) and 0 <= nx < len(grid[0])
        ):
            return False
        trial = occupied | {cell}
        free = (floor | doors) - trial
        if not _connected(free):
            return False
        # every blocking object keeps a free orthogonal neighbor
        for c in trial:
            if not any(n in free for n in _orth_neighbors(c)):
                return False
        return True

    candidates = sorted(floor - occupied)
    rng.shuffle(candidates)
    for cell in candidates:
        if ok(cell):
            return cell
    raise SceneInvalidError("no valid placement cell")


def generate_scene(archetype: str, seed: int) -> Scene:
    """Procedural scene; same (archetype, seed) gives a byte-identical scene."""
    if archetype not in ARCHETYPES:
        raise ValueError(f"unknown archetype {archetype!r}")
    spec = ARCHETYPES[archetype]
    rng = random.Random(derive_seed(seed, "scene", archetype))
    for _attempt in range(64):
        try:
            return _generate_once(archetype, spec, seed, rng)
        except SceneInvalidError:
            continue
    raise AssertionError(f"scene generation failed for {archetype} seed {seed}")


def _generate_once(archetype: str, spec: _ArchetypeSpec, seed: int,
                   rng: random.Random) -> Scene:
    grid = _build_grid(spec, rng)
    if spec.kind == "kitchen":
        furniture = list(_KITCHEN_FURNITURE)
        furniture += rng.sample(_KITCHEN_EXTRAS, rng.randint(0, 1))
        guaranteed, pool = _KITCHEN_GUARANTEED_ITEMS, _KITCHEN_ITEM_POOL
        n_extra_items = rng.randint(1, 3)
    else:
        furniture = list(_LIVING_FURNITURE)
        furniture += rng.sample(_LIVING_EXTRAS, rng.randint(0, 1))
        guaranteed, pool = _LIVING_GUARANTEED_ITEMS, _LIVING_ITEM_POOL
        n_extra_items = rng.randint(1, 2)

    objects: list[ObjectInstance] = []
    occupied: set[Cell] = set()
    next_id = 1

    def add(obj_type: str, cell: Cell, elevation: str, rel: str = "FLOOR",
            parent: Optional[int] = None) -> ObjectInstance:
        nonlocal next_id
        obj = make_object(next_id, obj_type, cell, elevation, rel, parent)
        objects.append(obj)
        next_id += 1
        return obj

    for ftype in furniture:
        cell = _place_blocking(grid, occupied, rng, wall_adjacent=True)
        occupied.add(cell)
        obj = add(ftype, cell, surface_band(ftype))
        if ftype == "Sink":
            add("Faucet", cell, "mid", "ON", obj.id)
    person_cell = _place_blocking(grid, occupied, rng, wall_adjacent=False)
    occupied.add(person_cell)
    add("Person", person_cell, "mid")

    surfaces = [o for o in objects if o.obj_type in SURFACE_TYPES]
    cabinets = [o for o in objects if o.obj_type == "Cabinet"]
    floor_cells = sorted(set(_grid_cells(grid, ".")) - occupied)

    def place_item(item_type: str, hidden: bool) -> None:
        options: list[tuple[str, Optional[ObjectInstance]]] = []
        if hidden:
            # task-relevant items live inside containers: finding them is the
            # hard part of every task, so references carry real information
            options = [("IN", c) for c in cabinets]
        else:
            excluded = EXCLUDED_START_PARENT.get(item_type, set())
            for s in surfaces:
                if s.obj_type not in excluded:
                    options.append(("ON", s))
            options.append(("FLOOR", None))
            options.append(("FLOOR", None))
        kind, parent = options[rng.randrange(len(options))]
        if kind == "FLOOR":
            cell = floor_cells[rng.randrange(len(floor_cells))]
            add(item_type, cell, "low")
        elif kind == "ON":
            assert parent is not None
            add(item_type, parent.position, surface_band(parent.obj_type), "ON", parent.id)
        else:
            assert parent is not None
            add(item_type, parent.position, "mid", "IN", parent.id)

    for item_type in guaranteed:
        place_item(item_type, hidden=True)
    for _ in range(n_extra_items):
        place_item(pool[rng.randrange(len(pool))], hidden=False)

    if not (spec.min_objects <= len(objects) <= spec.max_objects):
        raise SceneInvalidError(f"object count {len(objects)} out of bounds")
    scene = Scene(
        scene_id=f"{archetype}-s{seed & 0xFFFFFFFFFFFFFFFF:016x}",
        archetype=archetype,
        seed=seed,
        grid=grid,
        objects=objects,
    )
    validate_scene(scene)
    return scene


def validate_scene(scene: Scene) -> None:
    """Raise SceneInvalidError when a structural invariant is broken."""
    grid = scene.grid
    ids = [o.id for o in scene.objects]
    if ids != list(range(1, len(ids) + 1)):
        raise SceneInvalidError("ids must be 1..N in order")
    by_id = {o.id: o for o in scene.objects}
    blocked = {o.position for o in scene.objects if o.obj_type in BLOCKING_TYPES}
    free = (set(_grid_cells(grid, ".")) | set(_grid_cells(grid, "D"))) - blocked
    if not _connected(free):
        raise SceneInvalidError("free cells disconnected")
    for o in scene.objects:
        x, y = o.position
        if grid[y][x] != ".":
            raise SceneInvalidError(f"object {o.id} not on a floor cell")
        if o.relation_kind == "IN":
            parent = by_id[o.relation_parent]
            if not (parent.openable or parent.obj_type == "Sink"):
                raise SceneInvalidError("IN parent must be openable or a Sink")
        if o.pickupable and any(c.relation_parent == o.id for c in scene.objects):
            raise SceneInvalidError("pickupable object with children")
        # relation forest must be acyclic
        seen = set()
        cur = o
        while cur.relation_parent is not None:
            if cur.id in seen:
                raise SceneInvalidError("relation cycle")
            seen.add(cur.id)
            cur = by_id[cur.relation_parent]


# ---------------------------------------------------------------------------
# environment

def _line_cells(a: Cell, b: Cell) -> list[Cell]:
    (x0, y0), (x1, y1) = a, b
    cells = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        cells.append((x, y))
        if (x, y) == (x1, y1):
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    return cells


class Environment:
    """Single-threaded world instance; all randomness comes from reset seeds."""

    def __init__(self, scene: Scene):
        self.scene = scene
        self.grid = scene.grid
        self.width = scene.width
        self.height = scene.height
        self.objects: dict[int, ObjectInstance] = {}
        self.pose: Optional[AgentPose] = None
        self.declared: set[int] = set()
        self.task: Optional[Task] = None
        self.steps_taken = 0
        self._blocking_cells: set[Cell] = set()

    # -- lifecycle ---------------------------------------------------------

    def reset(self, task: Task, episode_seed: int = 0,
              pose: Optional[AgentPose] = None) -> Observation:
        if task.scene_id != self.scene.scene_id:
            raise ValueError("task does not belong to this scene")
        self.task = task
        self.objects = {o.id: copy.copy(o) for o in self.scene.objects}
        self.declared = set()
        self.steps_taken = 0
        self._blocking_cells = {
            o.position for o in self.objects.values() if o.obj_type in BLOCKING_TYPES
        }
        if pose is None:
            rng = random.Random(derive_seed(episode_seed, "reset",
                                            self.scene.scene_id, task.task_id))
            cells = self.spawnable_cells()
            if not cells:
                raise SceneInvalidError("no reachable spawn cell")
            cell = cells[rng.randrange(len(cells))]
            heading = HEADINGS[rng.randrange(4)]
            pose = AgentPose(cell, heading, 0, None)
        self.pose = pose
        visible = self.visible_entries()
        obs = Observation(tuple(visible), self.pose, listing_from_visible(visible))
        self._last_obs = obs
        return obs

    def spawnable_cells(self) -> list[Cell]:
        free = [
            c for c in _grid_cells(self.grid, ".D")
            if c not in self._blocking_cells
        ]
        return sorted(free)

    # -- visibility --------------------------------------------------------

    def _grid_char(self, cell: Cell) -> str:
        x, y = cell
        if 0 <= y < self.height and 0 <= x < self.width:
            return self.grid[y][x]
        return "#"

    def is_visible(self, obj: ObjectInstance) -> bool:
        if obj.relation_kind == "CARRIED":
            return False
        node = obj
        while node.relation_kind == "IN":
            parent = self.objects[node.relation_parent]
            if parent.openable and not parent.is_open:
                return False
            node = parent
        ax, ay = self.pose.cell
        ox, oy = obj.position
        dx, dy = ox - ax, oy - ay
        if max(abs(dx), abs(dy)) > VISIBILITY_RANGE:
            return False
        hx, hy = HEADING_VECTORS[self.pose.heading]
        dot = dx * hx + dy * hy
        cross = dx * hy - dy * hx
        if dot < abs(cross):  # outside the 90-degree cone (also rejects behind)
            return False
        if obj.elevation not in PITCH_BANDS[self.pose.pitch]:
            return False
        for cell in _line_cells((ax, ay), (ox, oy))[1:-1]:
            if self._grid_char(cell) == "#":
                return False
        return True

    def visible_entries(self) -> list[VisibleEntry]:
        ax, ay = self.pose.cell
        hx, hy = HEADING_VECTORS[self.pose.heading]
        entries = []
        for oid in sorted(self.objects):
            obj = self.objects[oid]
            if not self.is_visible(obj):
                continue
            dx, dy = obj.position[0] - ax, obj.position[1] - ay
            dot = dx * hx + dy * hy
            cross = dx * hy - dy * hx
            bearing = int(round(math.degrees(math.atan2(cross, dot))))
            if obj.relation_kind == "FLOOR":
                rel = "FLOOR"
            else:
                rel = f"{obj.relation_kind} {obj.relation_parent}"
            entries.append(VisibleEntry(oid, obj.obj_type, rel,
                                        max(abs(dx), abs(dy)), bearing))
        return entries

    # -- stepping ----------------------------------------------------------

    def step(self, action: Action) -> Observation:
        if self.pose is None:
            raise RuntimeError("reset() must be called before step()")
        ok, sentence = self._apply(action)
        notes = self._apply_physics() if ok else []
        self.steps_taken += 1
        visible = self.visible_entries()
        head = "OK." if ok else f"Failed: {sentence}"
        parts = [head]
        if ok and sentence:
            parts.append(sentence)
        parts.extend(notes)
        parts.append(listing_from_visible(visible))
        obs = Observation(tuple(visible), self.pose, " ".join(parts))
        self._last_obs = obs
        return obs

    def _name(self, obj: ObjectInstance) -> str:
        return f"{obj.obj_type} {obj.id}"

    def _resolve(self, action: Action) -> tuple[Optional[ObjectInstance], Optional[str]]:
        oid = action.target
        obj = self.objects.get(oid)
        if obj is None or not self.is_visible(obj):
            return None, "no such object."
        ax, ay = self.pose.cell
        dist = max(abs(obj.position[0] - ax), abs(obj.position[1] - ay))
        if dist > INTERACT_RANGE:
            return None, "too far."
        return obj, None

    def _apply(self, action: Action) -> tuple[bool, str]:
        kind = action.kind
        pose = self.pose
        if kind == MOVE_AHEAD:
            hx, hy = HEADING_VECTORS[pose.heading]
            nxt = (pose.cell[0] + hx, pose.cell[1] + hy)
            if self._grid_char(nxt) == "#" or nxt in self._blocking_cells:
                return False, "blocked."
            self.pose = replace(pose, cell=nxt)
            return True, ""
        if kind == TURN_LEFT:
            self.pose = replace(pose, heading=(pose.heading - 90) % 360)
            return True, ""
        if kind == TURN_RIGHT:
            self.pose = replace(pose, heading=(pose.heading + 90) % 360)
            return True, ""
        if kind == LOOK_UP:
            if pose.pitch >= 30:
                return False, "pitch limit."
            self.pose = replace(pose, pitch=pose.pitch + 30)
            return True, ""
        if kind == LOOK_DOWN:
            if pose.pitch <= -30:
                return False, "pitch limit."
            self.pose = replace(pose, pitch=pose.pitch - 30)
            return True, ""
        if kind == STOP:
            return True, "You stop."

        obj, err = self._resolve(action)
        if err:
            return False, err
        assert obj is not None

        if kind == PICK_UP:
            if not obj.pickupable:
                return False, "not pickupable."
            if pose.held is not None:
                return False, "hands full."
            obj.relation_kind = "CARRIED"
            obj.relation_parent = None
            obj.position = pose.cell
            self.pose = replace(pose, held=obj.id)
            return True, f"You pick up the {self._name(obj)}."
        if kind == PUT:
            if pose.held is None:
                return False, "hands empty."
            if not obj.receptacle:
                return False, "not a receptacle."
            if obj.openable and not obj.is_open:
                return False, "closed."
            held = self.objects[pose.held]
            if obj.obj_type in INTERIOR_TYPES:
                held.relation_kind, word = "IN", "in"
                held.elevation = "mid"
            else:
                held.relation_kind, word = "ON", "on"
                held.elevation = surface_band(obj.obj_type)
            held.relation_parent = obj.id
            held.position = obj.position
            self.pose = replace(pose, held=None)
            return True, f"You put the {self._name(held)} {word} the {self._name(obj)}."
        if kind == OPEN:
            if not obj.openable:
                return False, "not openable."
            if obj.is_open:
                return False, "already open."
            obj.is_open = True
            return True, f"You open the {self._name(obj)}."
        if kind == CLOSE:
            if not obj.openable:
                return False, "not openable."
            if not obj.is_open:
                return False, "already closed."
            obj.is_open = False
            return True, f"You close the {self._name(obj)}."
        if kind == TOGGLE_ON:
            if not obj.toggleable:
                return False, "not toggleable."
            if obj.is_on:
                return False, "already on."
            obj.is_on = True
            return True, f"You turn on the {self._name(obj)}."
        if kind == TOGGLE_OFF:
            if not obj.toggleable:
                return False, "not toggleable."
            if not obj.is_on:
                return False, "already off."
            obj.is_on = False
            return True, f"You turn off the {self._name(obj)}."
        if kind == DECLARE:
            if self.task.family != "answer_where":
                return False, "not allowed."
            self.declared.add(obj.id)
            return True, f"You declare the {self._name(obj)} is here."
        raise AssertionError(f"unhandled action {kind}")

    def _apply_physics(self) -> list[str]:
        notes = []
        faucets_on = {
            o.position for o in self.objects.values()
            if o.obj_type == "Faucet" and o.is_on
        }
        for oid in sorted(self.objects):
            obj = self.objects[oid]
            if obj.relation_kind != "IN":
                continue
            parent = self.objects[obj.relation_parent]
            if parent.obj_type == "Microwave" and parent.is_on and not parent.is_open:
                if obj.temperature != "hot":
                    obj.temperature = "hot"
                    notes.append(f"The {self._name(obj)} is now hot.")
            elif parent.obj_type == "Fridge" and not parent.is_open:
                if obj.temperature != "cold":
                    obj.temperature = "cold"
                    notes.append(f"The {self._name(obj)} is now cold.")
            elif parent.obj_type == "Sink" and parent.position in faucets_on:
                if obj.cleanliness != "clean":
                    obj.cleanliness = "clean"
                    notes.append(f"The {self._name(obj)} is now clean.")
        return notes

    # -- goal oracle -------------------------------------------------------

    def goal_satisfied(self, goal: GoalPredicate) -> bool:
        for obj in self.objects.values():
            if obj.obj_type != goal.target_type:
                continue
            if self._satisfies(obj, goal):
                return True
        return False

    def _satisfies(self, obj: ObjectInstance, goal: GoalPredicate) -> bool:
        for cond in goal.conditions:
            if cond == "held":
                if self.pose.held != obj.id:
                    return False
            elif cond == "near":
                ax, ay = self.pose.cell
                dist = max(abs(obj.position[0] - ax), abs(obj.position[1] - ay))
                if dist > 1 or not self.is_visible(obj):
                    return False
            elif cond == "placed":
                if obj.relation_parent is None:
                    return False
                parent = self.objects[obj.relation_parent]
                if parent.obj_type != goal.receptacle_type:
                    return False
            elif cond == "declared":
                if obj.id not in self.declared:
                    return False
            elif cond == "hot":
                if obj.temperature != "hot":
                    return False
            elif cond == "cold":
                if obj.temperature != "cold":
                    return False
            elif cond == "clean":
                if obj.cleanliness != "clean":
                    return False
            else:
                raise ValueError(f"unknown goal condition {cond!r}")
        return True

    # -- snapshots ---------------------------------------------------------

    def state_json(self) -> str:
        """Canonical serialization of the mutable world state."""
        return canonical_json({
            "objects": [object_to_json(self.objects[i]) for i in sorted(self.objects)],
            "pose": pose_to_json(self.pose),
            "declared": sorted(self.declared),
        })


def check_goal(env: Environment, goal: GoalPredicate) -> bool:
    """Oracle goal check; pure function of the environment state."""
    return env.goal_satisfied(goal)


# ---------------------------------------------------------------------------
# serialization

def object_to_json(o: ObjectInstance) -> dict:
    return {
        "id": o.id, "obj_type": o.obj_type, "position": list(o.position),
        "elevation": o.elevation, "relation_kind": o.relation_kind,
        "relation_parent": o.relation_parent, "openable": o.openable,
        "is_open": o.is_open, "toggleable": o.toggleable, "is_on": o.is_on,
        "pickupable": o.pickupable, "receptacle": o.receptacle,
        "temperature": o.temperature, "cleanliness": o.cleanliness,
    }


def object_from_json(d: dict) -> ObjectInstance:
    return ObjectInstance(
        id=d["id"], obj_type=d["obj_type"], position=tuple(d["position"]),
        elevation=d["elevation"], relation_kind=d["relation_kind"],
        relation_parent=d["relation_parent"], openable=d["openable"],
        is_open=d["is_open"], toggleable=d["toggleable"], is_on=d["is_on"],
        pickupable=d["pickupable"], receptacle=d["receptacle"],
        temperature=d["temperature"], cleanliness=d["cleanliness"],
    )


def scene_to_json(s: Scene) -> dict:
    return {
        "scene_id": s.scene_id, "archetype": s.archetype, "seed": s.seed,
        "grid": list(s.grid), "objects": [object_to_json(o) for o in s.objects],
    }


def scene_from_json(d: dict) -> Scene:
    return Scene(
        scene_id=d["scene_id"], archetype=d["archetype"], seed=d["seed"],
        grid=tuple(d["grid"]), objects=[object_from_json(o) for o in d["objects"]],
    )


def pose_to_json(p: AgentPose) -> dict:
    return {"cell": list(p.cell), "heading": p.heading, "pitch": p.pitch, "held": p.held}


def pose_from_json(d: dict) -> AgentPose:
    return AgentPose(tuple(d["cell"]), d["heading"], d["pitch"], d["held"])


def observation_to_json(o: Observation) -> dict:
    return {
        "visible": [list(v) for v in o.visible],
        "pose": pose_to_json(o.pose),
        "feedback": o.feedback,
    }


def observation_from_json(d: dict) -> Observation:
    return Observation(
        tuple(VisibleEntry(*v) for v in d["visible"]),
        pose_from_json(d["pose"]),
        d["feedback"],
    )


def goal_to_json(g: GoalPredicate) -> dict:
    return {"target_type": g.target_type, "conditions": list(g.conditions),
            "receptacle_type": g.receptacle_type}


def goal_from_json(d: dict) -> GoalPredicate:
    return GoalPredicate(d["target_type"], tuple(d["conditions"]), d["receptacle_type"])


def task_to_json(t: Task) -> dict:
    return {
        "task_id": t.task_id, "family": t.family, "instruction": t.instruction,
        "target_type": t.target_type, "receptacle_type": t.receptacle_type,
        "scene_id": t.scene_id, "horizon_per_subtask": t.horizon_per_subtask,
        "subtasks": [
            {"description": s.description, "goal": goal_to_json(s.goal)}
            for s in t.subtasks
        ],
    }


def task_from_json(d: dict) -> Task:
    return Task(
        task_id=d["task_id"], family=d["family"], instruction=d["instruction"],
        target_type=d["target_type"], receptacle_type=d["receptacle_type"],
        scene_id=d["scene_id"], horizon_per_subtask=d["horizon_per_subtask"],
        subtasks=tuple(
            SubTask(s["description"], goal_from_json(s["goal"])) for s in d["subtasks"]
        ),
    )


def archetype_of_scene_id(scene_id: str) -> str:
    return scene_id.rsplit("-s", 1)[0]
