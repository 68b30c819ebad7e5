"""Shipped benchmark suites: procedurally generated scenes plus task lists.

Task slots are fixed tables. Within an archetype every scene carries the
shared signatures (those duplicates get filtered from memory, keeping the
shortest), while varied slots rotate so they never collide. Several
signatures repeat across archetypes so instruction text alone cannot
identify the right reference trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

from .seeding import derive_seed
from .world import (
    ARCHETYPES, Scene, Task, generate_scene, make_task,
    scene_from_json, scene_to_json, task_from_json, task_to_json,
)

Slot = tuple[str, str, str | None]  # (family, target_type, receptacle_type)

TRAIN_SLOTS: dict[str, dict] = {
    "kitchen": {
        "shared": [
            ("pick_and_place", "Cup", "Table"),
            ("pick_heat_then_place", "Potato", "Table"),
            ("pick_clean_then_place", "Plate", "CounterTop"),
        ],
        "varied": [
            [("pick_cool_then_place", "Cup", "CounterTop"),
             ("answer_where", "Potato", None)],
            [("pick_cool_then_place", "Plate", "Table"),
             ("answer_where", "Plate", None)],
            [("pick_cool_then_place", "Potato", "CounterTop"),
             ("answer_where", "Cup", None)],
        ],
    },
    "living": {
        # goto is omitted here on purpose: its target is always in plain
        # sight, so reference quality barely moves it and its preference
        # labels are mostly noise
        "shared": [
            ("pick_and_place", "Cup", "Table"),
            ("answer_where", "Apple", None),
            ("pick_and_place", "Apple", "Sofa"),
        ],
        "varied": [
            [("answer_where", "Plate", None),
             ("pick_and_place", "Plate", "Sofa")],
            [("answer_where", "Cup", None),
             ("pick_and_place", "Plate", "Table")],
            [("pick_and_place", "Apple", "Shelf"),
             ("pick_and_place", "Cup", "Shelf")],
        ],
    },
}

TEST_SLOTS: dict[str, dict] = {
    "kitchen": {
        "shared": [
            ("pick_and_place", "Cup", "Table"),
            ("pick_heat_then_place", "Potato", "CounterTop"),
        ],
        "varied": [
            [("answer_where", "Cup", None),
             ("pick_clean_then_place", "Cup", "Table")],
            [("answer_where", "Plate", None),
             ("pick_cool_then_place", "Potato", "Table")],
            [("answer_where", "Potato", None),
             ("pick_cool_then_place", "Plate", "CounterTop")],
        ],
    },
    "living": {
        "shared": [
            ("goto", "Person", None),
            ("pick_and_place", "Cup", "Table"),
        ],
        "varied": [
            [("answer_where", "Cup", None),
             ("pick_and_place", "Plate", "Sofa")],
            [("answer_where", "Apple", None),
             ("pick_and_place", "Apple", "Shelf")],
            [("answer_where", "Plate", None),
             ("pick_and_place", "Apple", "Sofa")],
        ],
    },
}

# two-room layouts dominate: searching them blind routinely exceeds the
# budget, which is what makes reference quality decisive
SCENES_PER_ARCHETYPE = {
    "kitchen-1room": 1,
    "kitchen-2room": 3,
    "livingroom-1room": 1,
    "livingroom-2room": 3,
}


@dataclass
class Suite:
    split: str
    master_seed: int
    scenes: dict[str, Scene]
    tasks: list[Task]

    def scene_of(self, task: Task) -> Scene:
        return self.scenes[task.scene_id]


def build_suite(split: str, master_seed: int,
                horizon_per_subtask: int = 50) -> Suite:
    """Build the default suite for a split; train and test suites generated
    from the same master seed share no scene ids and no task ids."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be train or test, got {split!r}")
    slot_table = TRAIN_SLOTS if split == "train" else TEST_SLOTS
    scenes: dict[str, Scene] = {}
    tasks: list[Task] = []
    for archetype in sorted(ARCHETYPES):
        kind = ARCHETYPES[archetype].kind
        kind_key = "kitchen" if kind == "kitchen" else "living"
        shared = slot_table[kind_key]["shared"]
        varied = slot_table[kind_key]["varied"]
        for idx in range(SCENES_PER_ARCHETYPE[archetype]):
            seed = derive_seed(master_seed, split, "scene", archetype, idx)
            scene = generate_scene(archetype, seed)
            scenes[scene.scene_id] = scene
            slots = list(shared) + list(varied[idx % len(varied)])
            for t_idx, (family, target, recep) in enumerate(slots):
                task = make_task(
                    task_id=f"{scene.scene_id}/t{t_idx}",
                    family=family,
                    target_type=target,
                    receptacle_type=recep,
                    scene_id=scene.scene_id,
                    horizon_per_subtask=horizon_per_subtask,
                )
                _validate_task(scene, task)
                tasks.append(task)
    return Suite(split=split, master_seed=master_seed, scenes=scenes, tasks=tasks)


def _validate_task(scene: Scene, task: Task) -> None:
    types_present = {o.obj_type for o in scene.objects}
    if task.target_type not in types_present:
        raise ValueError(f"{task.task_id}: target {task.target_type} missing from scene")
    if task.receptacle_type is not None and task.receptacle_type not in types_present:
        raise ValueError(f"{task.task_id}: receptacle {task.receptacle_type} missing")
    if task.family == "pick_and_place":
        # the goal must not hold at reset
        by_id = {o.id: o for o in scene.objects}
        for o in scene.objects:
            if o.obj_type == task.target_type and o.relation_parent is not None:
                if by_id[o.relation_parent].obj_type == task.receptacle_type:
                    raise ValueError(f"{task.task_id}: goal satisfied at reset")


def suite_to_json(s: Suite) -> dict:
    return {
        "split": s.split,
        "master_seed": s.master_seed,
        "scenes": [scene_to_json(s.scenes[k]) for k in sorted(s.scenes)],
        "tasks": [task_to_json(t) for t in s.tasks],
    }


def suite_from_json(d: dict) -> Suite:
    scenes = {sc["scene_id"]: scene_from_json(sc) for sc in d["scenes"]}
    return Suite(
        split=d["split"],
        master_seed=d["master_seed"],
        scenes=scenes,
        tasks=[task_from_json(t) for t in d["tasks"]],
    )
