"""Planner tests: navigation optimality against a BFS oracle, replays."""

import pytest

from conftest import bfs_nav_distance, true_passable
from trajlab.memory import replay_to_success
from trajlab.planner import PlanFailure, astar_route, plan_expert
from trajlab.seeding import derive_seed
from trajlab.world import (
    Action, AgentPose, Environment, MOVE_KINDS, Scene, generate_scene,
    make_object, make_task,
)


def nav_segments(traj):
    """(start_state, end_state, length) of maximal move/turn runs."""
    env = Environment(generate_scene_for(traj))
    env.reset(traj.task, pose=traj.observations[0].pose)
    segments = []
    current = None
    for i, action in enumerate(traj.actions):
        pose = traj.observations[i].pose
        state = (pose.cell[0], pose.cell[1], pose.heading)
        if action.kind in MOVE_KINDS:
            if current is None:
                current = [state, None, 0]
            current[2] += 1
            end_pose = traj.observations[i + 1].pose
            current[1] = (end_pose.cell[0], end_pose.cell[1], end_pose.heading)
        else:
            if current is not None:
                segments.append(tuple(current))
                current = None
    if current is not None:
        segments.append(tuple(current))
    return segments


_SCENES = {}


def generate_scene_for(traj):
    return _SCENES[traj.task.scene_id]


def make_scene(archetype, seed):
    scene = generate_scene(archetype, seed)
    _SCENES[scene.scene_id] = scene
    return scene


FAMILIES = (
    ("goto", "Person", None),
    ("answer_where", "Cup", None),
    ("pick_and_place", "Cup", "Table"),
    ("pick_heat_then_place", "Potato", "Table"),
    ("pick_cool_then_place", "Plate", "CounterTop"),
    ("pick_clean_then_place", "Cup", "Table"),
)


def test_expert_replays_to_success_and_never_fails():
    for i in range(12):
        archetype = ("kitchen-1room", "kitchen-2room")[i % 2]
        scene = make_scene(archetype, 100 + i)
        family, target, receptacle = FAMILIES[i % len(FAMILIES)]
        task = make_task(f"{scene.scene_id}/t0", family, target, receptacle,
                         scene.scene_id)
        traj = plan_expert(scene, task, derive_seed(1, i))
        assert traj.success
        assert not any(fb.startswith("Failed:") for fb in traj.feedbacks)
        assert replay_to_success(traj, scene)


def test_navigation_segments_match_bfs_oracle():
    checked = 0
    for i in range(20):
        archetype = ("kitchen-1room", "livingroom-2room")[i % 2]
        scene = make_scene(archetype, 200 + i)
        family, target, receptacle = FAMILIES[i % len(FAMILIES)]
        if archetype.startswith("livingroom") and family not in (
                "goto", "answer_where", "pick_and_place"):
            family, target, receptacle = "pick_and_place", "Cup", "Table"
        task = make_task(f"{scene.scene_id}/t0", family, target, receptacle,
                         scene.scene_id)
        traj = plan_expert(scene, task, derive_seed(2, i))
        env = Environment(scene)
        env.reset(task, pose=traj.observations[0].pose)
        passable = true_passable(env)
        for start, end, length in nav_segments(traj):
            assert bfs_nav_distance(start, {end}, passable) == length
            checked += 1
    assert checked > 20


def test_straight_corridor_navigation_is_exact():
    # hand-built 9x5 room: person four cells ahead -> exactly three moves
    grid = ("#########",
            "#.......#",
            "#.......#",
            "#.......#",
            "#########")
    person = make_object(1, "Person", (6, 2), "mid")
    scene = Scene("corridor-s1", "kitchen-1room", 1, grid, [person])
    task = make_task(f"{scene.scene_id}/t0", "goto", "Person", None,
                     scene.scene_id)
    from trajlab.planner import _Expert, _Recorder
    env = Environment(scene)
    rec = _Recorder(env, env.reset(task, pose=AgentPose((2, 2), 90, 0, None)))
    _Expert(env, rec).run_subtask(task.subtasks[0].goal)
    assert [a.kind for a in rec.actions] == ["MoveAhead"] * 3


def test_astar_ties_are_deterministic():
    grid_passable = lambda cell: 0 <= cell[0] < 6 and 0 <= cell[1] < 6
    goals = {(3, 3, h) for h in (0, 90, 180, 270)}
    a = astar_route((0, 0, 90), goals, grid_passable)
    b = astar_route((0, 0, 90), goals, grid_passable)
    assert a == b
    assert len(a) == bfs_nav_distance((0, 0, 90), goals, grid_passable)


def test_unreachable_target_raises_plan_failure():
    grid = ("#####",
            "#.#.#",
            "#####")
    person = make_object(1, "Person", (3, 1), "mid")
    scene = Scene("blocked-s1", "kitchen-1room", 1, grid, [person])
    task = make_task(f"{scene.scene_id}/t0", "goto", "Person", None,
                     scene.scene_id)
    with pytest.raises(PlanFailure):
        env = Environment(scene)
        from trajlab.planner import _Expert, _Recorder
        rec = _Recorder(env, env.reset(task, pose=AgentPose((1, 1), 90, 0, None)))
        _Expert(env, rec).run_subtask(task.subtasks[0].goal)
