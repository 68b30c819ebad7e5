"""Milestone abstraction tests: triggers, compression, conditioning."""

import json

from trajlab.abstraction import (
    abstract_from_json, abstract_to_json, abstract_trajectory,
    interaction_step_indices, raw_abstract,
)
from trajlab.memory import Trajectory
from trajlab.planner import plan_expert
from trajlab.seeding import canonical_json, derive_seed
from trajlab.world import Action, Environment, INTERACTION_KINDS, make_task


def test_every_interaction_step_is_a_milestone(test_suite, test_store):
    for traj in test_store.ordered():
        abstract = abstract_trajectory(traj, traj.task)
        indices = {m.step_index for m in abstract.milestones}
        for i in interaction_step_indices(traj):
            assert i in indices


def test_milestone_indices_strictly_increasing_and_bounded(test_store):
    for traj in test_store.ordered():
        abstract = abstract_trajectory(traj, traj.task)
        indices = [m.step_index for m in abstract.milestones]
        assert indices == sorted(set(indices))
        assert 1 <= len(indices) <= traj.steps


def test_mean_compression_over_test_memory(test_store):
    trajs = test_store.ordered()
    mean_steps = sum(t.steps for t in trajs) / len(trajs)
    mean_milestones = sum(
        len(abstract_trajectory(t, t.task).milestones) for t in trajs
    ) / len(trajs)
    assert mean_milestones / mean_steps <= 0.5


def test_long_wandering_trajectory_compresses_to_few_milestones(test_suite):
    # splice 64 state-neutral turns in front of an expert solution: a long
    # trajectory whose useful content is still a handful of steps
    task = next(t for t in test_suite.tasks if t.family == "pick_and_place")
    scene = test_suite.scene_of(task)
    expert = plan_expert(scene, task, derive_seed(5, task.task_id))
    env = Environment(scene)
    obs = env.reset(task, pose=expert.observations[0].pose)
    observations, actions, feedbacks = [obs], [], [obs.feedback]
    for _ in range(64):
        act = Action("TurnLeft")
        obs = env.step(act)
        observations.append(obs)
        actions.append(act)
        feedbacks.append(obs.feedback)
    for act in expert.actions:
        obs = env.step(act)
        assert not obs.feedback.startswith("Failed:")
        observations.append(obs)
        actions.append(act)
        feedbacks.append(obs.feedback)
    traj = Trajectory(
        traj_id=expert.traj_id, task=task, observations=observations,
        actions=actions, feedbacks=feedbacks, steps=len(actions),
        success=True, split="test",
    )
    assert traj.steps >= 73
    abstract = abstract_trajectory(traj, task)
    assert len(abstract.milestones) <= 8
    indices = {m.step_index for m in abstract.milestones}
    for i in interaction_step_indices(traj):
        assert i in indices


def test_pure_navigation_trajectory_keeps_start_and_goal_only(train_suite):
    # build a goto expert, then condition on a task whose target type never
    # shows up in the trajectory
    scene_id = sorted(
        s for s in train_suite.scenes if s.startswith("livingroom"))[0]
    scene = train_suite.scenes[scene_id]
    task = make_task(f"{scene_id}/goto", "goto", "Person", None, scene_id)
    traj = plan_expert(scene, task, 11)
    seen_types = {
        v.obj_type for obs in traj.observations for v in obs.visible
    }
    absent = next(t for t in ("Microwave", "Fridge", "Knife")
                  if t not in seen_types)
    conditioning = make_task(f"{scene_id}/cond", "answer_where", absent, None,
                             scene_id)
    abstract = abstract_trajectory(traj, conditioning)
    indices = [m.step_index for m in abstract.milestones]
    assert indices[0] == 0
    assert len(indices) == 2
    assert "goal reached" in abstract.milestones[1].description


def test_conditioning_adds_first_sighting_of_new_target(train_suite,
                                                        train_store):
    for traj in train_store.ordered():
        base = abstract_trajectory(traj, traj.task)
        base_indices = [m.step_index for m in base.milestones]
        # find a type visible mid-trajectory and a task targeting it
        for i, obs in enumerate(traj.observations):
            types = {v.obj_type for v in obs.visible}
            pickable = types & {"Cup", "Plate", "Potato", "Apple",
                                "DishSponge", "Knife"}
            if not pickable:
                continue
            new_target = sorted(pickable)[0]
            if new_target == traj.task.target_type:
                continue
            first = next(
                j for j, o in enumerate(traj.observations)
                if any(v.obj_type == new_target for v in o.visible)
            )
            conditioning = make_task(
                f"{traj.task.scene_id}/c", "answer_where", new_target, None,
                traj.task.scene_id,
            )
            other = abstract_trajectory(traj, conditioning)
            other_indices = [m.step_index for m in other.milestones]
            assert set(other_indices) == set(base_indices) | {first}
            return
    raise AssertionError("no trajectory with a mid-route alternative target")


def test_serialization_round_trip(test_store):
    traj = test_store.ordered()[0]
    abstract = abstract_trajectory(traj, traj.task)
    text = canonical_json(abstract_to_json(abstract))
    again = canonical_json(abstract_to_json(abstract_from_json(json.loads(text))))
    assert text == again


def test_raw_abstract_keeps_every_step_until_truncation(test_store):
    traj = max(test_store.ordered(), key=lambda t: t.steps)
    raw = raw_abstract(traj, traj.task, max_steps=64)
    expect = min(traj.steps, 64) + 1
    assert len(raw.milestones) == expect
    assert [m.step_index for m in raw.milestones] == list(range(expect))


def test_abstraction_is_deterministic(test_store):
    traj = test_store.ordered()[0]
    a = abstract_to_json(abstract_trajectory(traj, traj.task))
    b = abstract_to_json(abstract_trajectory(traj, traj.task))
    assert canonical_json(a) == canonical_json(b)
