"""Agent tests: hints, reflection, the priority policy, episode contracts."""

from trajlab.abstraction import abstract_trajectory, raw_abstract
from trajlab.agent import (
    AgentController, Waypoint, execute_episode, extract_hints, self_reflection,
)
from trajlab.planner import plan_expert
from trajlab.seeding import derive_seed
from trajlab.world import Action, Environment, check_goal


def own_abstract(suite, task, seed=0):
    expert = plan_expert(suite.scene_of(task), task, derive_seed("own", seed, task.task_id))
    return abstract_trajectory(expert, task)


# -- hints -------------------------------------------------------------------

def test_pickup_milestone_pose_becomes_a_waypoint(test_suite, test_store):
    traj = next(t for t in test_store.ordered()
                if t.task.family == "pick_and_place")
    abstract = abstract_trajectory(traj, traj.task)
    hints = extract_hints(abstract)
    pick_index = next(
        i + 1 for i, a in enumerate(traj.actions) if a.kind == "PickUp")
    pose = traj.observations[pick_index].pose
    assert Waypoint(pose.cell, pose.pitch, pose.heading) in hints.waypoints
    assert "PickUp" in hints.interaction_plan
    assert traj.task.target_type in hints.object_types


def test_interaction_free_abstract_yields_start_and_goal_waypoints(train_suite):
    scene_id = sorted(
        s for s in train_suite.scenes if s.startswith("livingroom"))[0]
    from trajlab.world import make_task
    task = make_task(f"{scene_id}/g", "goto", "Person", None, scene_id)
    traj = plan_expert(train_suite.scenes[scene_id], task, 4)
    seen_types = {v.obj_type for o in traj.observations for v in o.visible}
    absent = next(t for t in ("Microwave", "Fridge", "Knife")
                  if t not in seen_types)
    conditioning = make_task(f"{scene_id}/c", "answer_where", absent, None,
                             scene_id)
    hints = extract_hints(abstract_trajectory(traj, conditioning))
    assert len(hints.waypoints) == 2
    assert hints.interaction_plan == []
    assert hints.open_waypoints == []


def test_raw_reference_makes_every_pose_a_waypoint(test_store):
    traj = next(t for t in test_store.ordered() if t.steps >= 10)
    raw = raw_abstract(traj, traj.task, max_steps=64)
    hints = extract_hints(raw)
    poses = []
    for obs in traj.observations[:traj.steps + 1]:
        wp = Waypoint(obs.pose.cell, obs.pose.pitch, obs.pose.heading)
        if not poses or poses[-1] != wp:
            poses.append(wp)
    assert hints.waypoints == poses


def test_extract_hints_without_reference_is_empty():
    hints = extract_hints(None)
    assert hints.waypoints == [] and hints.object_types == []


# -- self reflection -----------------------------------------------------------

def test_reflection_ignores_successful_feedback(test_suite):
    task = test_suite.tasks[0]
    env = Environment(test_suite.scene_of(task))
    obs = env.reset(task, episode_seed=0)
    assert self_reflection(Action("TurnLeft"), obs, "OK. You see: nothing.") is None


def test_reflection_notes_and_blacklist_suppress_repeats(test_suite):
    # drive a real episode; at every failure, the failed action must be
    # blacklisted and never re-emitted from the same pose
    task = next(t for t in sorted(test_suite.tasks, key=lambda t: t.task_id)
                if "2room" in t.scene_id)
    scene = test_suite.scene_of(task)
    cross_task = next(t for t in test_suite.tasks if t.scene_id != task.scene_id)
    reference = own_abstract(test_suite, cross_task)
    env = Environment(scene)
    obs = env.reset(task, episode_seed=3)
    controller = AgentController(scene, task, reference)
    controller.begin_subtask(0)
    failures = 0
    for _ in range(120):
        action = controller.next_action(obs)
        if action.kind == "Stop":
            break
        pose_before = obs.pose
        obs = env.step(action)
        if obs.feedback.startswith("Failed:"):
            failures += 1
            nxt = controller.next_action(obs)
            assert (obs.pose, nxt) != (pose_before, action)
            obs = env.step(nxt)
    assert controller.belief.reflection_notes or failures == 0
    for note in controller.belief.reflection_notes:
        assert note.reason


def test_two_consecutive_failures_force_a_replan(test_suite):
    task = test_suite.tasks[0]
    scene = test_suite.scene_of(task)
    env = Environment(scene)
    obs = env.reset(task, episode_seed=0)
    controller = AgentController(scene, task, None)
    controller.begin_subtask(0)
    controller.next_action(obs)
    plan_id = controller.plan_id
    failed = Action("Open", 999)
    fb = "Failed: no such object. You see: nothing."
    from trajlab.world import Observation
    fake = Observation((), obs.pose, fb)
    controller._prev = (obs, failed)
    controller._ingest(fake)
    controller._prev = (fake, failed)
    controller._ingest(fake)
    assert controller.plan_id > plan_id
    assert len(controller.belief.reflection_notes) == 2


# -- policy priorities -----------------------------------------------------------

def test_visible_target_in_range_is_picked_up(test_suite, test_store):
    # replay an expert trajectory until just before its PickUp; the policy
    # must choose the same interaction (priority 1)
    traj = next(t for t in test_store.ordered()
                if t.task.family == "pick_and_place")
    task = traj.task
    scene = test_suite.scene_of(task)
    pick_at = next(i for i, a in enumerate(traj.actions) if a.kind == "PickUp")
    env = Environment(scene)
    obs = env.reset(task, pose=traj.observations[0].pose)
    controller = AgentController(scene, task, abstract_trajectory(traj, task))
    controller.begin_subtask(0)
    for action in traj.actions[:pick_at]:
        controller.next_action(obs)  # keep belief in sync while we override
        obs = env.step(action)
    chosen = controller.next_action(obs)
    assert chosen == traj.actions[pick_at]


def test_monotone_coverage_knowledge(test_suite):
    task = test_suite.tasks[0]
    scene = test_suite.scene_of(task)
    env = Environment(scene)
    obs = env.reset(task, episode_seed=1)
    controller = AgentController(scene, task, None)
    controller.begin_subtask(0)
    known = set()
    for _ in range(80):
        action = controller.next_action(obs)
        if action.kind == "Stop":
            break
        assert known <= controller.belief.known_free
        known = set(controller.belief.known_free)
        obs = env.step(action)


def test_policy_never_emits_blacklisted_action(test_suite):
    for task in sorted(test_suite.tasks, key=lambda t: t.task_id)[:6]:
        scene = test_suite.scene_of(task)
        cross = next(t for t in test_suite.tasks if t.scene_id != task.scene_id)
        reference = own_abstract(test_suite, cross)
        env = Environment(scene)
        obs = env.reset(task, episode_seed=9)
        controller = AgentController(scene, task, reference)
        for si in range(len(task.subtasks)):
            controller.begin_subtask(si)
            for _ in range(50):
                action = controller.next_action(obs)
                from trajlab.agent import _blacklist_key
                assert _blacklist_key(obs.pose, action) not in controller.blacklist
                if action.kind == "Stop":
                    break
                obs = env.step(action)
                if check_goal(env, task.subtasks[si].goal):
                    break


# -- episodes ---------------------------------------------------------------------

def test_execute_episode_deterministic(test_suite):
    task = test_suite.tasks[3]
    scene = test_suite.scene_of(task)
    reference = own_abstract(test_suite, task)
    a = execute_episode(scene, task, reference, 123)
    b = execute_episode(scene, task, reference, 123)
    assert a.success == b.success and a.steps == b.steps
    assert a.subtask_steps == b.subtask_steps
    assert [x.kind for x in a.trajectory.actions] == \
           [x.kind for x in b.trajectory.actions]


def test_self_reference_success_rate(test_suite):
    tasks = sorted(test_suite.tasks, key=lambda t: t.task_id)[::6][:4]
    for task in tasks:
        scene = test_suite.scene_of(task)
        reference = own_abstract(test_suite, task)
        wins = sum(
            execute_episode(scene, task, reference,
                            derive_seed("selfref", task.task_id, s)).success
            for s in range(20)
        )
        assert wins >= 18, f"{task.task_id}: {wins}/20"


def test_guided_episodes_finish_near_expert_length(test_suite):
    # matching references should keep the agent within a modest overhead of
    # the expert on single-room tasks
    tasks = [t for t in sorted(test_suite.tasks, key=lambda t: t.task_id)
             if "1room" in t.scene_id][:4]
    deltas = []
    for task in tasks:
        scene = test_suite.scene_of(task)
        expert = plan_expert(scene, task, derive_seed("own", 0, task.task_id))
        reference = abstract_trajectory(expert, task)
        result = execute_episode(scene, task, reference,
                                 derive_seed("own", 0, task.task_id))
        assert result.success
        deltas.append(result.steps - expert.steps)
    assert sum(deltas) / len(deltas) <= 10


def test_no_reference_weaker_than_matching_on_two_room_search(test_suite):
    task = next(t for t in sorted(test_suite.tasks, key=lambda t: t.task_id)
                if t.family == "answer_where" and "2room" in t.scene_id)
    scene = test_suite.scene_of(task)
    reference = own_abstract(test_suite, task)
    ref_wins = none_wins = 0
    for s in range(20):
        seed = derive_seed("paired", task.task_id, s)
        ref_wins += execute_episode(scene, task, reference, seed).success
        none_wins += execute_episode(scene, task, None, seed).success
    assert none_wins <= ref_wins


def test_cross_scene_hints_hurt_on_two_room_tasks(test_suite):
    task = next(t for t in sorted(test_suite.tasks, key=lambda t: t.task_id)
                if "2room" in t.scene_id and t.family == "pick_and_place")
    scene = test_suite.scene_of(task)
    matching = own_abstract(test_suite, task)
    cross_task = next(
        t for t in test_suite.tasks
        if t.scene_id != task.scene_id and "2room" in t.scene_id)
    crossing = own_abstract(test_suite, cross_task)
    match_wins = cross_wins = 0
    for s in range(20):
        seed = derive_seed("cross", task.task_id, s)
        match_wins += execute_episode(scene, task, matching, seed).success
        cross_wins += execute_episode(scene, task, crossing, seed).success
    assert cross_wins < match_wins


def test_failed_episode_charges_the_full_horizon(test_suite):
    task = next(t for t in sorted(test_suite.tasks, key=lambda t: t.task_id)
                if len(t.subtasks) >= 2 and "2room" in t.scene_id)
    scene = test_suite.scene_of(task)
    cross_task = next(t for t in test_suite.tasks if t.scene_id != task.scene_id)
    for s in range(12):
        result = execute_episode(
            scene, task, own_abstract(test_suite, cross_task),
            derive_seed("budget", task.task_id, s))
        if not result.success:
            assert result.steps == task.total_horizon
            for ok, used in zip(result.subtask_successes, result.subtask_steps):
                if not ok:
                    assert used == task.horizon_per_subtask
            return
    raise AssertionError("expected at least one failure with a cross reference")
