"""Preference generation tests: sampling, measurement, pair construction."""

import pytest

import trajlab.prefgen as prefgen
from trajlab.abstraction import abstract_trajectory
from trajlab.prefgen import (
    generate_preferences, make_pairs, measure_effectiveness, pair_from_json,
    pair_to_json, pairs_from_jsonl, pairs_to_jsonl, sample_candidates,
)
from trajlab.seeding import canonical_json, derive_seed


def test_sample_has_k_distinct_ids(train_store, train_suite):
    task = train_suite.tasks[0]
    sample = sample_candidates(train_store, task, 4, 42)
    ids = [t.traj_id for t in sample]
    assert len(ids) == 4 and len(set(ids)) == 4


def test_sample_is_seed_deterministic(train_store, train_suite):
    task = train_suite.tasks[5]
    a = [t.traj_id for t in sample_candidates(train_store, task, 4, 7)]
    b = [t.traj_id for t in sample_candidates(train_store, task, 4, 7)]
    assert a == b


def test_own_scene_expert_always_in_sample(train_store, train_suite):
    for task in train_suite.tasks:
        sample = {t.traj_id for t in sample_candidates(train_store, task, 4, 13)}
        own = f"traj:{task.task_id}"
        if own in train_store.trajectories:
            assert own in sample
        else:
            same_scene = {
                t for t in train_store.trajectories
                if train_store.trajectories[t].task.scene_id == task.scene_id
            }
            if same_scene:
                assert sample & same_scene


def test_uniform_mode_keeps_the_contract(train_store, train_suite):
    task = train_suite.tasks[2]
    sample = sample_candidates(train_store, task, 4, 3, stratified=False)
    ids = [t.traj_id for t in sample]
    assert len(set(ids)) == 4
    own = f"traj:{task.task_id}"
    if own in train_store.trajectories:
        assert own in ids


def test_oversized_k_rejected(train_store, train_suite):
    with pytest.raises(ValueError):
        sample_candidates(train_store, train_suite.tasks[0], 999, 0)


def test_measured_success_rate_arithmetic(monkeypatch, train_suite, train_store):
    task = train_suite.tasks[0]
    scene = train_suite.scene_of(task)
    candidates = sample_candidates(train_store, task, 2, 0)
    monkeypatch.setattr(
        prefgen, "_run_episodes",
        lambda calls, jobs: [True, True, True, True, False] + [False] * 5,
    )
    scored = measure_effectiveness(task, scene, candidates, 5, 0)
    assert scored[0][1] == 0.8
    assert scored[1][1] == 0.0


def test_measurement_uses_stateless_per_trial_seeds(train_suite, train_store):
    task = train_suite.tasks[1]
    scene = train_suite.scene_of(task)
    candidates = sample_candidates(train_store, task, 2, 0)
    a = measure_effectiveness(task, scene, candidates, 3, 5)
    b = measure_effectiveness(task, scene, candidates, 3, 5)
    assert a == b


def make_scored(train_suite, train_store, srs):
    task = train_suite.tasks[0]
    trajs = sample_candidates(train_store, task, len(srs), 0)
    return task, [
        (abstract_trajectory(t, task), sr) for t, sr in zip(trajs, srs)
    ]


def test_all_distinct_rates_give_k_choose_2_pairs(train_suite, train_store):
    task, scored = make_scored(train_suite, train_store, [1.0, 0.8, 0.4, 0.2])
    obs = prefgen.canonical_initial_observation(
        train_suite.scene_of(task), task, 0)
    pairs = make_pairs(task, obs, scored, 5)
    assert len(pairs) == 6
    for p in pairs:
        assert p.winner_sr > p.loser_sr


def test_single_candidate_gives_no_pairs(train_suite, train_store):
    task, scored = make_scored(train_suite, train_store, [0.8])
    obs = prefgen.canonical_initial_observation(
        train_suite.scene_of(task), task, 0)
    assert make_pairs(task, obs, scored, 5) == []


def test_equal_rates_are_dropped(train_suite, train_store):
    task, scored = make_scored(train_suite, train_store, [0.8, 0.8, 0.2])
    obs = prefgen.canonical_initial_observation(
        train_suite.scene_of(task), task, 0)
    pairs = make_pairs(task, obs, scored, 5)
    assert len(pairs) == 2
    assert all(p.winner_sr == 0.8 and p.loser_sr == 0.2 for p in pairs)


def test_dataset_regeneration_is_byte_identical(train_suite, train_store,
                                                pref_pairs):
    again = generate_preferences(train_suite, train_store, 4, 5, 42)
    assert pairs_to_jsonl(again) == pairs_to_jsonl(pref_pairs)


def test_pair_count_bounded_by_k_choose_2(pref_pairs, train_suite):
    per_task = {}
    for p in pref_pairs:
        per_task[p.task_id] = per_task.get(p.task_id, 0) + 1
    assert all(n <= 6 for n in per_task.values())
    assert len(pref_pairs) <= 6 * len(train_suite.tasks)


def test_pairs_jsonl_round_trip(pref_pairs):
    text = pairs_to_jsonl(pref_pairs)
    assert pairs_to_jsonl(pairs_from_jsonl(text)) == text


def test_own_reference_beats_cross_reference_on_most_tasks(train_suite,
                                                           train_store):
    tasks = sorted(train_suite.tasks, key=lambda t: t.task_id)[::4][:10]
    better = 0
    for task in tasks:
        scene = train_suite.scene_of(task)
        own_id = f"traj:{task.task_id}"
        own = train_store.trajectories.get(own_id)
        if own is None:
            own = next(
                t for t in train_store.ordered()
                if t.task.scene_id == task.scene_id
            )
        cross = next(
            t for t in train_store.ordered()
            if t.task.scene_id != task.scene_id
        )
        scored = measure_effectiveness(
            task, scene, [own, cross], 5, derive_seed("ord", task.task_id))
        better += scored[0][1] >= scored[1][1]
    assert better >= 7


def test_pair_records_validate_strict_order(pref_pairs):
    for p in pref_pairs:
        p.validate()
        assert p.trials == 5
        json_copy = pair_from_json(pair_to_json(p))
        assert canonical_json(pair_to_json(json_copy)) == \
               canonical_json(pair_to_json(p))
