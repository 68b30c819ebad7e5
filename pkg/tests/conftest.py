"""Shared fixtures: the default pipeline artifacts are expensive enough to
build once per session and reuse across test modules."""

from __future__ import annotations

from collections import deque

import pytest

from trajlab.memory import collect_memory
from trajlab.prefgen import generate_preferences
from trajlab.retriever import TrainConfig, train_retriever
from trajlab.suite import build_suite
from trajlab.world import HEADING_VECTORS

MASTER_SEED = 42


@pytest.fixture(scope="session")
def train_suite():
    return build_suite("train", MASTER_SEED)


@pytest.fixture(scope="session")
def test_suite():
    return build_suite("test", MASTER_SEED)


@pytest.fixture(scope="session")
def train_store(train_suite):
    return collect_memory(train_suite.tasks, train_suite.scenes, "train", MASTER_SEED)


@pytest.fixture(scope="session")
def test_store(test_suite):
    return collect_memory(test_suite.tasks, test_suite.scenes, "test", MASTER_SEED)


@pytest.fixture(scope="session")
def pref_pairs(train_suite, train_store):
    return generate_preferences(train_suite, train_store, 4, 5, MASTER_SEED)


@pytest.fixture(scope="session")
def train_tasks_by_id(train_suite):
    return {t.task_id: t for t in train_suite.tasks}


@pytest.fixture(scope="session")
def trained_model(pref_pairs, train_tasks_by_id):
    model, report = train_retriever(
        pref_pairs, train_tasks_by_id, TrainConfig(seed=MASTER_SEED)
    )
    return model, report


# --------------------------------------------------------------------------
# independent oracles

def bfs_nav_distance(start, goals, passable):
    """Unit-cost BFS over (x, y, heading) states with move/turn edges; the
    planner's optimality oracle."""
    if start in goals:
        return 0
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        (x, y, heading), dist = queue.popleft()
        hx, hy = HEADING_VECTORS[heading]
        succs = [
            (x, y, (heading - 90) % 360),
            (x, y, (heading + 90) % 360),
        ]
        if passable((x + hx, y + hy)):
            succs.append((x + hx, y + hy, heading))
        for nxt in succs:
            if nxt in seen:
                continue
            if nxt in goals:
                return dist + 1
            seen.add(nxt)
            queue.append((nxt, dist + 1))
    return None


def true_passable(env):
    def passable(cell):
        if env._grid_char(cell) == "#":
            return False
        return cell not in env._blocking_cells
    return passable
