"""trajlab: a household gridworld lab for effectiveness-learned trajectory
retrieval.

Pipeline: generate scenes and tasks, collect expert trajectories into split
memories, measure how much each candidate reference trajectory helps a frozen
agent, turn those measurements into preference pairs, train a pairwise
scorer, and show it retrieves better references than surface similarity.
"""

__version__ = "0.1.0"

from .world import (  # noqa: F401
    Action, AgentPose, Environment, GoalPredicate, Observation, Scene,
    SubTask, Task, check_goal, generate_scene, make_task,
)
from .planner import PlanFailure, plan_expert  # noqa: F401
from .memory import MemoryStore, Trajectory, collect_memory, filter_redundant  # noqa: F401
from .abstraction import AbstractTrajectory, Milestone, abstract_trajectory  # noqa: F401
from .agent import (  # noqa: F401
    AgentBelief, EpisodeResult, ReferenceHints, execute_episode, extract_hints,
    self_reflection,
)
from .prefgen import PreferencePair, make_pairs, measure_effectiveness, sample_candidates  # noqa: F401
from .retriever import (  # noqa: F401
    ScorerModel, TrainConfig, bt_loss, featurize, retrieve, score,
    similarity_score, train_retriever, yesno_score,
)
from .harness import EvalReport, correlation_study, evaluate  # noqa: F401
from .suite import Suite, build_suite  # noqa: F401
