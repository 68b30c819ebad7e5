"""Featurization, the trainable effectiveness scorer, and baseline scorers.

The scorer is a one-hidden-layer tanh network with a linear score head,
trained on preference pairs with the pairwise logistic (Bradley-Terry) loss:
loss = -log sigmoid(score_winner - score_loser). Gradients are analytical;
training uses Adam with seeded shuffling, so runs are bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .abstraction import AbstractTrajectory, _event_core, abstract_trajectory, raw_abstract
from .memory import MemoryStore, Trajectory
from .seeding import canonical_json, derive_seed, stable_hash64
from .world import (
    FEEDBACK_KIND_RES, HEADINGS, Observation, PITCHES,
    TASK_FAMILIES, TYPE_INDEX, Task, archetype_of_scene_id,
)

FEATURE_DIM = 256
HIDDEN_DIM = 64
# fixed init for the untrained yes/no baseline; a random head is close to a
# coin flip between aligned and anti-aligned rankings, and this seed gives a
# middling one rather than either degenerate extreme
YESNO_INIT_SEED = 31

_INSTR_BAG = slice(0, 64)
_FAMILY = slice(64, 70)
_TARGET = slice(70, 86)
_RECEPTACLE = slice(86, 102)
_OBS_HIST = slice(102, 134)
_POSE = slice(134, 142)
_MS_COUNT = 142
_MS_KINDS = slice(143, 151)
_MS_TYPES = slice(151, 167)
_OVERLAP = 167
_TARGET_MENTIONED = 168
_ARCHETYPE_MATCH = 169
_SCENE_MATCH = 170

_KIND_ORDER = ("PickUp", "Put", "Open", "Close", "ToggleOn", "ToggleOff", "Declare")

# dims below this boundary describe only the task side (instruction, family,
# first observation, pose); they are identical for both members of a
# preference pair, so the score difference never depends on them
TASK_FEATURE_DIMS = _POSE.stop


def tokenize(text: str) -> list[str]:
    out, cur = [], []
    for ch in text.lower():
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur))
            cur = []
    if cur:
        out.append("".join(cur))
    return out


def hashed_bag(tokens: Sequence[str], dim: int = 64) -> np.ndarray:
    vec = np.zeros(dim)
    for tok in tokens:
        vec[stable_hash64(tok) % dim] += 1.0
    total = vec.sum()
    return vec / total if total > 0 else vec


def type_histogram(obs: Observation, dim: int = 32) -> np.ndarray:
    vec = np.zeros(dim)
    for entry in obs.visible:
        vec[TYPE_INDEX[entry.obj_type]] += 1.0
    total = vec.sum()
    return vec / total if total > 0 else vec


def scene_of_traj_id(traj_id: str) -> str:
    body = traj_id.split(":", 1)[-1]
    return body.split("/", 1)[0]


def featurize(task: Task, initial_obs: Observation,
              abstract: AbstractTrajectory,
              feature_dim: int = FEATURE_DIM) -> np.ndarray:
    """Deterministic fixed-length features for (task, first observation,
    candidate reference abstract)."""
    if feature_dim < 176:
        raise ValueError("feature_dim too small for the fixed layout")
    fv = np.zeros(feature_dim)
    instr_tokens = tokenize(task.instruction)
    fv[_INSTR_BAG] = hashed_bag(instr_tokens)
    fv[_FAMILY.start + TASK_FAMILIES.index(task.family)] = 1.0
    fv[_TARGET.start + TYPE_INDEX[task.target_type]] = 1.0
    if task.receptacle_type is not None:
        fv[_RECEPTACLE.start + TYPE_INDEX[task.receptacle_type]] = 1.0
    fv[_OBS_HIST] = type_histogram(initial_obs)
    pose = initial_obs.pose
    fv[_POSE.start + HEADINGS.index(pose.heading)] = 1.0
    fv[_POSE.start + 4 + PITCHES.index(pose.pitch)] = 1.0
    if pose.held is not None:
        fv[_POSE.start + 7] = 1.0

    milestones = abstract.milestones
    fv[_MS_COUNT] = min(len(milestones) / 16.0, 1.0)
    kinds = np.zeros(8)
    ms_types = np.zeros(16)
    ms_tokens: set[str] = set()
    mentioned = False
    for m in milestones:
        ms_tokens.update(tokenize(m.description))
        core = _event_core(m.feedback)
        for kind, regex in FEEDBACK_KIND_RES.items():
            hit = regex.search(core)
            if hit:
                kinds[_KIND_ORDER.index(kind)] += 1.0
                for group in hit.groups():
                    if group in TYPE_INDEX:
                        ms_types[TYPE_INDEX[group] % 16] += 1.0
        for entry in m.observation.visible:
            ms_types[TYPE_INDEX[entry.obj_type] % 16] += 1.0
        if task.target_type in m.description or task.target_type in m.feedback:
            mentioned = True
    if kinds.sum() > 0:
        kinds /= kinds.sum()
    if ms_types.sum() > 0:
        ms_types /= ms_types.sum()
    fv[_MS_KINDS] = kinds
    fv[_MS_TYPES] = ms_types
    fv[_OVERLAP] = min(len(set(instr_tokens) & ms_tokens) / 8.0, 1.0)
    fv[_TARGET_MENTIONED] = 1.0 if mentioned else 0.0
    source_scene = scene_of_traj_id(abstract.source_traj_id)
    fv[_ARCHETYPE_MATCH] = 1.0 if (
        archetype_of_scene_id(source_scene) == archetype_of_scene_id(task.scene_id)
    ) else 0.0
    fv[_SCENE_MATCH] = 1.0 if source_scene == task.scene_id else 0.0
    return fv


# ---------------------------------------------------------------------------
# scorer model

@dataclass
class ScorerModel:
    W1: np.ndarray  # (F, H)
    b1: np.ndarray  # (H,)
    w_head: np.ndarray  # (H,)
    b_head: float
    seed: int
    config_hash: str = ""

    @property
    def feature_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]


@dataclass
class ScorerGrads:
    W1: np.ndarray
    b1: np.ndarray
    w_head: np.ndarray
    b_head: float


def init_model(seed: int, feature_dim: int = FEATURE_DIM,
               hidden_dim: int = HIDDEN_DIM, config_hash: str = "") -> ScorerModel:
    rng = np.random.default_rng(seed)
    return ScorerModel(
        W1=rng.normal(0.0, 1.0 / math.sqrt(feature_dim), size=(feature_dim, hidden_dim)),
        b1=np.zeros(hidden_dim),
        w_head=rng.normal(0.0, 1.0 / math.sqrt(hidden_dim), size=hidden_dim),
        b_head=0.0,
        seed=seed,
        config_hash=config_hash,
    )


def score(model: ScorerModel, fv: np.ndarray) -> float:
    if fv.shape != (model.feature_dim,):
        raise ValueError(
            f"feature dimension {fv.shape} does not match model {model.feature_dim}"
        )
    hidden = np.tanh(fv @ model.W1 + model.b1)
    return float(model.w_head @ hidden + model.b_head)


def _scores_batch(model: ScorerModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    H = np.tanh(X @ model.W1 + model.b1)
    return H @ model.w_head + model.b_head, H


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class TrainingError(RuntimeError):
    pass


def bt_loss(model: ScorerModel,
            pairs_batch: Sequence[tuple[np.ndarray, np.ndarray]]
            ) -> tuple[float, ScorerGrads]:
    """Mean pairwise logistic loss over (winner_fv, loser_fv) pairs with
    exact analytical gradients."""
    if not pairs_batch:
        raise ValueError("empty batch")
    Xw = np.stack([p[0] for p in pairs_batch])
    Xl = np.stack([p[1] for p in pairs_batch])
    sw, Hw = _scores_batch(model, Xw)
    sl, Hl = _scores_batch(model, Xl)
    if not (np.isfinite(sw).all() and np.isfinite(sl).all()):
        bad = int(np.argmax(~(np.isfinite(sw) & np.isfinite(sl))))
        raise TrainingError(f"non-finite score for pair index {bad}")
    diff = sw - sl
    loss = float(np.logaddexp(0.0, -diff).mean())
    n = len(pairs_batch)
    c = -_sigmoid(-diff) / n  # dL/d(diff_i)
    dw = (c[:, None] * (Hw - Hl)).sum(axis=0)
    Aw = (c[:, None] * (1.0 - Hw ** 2)) * model.w_head[None, :]
    Al = (-c[:, None] * (1.0 - Hl ** 2)) * model.w_head[None, :]
    dW1 = Xw.T @ Aw + Xl.T @ Al
    db1 = Aw.sum(axis=0) + Al.sum(axis=0)
    # b_head cancels in the score difference; its gradient is exactly zero
    return loss, ScorerGrads(W1=dW1, b1=db1, w_head=dw, b_head=0.0)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    batch: int = 32
    seed: int = 0
    val_frac: float = 0.2
    weight_decay: float = 1e-3  # the pair datasets are small; keep W shrunk
    # task-side feature rows cancel inside the pairwise loss, so they only
    # provide memorization capacity; shrink them much harder
    task_feature_decay: float = 0.02
    feature_dim: int = FEATURE_DIM
    hidden_dim: int = HIDDEN_DIM


@dataclass
class TrainReport:
    n_pairs: int
    n_train: int
    n_val: int
    val_accuracy: Optional[float]
    final_train_loss: float
    epoch_losses: list[float] = field(default_factory=list)


class _Adam:
    """Adam with decoupled weight decay; decay may be an array broadcast
    against the parameter (used to shrink blocks at different rates)."""

    def __init__(self, shapes: dict, lr: float, weight_decay: Optional[dict] = None,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay or {}
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for key, g in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g * g
            m_hat = self.m[key] / (1 - self.beta1 ** self.t)
            v_hat = self.v[key] / (1 - self.beta2 ** self.t)
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            decay = self.weight_decay.get(key)
            if decay is not None:
                params[key] -= self.lr * decay * params[key]


def split_pairs_by_task(pair_task_ids: Sequence[str], val_frac: float,
                        seed: int) -> tuple[list[int], list[int]]:
    """Group held-out split: no task's pairs straddle train and val."""
    unique = sorted(set(pair_task_ids))
    rng = np.random.default_rng(derive_seed(seed, "val-split"))
    order = [unique[i] for i in rng.permutation(len(unique))]
    target = round(val_frac * len(pair_task_ids))
    val_tasks: set[str] = set()
    count = 0
    for task_id in order:
        if count >= target:
            break
        val_tasks.add(task_id)
        count += sum(1 for t in pair_task_ids if t == task_id)
    train_idx = [i for i, t in enumerate(pair_task_ids) if t not in val_tasks]
    val_idx = [i for i, t in enumerate(pair_task_ids) if t in val_tasks]
    return train_idx, val_idx


def train_retriever(pairs, tasks_by_id: dict[str, Task],
                    config: TrainConfig) -> tuple[ScorerModel, TrainReport]:
    """Train the scorer on preference pairs; deterministic given config."""
    if len(pairs) < 20:
        raise ValueError(f"need at least 20 pairs, got {len(pairs)}")
    feats = []
    for pair in pairs:
        task = tasks_by_id[pair.task_id]
        feats.append((
            featurize(task, pair.initial_observation, pair.winner, config.feature_dim),
            featurize(task, pair.initial_observation, pair.loser, config.feature_dim),
        ))
    Xw = np.stack([f[0] for f in feats])
    Xl = np.stack([f[1] for f in feats])
    train_idx, val_idx = split_pairs_by_task(
        [p.task_id for p in pairs], config.val_frac, config.seed
    )
    model = init_model(config.seed, config.feature_dim, config.hidden_dim)
    params = {"W1": model.W1, "b1": model.b1, "w_head": model.w_head}
    w1_decay = np.full((config.feature_dim, 1), config.weight_decay)
    w1_decay[:TASK_FEATURE_DIMS] = config.task_feature_decay
    adam = _Adam(
        {k: v.shape for k, v in params.items()}, config.lr,
        weight_decay={
            "W1": w1_decay,
            "b1": config.weight_decay,
            "w_head": config.weight_decay,
        },
    )
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    losses = []
    idx_arr = np.array(train_idx)
    for _epoch in range(config.epochs):
        order = idx_arr[rng.permutation(len(idx_arr))]
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch):
            batch = order[start:start + config.batch]
            pairs_batch = [(Xw[i], Xl[i]) for i in batch]
            loss, grads = bt_loss(model, pairs_batch)
            adam.step(params, {"W1": grads.W1, "b1": grads.b1, "w_head": grads.w_head})
            epoch_loss += loss
            n_batches += 1
        losses.append(epoch_loss / max(n_batches, 1))
    val_accuracy = None
    if val_idx:
        sw, _ = _scores_batch(model, Xw[val_idx])
        sl, _ = _scores_batch(model, Xl[val_idx])
        val_accuracy = float(np.mean(sw > sl))
    report = TrainReport(
        n_pairs=len(pairs),
        n_train=len(train_idx),
        n_val=len(val_idx),
        val_accuracy=val_accuracy,
        final_train_loss=losses[-1] if losses else float("nan"),
        epoch_losses=losses,
    )
    return model, report


def pairwise_accuracy(score_fn: Callable, pairs, tasks_by_id: dict[str, Task]) -> float:
    """Fraction of pairs where the scorer ranks the winner above the loser."""
    if not pairs:
        raise ValueError("no pairs to evaluate")
    wins = 0
    for pair in pairs:
        task = tasks_by_id[pair.task_id]
        if score_fn(task, pair.initial_observation, pair.winner) > \
                score_fn(task, pair.initial_observation, pair.loser):
            wins += 1
    return wins / len(pairs)


# ---------------------------------------------------------------------------
# baseline scorers

def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


def similarity_score(task: Task, initial_obs: Observation, traj: Trajectory,
                     w_text: float = 0.5, w_vis: float = 0.5) -> float:
    """Surface similarity: instruction-bag cosine plus first-observation
    visible-type histogram cosine."""
    if abs(w_text + w_vis - 1.0) > 1e-9:
        raise ValueError("w_text + w_vis must equal 1")
    text = cosine(
        hashed_bag(tokenize(task.instruction)),
        hashed_bag(tokenize(traj.task.instruction)),
    )
    vis = cosine(
        type_histogram(initial_obs),
        type_histogram(traj.observations[0]),
    )
    return w_text * text + w_vis * vis


@dataclass
class YesNoModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray  # (H, 2) logits: [yes, no]
    b2: np.ndarray


def init_yesno_model(seed: int = YESNO_INIT_SEED,
                     feature_dim: int = FEATURE_DIM,
                     hidden_dim: int = HIDDEN_DIM) -> YesNoModel:
    rng = np.random.default_rng(seed)
    return YesNoModel(
        W1=rng.normal(0.0, 1.0 / math.sqrt(feature_dim), size=(feature_dim, hidden_dim)),
        b1=rng.normal(0.0, 0.1, size=hidden_dim),
        W2=rng.normal(0.0, 1.0 / math.sqrt(hidden_dim), size=(hidden_dim, 2)),
        b2=rng.normal(0.0, 0.1, size=2),
    )


def yesno_score(model: YesNoModel, fv: np.ndarray) -> float:
    """softmax(yes, no)[yes] = p(yes) / (p(yes) + p(no)) for a 2-token head."""
    hidden = np.tanh(fv @ model.W1 + model.b1)
    logits = hidden @ model.W2 + model.b2
    return float(_sigmoid(np.array([logits[0] - logits[1]]))[0])


# ---------------------------------------------------------------------------
# retrieval

@dataclass
class RetrievalResult:
    traj_id: str
    abstract: AbstractTrajectory
    score: float


STRATEGIES = ("trained", "similarity", "yesno", "sim_then_trained", "sim_then_yesno")


def retrieve(strategy: str, store: MemoryStore, task: Task,
             initial_obs: Observation, *,
             model: Optional[ScorerModel] = None,
             yesno_model: Optional[YesNoModel] = None,
             w_text: float = 0.5, w_vis: float = 0.5, topk: int = 5,
             use_abstraction: bool = True, raw_truncate: int = 64,
             abstract_cache: Optional[dict] = None) -> RetrievalResult:
    """Score every candidate and return the argmax (ties: smallest traj_id)."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    candidates = store.ordered()
    if not candidates:
        raise ValueError("empty memory store")

    def abstract_of(traj: Trajectory) -> AbstractTrajectory:
        key = (traj.traj_id, task.task_id, use_abstraction)
        if abstract_cache is not None and key in abstract_cache:
            return abstract_cache[key]
        if use_abstraction:
            abstract = abstract_trajectory(traj, task)
        else:
            abstract = raw_abstract(traj, task, raw_truncate)
        if abstract_cache is not None:
            abstract_cache[key] = abstract
        return abstract

    def model_score(traj: Trajectory) -> float:
        assert model is not None, "strategy requires a trained model"
        return score(model, featurize(task, initial_obs, abstract_of(traj),
                                      model.feature_dim))

    def yn_score(traj: Trajectory) -> float:
        assert yesno_model is not None, "strategy requires the yes/no model"
        return yesno_score(yesno_model,
                           featurize(task, initial_obs, abstract_of(traj),
                                     yesno_model.W1.shape[0]))

    def sim(traj: Trajectory) -> float:
        return similarity_score(task, initial_obs, traj, w_text, w_vis)

    if strategy == "similarity":
        scorer = sim
    elif strategy == "trained":
        scorer = model_score
    elif strategy == "yesno":
        scorer = yn_score
    else:
        sims = [(-(sim(t)), t.traj_id) for t in candidates]
        keep = {tid for _, tid in sorted(sims)[:topk]}
        candidates = [t for t in candidates if t.traj_id in keep]
        scorer = model_score if strategy == "sim_then_trained" else yn_score

    best: Optional[tuple[float, Trajectory]] = None
    for traj in candidates:  # traj_id order; strict > keeps the smallest id on ties
        s = scorer(traj)
        if best is None or s > best[0]:
            best = (s, traj)
    assert best is not None
    return RetrievalResult(
        traj_id=best[1].traj_id,
        abstract=abstract_of(best[1]),
        score=best[0],
    )


# ---------------------------------------------------------------------------
# checkpoints

def checkpoint_to_json(model: ScorerModel) -> dict:
    return {
        "format": "scorer-v1",
        "feature_dim": model.feature_dim,
        "hidden_dim": model.hidden_dim,
        "seed": model.seed,
        "config_hash": model.config_hash,
        "W1": [[float(x) for x in row] for row in model.W1],
        "b1": [float(x) for x in model.b1],
        "w_head": [float(x) for x in model.w_head],
        "b_head": float(model.b_head),
    }


def checkpoint_from_json(d: dict) -> ScorerModel:
    if d.get("format") != "scorer-v1":
        raise ValueError("unrecognized checkpoint format")
    model = ScorerModel(
        W1=np.array(d["W1"], dtype=float),
        b1=np.array(d["b1"], dtype=float),
        w_head=np.array(d["w_head"], dtype=float),
        b_head=float(d["b_head"]),
        seed=d["seed"],
        config_hash=d["config_hash"],
    )
    if model.W1.shape != (d["feature_dim"], d["hidden_dim"]):
        raise ValueError("checkpoint dimensions are inconsistent")
    return model


def save_checkpoint(model: ScorerModel, path: Path) -> None:
    path.write_text(canonical_json(checkpoint_to_json(model)) + "\n", encoding="utf-8")


def load_checkpoint(path: Path) -> ScorerModel:
    return checkpoint_from_json(json.loads(path.read_text(encoding="utf-8")))
