"""Desk-scale GRPO on synthetic question populations.

Each synthetic task has its own softmax policy over a small action set. A
``bandit`` task offers ``attempt`` (right with probability ``p_correct``) or
``abstain``; an ``mcq`` task offers letters A-D plus ``abstain`` with one
designated right letter. Rewards follow the ternary scheme: +1 right, -1
wrong, ``r_abs`` for abstaining.

Training repeats, for every task: sample a group, normalize rewards within the
group, take a policy-gradient step on the logits. The public per-task
functions (:func:`sample_group`, :func:`group_advantages`,
:func:`policy_update`) and the batched loop in :func:`run_training` share the
same array kernels.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .dataxform import SftRecord, SftTarget, sample_abstain_ids

ABSTAIN = "abstain"
ATTEMPT = "attempt"
MCQ_LETTERS = ("A", "B", "C", "D")
R_RIGHT = 1.0
R_WRONG = -1.0


class SimMode(str, enum.Enum):
    BANDIT = "bandit"
    MCQ = "mcq"


class OracleAction(str, enum.Enum):
    ATTEMPT = "attempt"
    ABSTAIN = "abstain"
    INDIFFERENT = "indifferent"


@dataclass(frozen=True)
class SyntheticTask:
    id: str
    p_correct: float = 0.5
    mode: SimMode = SimMode.BANDIT
    correct_letter: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.p_correct <= 1.0:
            raise ValueError(f"task {self.id!r}: p_correct must be in [0, 1]")
        if self.mode is SimMode.MCQ and self.correct_letter not in MCQ_LETTERS:
            raise ValueError(f"task {self.id!r}: mcq task needs correct_letter in A-D")

    @property
    def actions(self) -> tuple[str, ...]:
        if self.mode is SimMode.BANDIT:
            return (ATTEMPT, ABSTAIN)
        return MCQ_LETTERS + (ABSTAIN,)

    def action_index(self, action: str) -> int:
        return self.actions.index(action)

    @property
    def answer_index(self) -> int:
        """Index of the action an "answer key" SFT label points at."""
        if self.mode is SimMode.BANDIT:
            return 0
        return MCQ_LETTERS.index(self.correct_letter)

    def to_dict(self) -> dict:
        d = {"id": self.id, "p_correct": self.p_correct, "mode": self.mode.value}
        if self.correct_letter is not None:
            d["correct_letter"] = self.correct_letter
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticTask":
        return cls(
            id=str(data["id"]),
            p_correct=float(data.get("p_correct", 0.5)),
            mode=SimMode(data.get("mode", "bandit")),
            correct_letter=data.get("correct_letter"),
        )


@dataclass
class PolicyState:
    logits: dict[str, np.ndarray]
    rng_seed: int = 0

    def probs(self, task_id: str) -> np.ndarray:
        return _softmax(self.logits[task_id][None, :])[0]

    def abstain_prob(self, task_id: str) -> float:
        return float(self.probs(task_id)[-1])

    def copy(self) -> "PolicyState":
        return PolicyState({k: v.copy() for k, v in self.logits.items()}, self.rng_seed)


@dataclass(frozen=True)
class SimConfig:
    group_size: int = 8
    learning_rate: float = 0.1
    steps: int = 500
    r_abs: float = 0.0
    epsilon_std: float = 1e-8
    kl_beta: float = 0.0
    sft_steps: int = 0
    sft_ratio: float = 0.3
    seed: int = 0
    init_abstain_prob: float = 0.3
    eval_rollouts: int = 1000
    exact_eval: bool = False

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.steps < 0 or self.sft_steps < 0:
            raise ValueError("steps and sft_steps must be >= 0")
        if self.epsilon_std <= 0:
            raise ValueError("epsilon_std must be > 0")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        if not 0.0 <= self.sft_ratio <= 1.0:
            raise ValueError("sft_ratio must be in [0, 1]")
        if not 0.0 < self.init_abstain_prob < 1.0:
            raise ValueError("init_abstain_prob must be in (0, 1)")
        if not math.isfinite(self.r_abs):
            raise ValueError("r_abs must be finite")


@dataclass
class TrainingResult:
    # (correct %, incorrect %, idk %)
    final_fractions: tuple[float, float, float]
    per_step_log: list[tuple[int, float, float]] = field(repr=False)
    final_policy: PolicyState = field(repr=False)
    mean_reward: float = 0.0

    @property
    def correct_pct(self) -> float:
        return self.final_fractions[0]

    @property
    def incorrect_pct(self) -> float:
        return self.final_fractions[1]

    @property
    def idk_pct(self) -> float:
        return self.final_fractions[2]


# --- array kernels -------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _sample_actions(probs: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """(tasks, K) probabilities -> (tasks, n) action indices."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random((probs.shape[0], n))
    idx = (u[:, :, None] >= cdf[:, None, :-1]).sum(axis=-1)
    return idx


def _rewards(actions, p_correct, answer_idx, bandit, r_abs, rng) -> np.ndarray:
    k_abstain = 1 if bandit else len(MCQ_LETTERS)
    abstained = actions == k_abstain
    if bandit:
        right = rng.random(actions.shape) < p_correct[:, None]
    else:
        right = actions == answer_idx[:, None]
    return np.where(abstained, r_abs, np.where(right, R_RIGHT, R_WRONG))


def _advantages(rewards: np.ndarray, epsilon_std: float) -> np.ndarray:
    mean = rewards.mean(axis=-1, keepdims=True)
    std = rewards.std(axis=-1, keepdims=True)
    return (rewards - mean) / (std + epsilon_std)


def _pg_direction(logits, actions, advantages, kl_beta=0.0, ref_logits=None) -> np.ndarray:
    """Ascent direction: mean_i a_i (onehot_i - pi) - kl_beta (pi - pi_ref)."""
    pi = _softmax(logits)
    onehot = np.zeros(actions.shape + (logits.shape[-1],))
    np.put_along_axis(onehot, actions[..., None], 1.0, axis=-1)
    grad = (advantages[..., None] * (onehot - pi[:, None, :])).mean(axis=1)
    if kl_beta > 0:
        grad -= kl_beta * (pi - _softmax(ref_logits))
    return grad


def surrogate_objective(logits, actions, advantages, kl_beta=0.0, ref_logits=None) -> float:
    """Per-row objective whose gradient :func:`policy_update` follows.

    ``mean_i a_i log pi(a_i) - kl_beta * KL(pi_ref || pi)``, summed over rows.
    """
    logits = np.atleast_2d(logits)
    logp = logits - logits.max(-1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(-1, keepdims=True))
    chosen = np.take_along_axis(logp, np.atleast_2d(actions), axis=-1)
    value = float((np.atleast_2d(advantages) * chosen).mean(axis=1).sum())
    if kl_beta > 0:
        ref = np.atleast_2d(ref_logits)
        ref_logp = ref - ref.max(-1, keepdims=True)
        ref_logp = ref_logp - np.log(np.exp(ref_logp).sum(-1, keepdims=True))
        value -= kl_beta * float((np.exp(ref_logp) * (ref_logp - logp)).sum())
    return value


# --- public per-task operations -------------------------------------------


def initial_policy(tasks: Sequence[SyntheticTask], abstain_prob: float, seed: int = 0) -> PolicyState:
    """Abstain gets ``abstain_prob``; the rest is spread evenly over answers."""
    if not 0.0 < abstain_prob < 1.0:
        raise ValueError("abstain_prob must be in (0, 1)")
    logits = {}
    for task in tasks:
        k = len(task.actions)
        vec = np.zeros(k)
        vec[-1] = math.log(abstain_prob * (k - 1) / (1.0 - abstain_prob))
        logits[task.id] = vec
    return PolicyState(logits, seed)


def sample_group(
    policy: PolicyState, task: SyntheticTask, config: SimConfig, rng: np.random.Generator
) -> list[tuple[str, float]]:
    probs = policy.probs(task.id)[None, :]
    actions = _sample_actions(probs, config.group_size, rng)
    rewards = _rewards(
        actions,
        np.array([task.p_correct]),
        np.array([task.answer_index]),
        task.mode is SimMode.BANDIT,
        config.r_abs,
        rng,
    )
    names = task.actions
    return [(names[a], float(r)) for a, r in zip(actions[0], rewards[0])]


def group_advantages(rewards: Sequence[float], epsilon_std: float = 1e-8) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size < 2:
        raise ValueError("group needs at least 2 rewards")
    return _advantages(rewards[None, :], epsilon_std)[0]


def policy_update(
    policy: PolicyState,
    task: SyntheticTask,
    samples: Sequence[tuple[str, float]],
    config: SimConfig,
    reference: PolicyState | None = None,
) -> PolicyState:
    """One gradient step on ``task``'s logits from ``(action, advantage)`` pairs."""
    if config.kl_beta > 0 and reference is None:
        raise ValueError("kl_beta > 0 requires a reference policy")
    logits = policy.logits[task.id][None, :]
    actions = np.array([[task.action_index(a) for a, _ in samples]])
    advs = np.array([[adv for _, adv in samples]], dtype=float)
    ref = reference.logits[task.id][None, :] if reference is not None else None
    step = config.learning_rate * _pg_direction(logits, actions, advs, config.kl_beta, ref)
    new = policy.copy()
    new.logits[task.id] = logits[0] + step[0]
    return new


def _label_index(task: SyntheticTask, label: SftRecord) -> int:
    if label.target is SftTarget.ABSTAIN:
        return len(task.actions) - 1
    return task.answer_index


def sft_pretrain(
    policy: PolicyState,
    tasks: Sequence[SyntheticTask],
    labels: Iterable[SftRecord],
    sft_steps: int,
    learning_rate: float,
) -> PolicyState:
    """Gradient ascent on the log-probability of each task's labeled action(s).

    Every task's logits are independent, so each task follows the gradient of
    its own mean label log-likelihood.
    """
    by_id = {t.id: t for t in tasks}
    targets: dict[str, list[int]] = {}
    for label in labels:
        task = by_id.get(label.question_id)
        if task is None:
            raise KeyError(f"SFT label for unknown task {label.question_id!r}")
        targets.setdefault(task.id, []).append(_label_index(task, label))

    new = policy.copy()
    for tid, idx in targets.items():
        k = len(by_id[tid].actions)
        target = np.bincount(idx, minlength=k) / len(idx)
        logits = new.logits[tid]
        for _ in range(sft_steps):
            logits = logits + learning_rate * (target - _softmax(logits[None, :])[0])
        new.logits[tid] = logits
    return new


def sft_labels_for_tasks(tasks: Sequence[SyntheticTask], ratio: float, seed: int) -> list[SftRecord]:
    """Random-abstention labels for a synthetic population (exact count)."""
    chosen = sample_abstain_ids([t.id for t in tasks], ratio, seed)
    return [
        SftRecord(t.id, SftTarget.ABSTAIN if t.id in chosen else SftTarget.ANSWER_KEY,
                  ABSTAIN if t.id in chosen else t.actions[t.answer_index])
        for t in tasks
    ]


def optimal_action_oracle(p_correct: float, r_abs: float) -> OracleAction:
    """Best action under expected reward: attempting is worth ``2p - 1``."""
    if not 0.0 <= p_correct <= 1.0:
        raise ValueError("p_correct must be in [0, 1]")
    attempt_value = 2.0 * p_correct - 1.0
    if math.isclose(attempt_value, r_abs, rel_tol=0.0, abs_tol=1e-12):
        return OracleAction.INDIFFERENT
    return OracleAction.ABSTAIN if attempt_value < r_abs else OracleAction.ATTEMPT


# --- batched training -----------------------------------------------------


@dataclass
class _Block:
    ids: list[str]
    bandit: bool
    logits: np.ndarray
    p_correct: np.ndarray
    answer_idx: np.ndarray


def _blocks(policy: PolicyState, tasks: Sequence[SyntheticTask]) -> list[_Block]:
    out = []
    for bandit in (True, False):
        group = [t for t in tasks if (t.mode is SimMode.BANDIT) == bandit]
        if not group:
            continue
        out.append(
            _Block(
                ids=[t.id for t in group],
                bandit=bandit,
                logits=np.stack([policy.logits[t.id] for t in group]).astype(float),
                p_correct=np.array([t.p_correct for t in group]),
                answer_idx=np.array([t.answer_index for t in group]),
            )
        )
    return out


def evaluate_policy(
    policy: PolicyState,
    tasks: Sequence[SyntheticTask],
    r_abs: float,
    rollouts: int = 1000,
    rng: np.random.Generator | None = None,
    exact: bool = False,
) -> tuple[tuple[float, float, float], float]:
    """Return ``((correct%, incorrect%, idk%), mean_reward)`` over the population.

    Monte Carlo with ``rollouts`` fresh samples per task, or exact expectations
    when ``exact`` is set.
    """
    if not tasks:
        raise ValueError("no tasks to evaluate")
    correct = incorrect = idk = 0.0
    for block in _blocks(policy, tasks):
        probs = _softmax(block.logits)
        if exact:
            abstain = probs[:, -1]
            if block.bandit:
                right = probs[:, 0] * block.p_correct
            else:
                right = np.take_along_axis(probs, block.answer_idx[:, None], axis=1)[:, 0]
            correct += right.sum()
            idk += abstain.sum()
            incorrect += (1.0 - abstain - right).sum()
        else:
            rng = rng if rng is not None else np.random.default_rng(policy.rng_seed)
            actions = _sample_actions(probs, rollouts, rng)
            rewards = _rewards(actions, block.p_correct, block.answer_idx, block.bandit, r_abs, rng)
            abstained = actions == probs.shape[1] - 1
            n_idk = abstained.sum()
            n_right = (rewards == R_RIGHT)[~abstained].sum()
            correct += n_right / rollouts
            idk += n_idk / rollouts
            incorrect += (abstained.size - n_idk - n_right) / rollouts
    n = len(tasks)
    fractions = (float(100.0 * correct / n), float(100.0 * incorrect / n), float(100.0 * idk / n))
    mean_reward = (correct * R_RIGHT + incorrect * R_WRONG + idk * r_abs) / n
    return fractions, float(mean_reward)


def run_training(
    tasks: Sequence[SyntheticTask],
    config: SimConfig,
    policy: PolicyState | None = None,
) -> TrainingResult:
    """Optional SFT warm-up, then ``config.steps`` GRPO rounds over every task.

    ``policy`` defaults to :func:`initial_policy` at ``config.init_abstain_prob``.
    The result depends only on ``(tasks, config, policy)``.
    """
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks")
    if len({t.id for t in tasks}) != len(tasks):
        raise ValueError("duplicate task ids")
    train_ss, eval_ss = np.random.SeedSequence(config.seed).spawn(2)
    train_rng = np.random.default_rng(train_ss)

    if policy is None:
        policy = initial_policy(tasks, config.init_abstain_prob, config.seed)
    reference = policy.copy()
    if config.sft_steps > 0:
        labels = sft_labels_for_tasks(tasks, config.sft_ratio, config.seed)
        policy = sft_pretrain(policy, tasks, labels, config.sft_steps, config.learning_rate)

    blocks = _blocks(policy, tasks)
    refs = [np.stack([reference.logits[i] for i in b.ids]) for b in blocks]
    total_samples = len(tasks) * config.group_size
    log = []
    for step in range(1, config.steps + 1):
        reward_sum = 0.0
        idk_count = 0
        for block, ref in zip(blocks, refs):
            probs = _softmax(block.logits)
            actions = _sample_actions(probs, config.group_size, train_rng)
            rewards = _rewards(
                actions, block.p_correct, block.answer_idx, block.bandit, config.r_abs, train_rng
            )
            advs = _advantages(rewards, config.epsilon_std)
            block.logits += config.learning_rate * _pg_direction(
                block.logits, actions, advs, config.kl_beta, ref
            )
            reward_sum += rewards.sum()
            idk_count += int((actions == probs.shape[1] - 1).sum())
        log.append((step, reward_sum / total_samples, idk_count / total_samples))

    final = PolicyState(
        {tid: row.copy() for b in blocks for tid, row in zip(b.ids, b.logits)}, config.seed
    )
    fractions, mean_reward = evaluate_policy(
        final,
        tasks,
        config.r_abs,
        rollouts=config.eval_rollouts,
        rng=np.random.default_rng(eval_ss),
        exact=config.exact_eval,
    )
    return TrainingResult(fractions, log, final, mean_reward)


def _run_one(args):
    tasks, config = args
    return run_training(tasks, config)


def sweep_rabs(
    tasks: Sequence[SyntheticTask],
    base_config: SimConfig,
    r_abs_values: Iterable[float],
    workers: int = 1,
) -> list[tuple[float, TrainingResult]]:
    """One independent run per ``r_abs`` value, all seeded from ``base_config.seed``.

    Repeated values therefore reproduce identical results, and ``workers`` only
    changes wall-clock time.
    """
    values = [float(v) for v in r_abs_values]
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"r_abs value {v} is not finite")
    jobs = [(list(tasks), replace(base_config, r_abs=v)) for v in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return list(zip(values, results))


def load_tasks(path) -> list[SyntheticTask]:
    from .core import DatasetFormatError, iter_jsonl

    tasks = []
    for lineno, obj in iter_jsonl(path):
        try:
            tasks.append(SyntheticTask.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(path, lineno, f"bad task: {exc}") from exc
    return tasks


def low_accuracy_population(n: int = 100, low: float = 0.1, high: float = 0.4, seed: int = 0) -> list[SyntheticTask]:
    """Bandit tasks with ``p_correct ~ Uniform(low, high)``."""
    rng = np.random.default_rng(seed)
    ps = rng.uniform(low, high, size=n)
    return [SyntheticTask(f"t{i:03d}", round(float(p), 4)) for i, p in enumerate(ps)]
