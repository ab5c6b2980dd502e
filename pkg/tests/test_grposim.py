import statistics
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idkreward.dataxform import SftRecord, SftTarget
from idkreward.grposim import (
    ABSTAIN,
    ATTEMPT,
    OracleAction,
    PolicyState,
    SimConfig,
    SimMode,
    SyntheticTask,
    evaluate_policy,
    group_advantages,
    initial_policy,
    low_accuracy_population,
    optimal_action_oracle,
    policy_update,
    run_training,
    sample_group,
    sft_labels_for_tasks,
    sft_pretrain,
    surrogate_objective,
    sweep_rabs,
)

BANDIT = SyntheticTask("b", 0.5)
MCQ = SyntheticTask("m", mode=SimMode.MCQ, correct_letter="C")


def _policy(task, logits):
    return PolicyState({task.id: np.asarray(logits, dtype=float)})


# --- tasks / config -------------------------------------------------------


def test_task_validation():
    with pytest.raises(ValueError):
        SyntheticTask("x", 1.5)
    with pytest.raises(ValueError):
        SyntheticTask("x", mode=SimMode.MCQ)
    assert MCQ.actions == ("A", "B", "C", "D", ABSTAIN)
    assert SyntheticTask.from_dict(MCQ.to_dict()) == MCQ


def test_config_rejects_small_group():
    with pytest.raises(ValueError):
        SimConfig(group_size=1)


def test_initial_policy_abstain_mass():
    pol = initial_policy([BANDIT, MCQ], 0.3)
    assert pol.abstain_prob("b") == pytest.approx(0.3)
    assert pol.abstain_prob("m") == pytest.approx(0.3)
    assert np.allclose(pol.probs("m")[:4], 0.7 / 4)


# --- sample_group ---------------------------------------------------------


def test_all_abstain_policy():
    out = sample_group(_policy(BANDIT, [-1e3, 0.0]), BANDIT, SimConfig(r_abs=-0.25), np.random.default_rng(0))
    assert len(out) == 8
    assert out == [(ABSTAIN, -0.25)] * 8


def test_certain_attempt_always_right():
    task = SyntheticTask("b", 1.0)
    out = sample_group(_policy(task, [0.0, -1e3]), task, SimConfig(), np.random.default_rng(0))
    assert out == [(ATTEMPT, 1.0)] * 8


def test_mcq_rewards_by_letter():
    out = sample_group(_policy(MCQ, [0, 0, 0, 0, 0]), MCQ, SimConfig(r_abs=0.1, group_size=400), np.random.default_rng(1))
    for action, reward in out:
        assert reward == {"C": 1.0, ABSTAIN: 0.1}.get(action, -1.0)
    assert {a for a, _ in out} == set(MCQ.actions)


def test_sample_mean_matches_closed_form():
    r_abs = 0.3
    cfg = SimConfig(r_abs=r_abs)
    rng = np.random.default_rng(2024)
    pol = _policy(BANDIT, [0.0, 0.0])
    rewards = [r for _ in range(1250) for _, r in sample_group(pol, BANDIT, cfg, rng)]
    # half abstain (r_abs), half attempt with value 2p - 1 = 0
    expected = 0.5 * r_abs + 0.5 * (2 * 0.5 - 1)
    second = 0.5 * r_abs**2 + 0.5 * 1.0
    sigma = ((second - expected**2) / len(rewards)) ** 0.5
    assert len(rewards) == 10_000
    assert abs(np.mean(rewards) - expected) < 3 * sigma


# --- group_advantages -----------------------------------------------------


def test_equal_rewards_zero_advantage():
    assert np.all(group_advantages([0.3] * 8) == 0.0)


def test_two_rewards():
    assert np.allclose(group_advantages([1.0, -1.0]), [1.0, -1.0], atol=1e-7)


@pytest.mark.parametrize(
    "rewards",
    [[1, 1, -1, -1, 0, 0, 0, 0], [1, -1, -1, -1, -1, -0.25, -0.25, 1], [0.3, 1, 1, 1, 1, 1, 1, -1]],
)
def test_advantages_against_statistics(rewards):
    mu = statistics.fmean(rewards)
    sd = statistics.pstdev(rewards)
    expected = [(r - mu) / (sd + 1e-8) for r in rewards]
    assert np.allclose(group_advantages(rewards, 1e-8), expected, rtol=1e-12, atol=1e-12)


def test_advantages_need_two():
    with pytest.raises(ValueError):
        group_advantages([1.0])


# --- policy_update --------------------------------------------------------


def test_zero_advantages_leave_logits():
    pol = _policy(MCQ, [0.1, -0.2, 0.3, 0.0, -1.0])
    new = policy_update(pol, MCQ, [("A", 0.0), (ABSTAIN, 0.0)], SimConfig())
    assert np.array_equal(new.logits["m"], pol.logits["m"])


def test_positive_abstain_sample_raises_abstain_logit():
    pol = _policy(BANDIT, [0.0, -1.0])
    new = policy_update(pol, BANDIT, [(ABSTAIN, 1.0)], SimConfig())
    assert new.logits["b"][1] > pol.logits["b"][1]
    assert new.logits["b"][0] < pol.logits["b"][0]
    # original untouched
    assert pol.logits["b"][1] == -1.0


def test_zero_variance_group_stalls():
    pol = initial_policy([BANDIT], 1e-4)
    samples = [(ATTEMPT, -1.0)] * 8
    advs = group_advantages([r for _, r in samples])
    new = policy_update(pol, BANDIT, [(a, adv) for (a, _), adv in zip(samples, advs)], SimConfig())
    assert np.array_equal(new.logits["b"], pol.logits["b"])


def test_kl_needs_reference():
    with pytest.raises(ValueError):
        policy_update(_policy(BANDIT, [0, 0]), BANDIT, [(ATTEMPT, 1.0)], SimConfig(kl_beta=0.1))


def _central_difference(f, x, h=1e-6):
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


@pytest.mark.parametrize("kl_beta", [0.0, 0.2])
def test_update_matches_finite_differences(kl_beta):
    rng = np.random.default_rng(5)
    ref = rng.normal(size=5)
    logits = rng.normal(size=5)
    actions = rng.integers(0, 5, size=8)
    advs = group_advantages(rng.normal(size=8))
    cfg = SimConfig(learning_rate=1.0, kl_beta=kl_beta)
    samples = [(MCQ.actions[a], adv) for a, adv in zip(actions, advs)]
    new = policy_update(_policy(MCQ, logits), MCQ, samples, cfg, reference=_policy(MCQ, ref))
    analytic = new.logits["m"] - logits
    numeric = _central_difference(
        lambda z: surrogate_objective(z, actions, advs, kl_beta, ref), logits
    )
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-4


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=5, max_size=5),
    st.lists(st.tuples(st.integers(0, 4), st.floats(-3, 3)), min_size=1, max_size=8),
)
def test_softmax_stays_normalized(logits, samples):
    pol = _policy(MCQ, logits)
    new = policy_update(pol, MCQ, [(MCQ.actions[a], adv) for a, adv in samples], SimConfig(learning_rate=0.5))
    probs = new.probs("m")
    assert np.all(probs > 0)
    assert abs(probs.sum() - 1.0) < 1e-9


# --- sft_pretrain ---------------------------------------------------------


def test_sft_all_abstain_converges():
    tasks = low_accuracy_population(20)
    pol = initial_policy(tasks, 0.05)
    labels = [SftRecord(t.id, SftTarget.ABSTAIN, ABSTAIN) for t in tasks]
    new = sft_pretrain(pol, tasks, labels, sft_steps=300, learning_rate=0.1)
    assert min(new.abstain_prob(t.id) for t in tasks) > 0.9


def test_sft_zero_steps_identity():
    tasks = low_accuracy_population(5)
    pol = initial_policy(tasks, 0.2)
    new = sft_pretrain(pol, tasks, sft_labels_for_tasks(tasks, 0.3, 0), 0, 0.1)
    for t in tasks:
        assert np.array_equal(new.logits[t.id], pol.logits[t.id])


def test_sft_raises_labeled_probability():
    tasks = low_accuracy_population(30) + [MCQ]
    pol = initial_policy(tasks, 0.2)
    labels = sft_labels_for_tasks(tasks, 0.3, 3)

    def mean_label_prob(p):
        out = []
        for lab, t in zip(labels, tasks):
            idx = len(t.actions) - 1 if lab.target is SftTarget.ABSTAIN else t.answer_index
            out.append(p.probs(t.id)[idx])
        return np.mean(out)

    new = sft_pretrain(pol, tasks, labels, 10, 0.1)
    assert mean_label_prob(new) > mean_label_prob(pol)


def test_sft_thirty_percent_mass():
    tasks = low_accuracy_population(100)
    pol = initial_policy(tasks, 1e-4)
    new = sft_pretrain(pol, tasks, sft_labels_for_tasks(tasks, 0.3, 0), 300, 0.1)
    mass = np.mean([new.abstain_prob(t.id) for t in tasks])
    assert mass == pytest.approx(0.3, abs=0.05)


def test_sft_unknown_task():
    with pytest.raises(KeyError):
        sft_pretrain(initial_policy([BANDIT], 0.3), [BANDIT], [SftRecord("zzz", SftTarget.ABSTAIN, ABSTAIN)], 1, 0.1)


# --- oracle ---------------------------------------------------------------


@pytest.mark.parametrize(
    "p, r_abs, expected",
    [
        (0.5, 0.3, OracleAction.ABSTAIN),
        (0.9, -0.25, OracleAction.ATTEMPT),
        (0.375, -0.25, OracleAction.INDIFFERENT),
    ],
)
def test_oracle(p, r_abs, expected):
    assert optimal_action_oracle(p, r_abs) is expected


# --- run_training ---------------------------------------------------------


def _uniform_tasks(lo, hi, n=100, seed=3):
    rng = np.random.default_rng(seed)
    return [SyntheticTask(f"u{i}", float(p)) for i, p in enumerate(rng.uniform(lo, hi, n))]


def test_positive_r_abs_drives_abstention():
    res = run_training(_uniform_tasks(0.2, 0.5), SimConfig(steps=500, r_abs=0.3, init_abstain_prob=0.3))
    assert res.idk_pct > 50


def test_negative_r_abs_suppresses_abstention():
    res = run_training(_uniform_tasks(0.3, 0.9), SimConfig(steps=2000, r_abs=-0.5, init_abstain_prob=0.3))
    assert res.idk_pct < 5


def test_exploration_failure():
    res = run_training(low_accuracy_population(), SimConfig(steps=500, r_abs=-0.25, init_abstain_prob=1e-4))
    assert res.idk_pct < 1


def test_training_result_shape():
    cfg = SimConfig(steps=20, r_abs=0.0)
    res = run_training(low_accuracy_population(10) + [MCQ], cfg)
    assert len(res.per_step_log) == 20
    assert [s for s, _, _ in res.per_step_log] == list(range(1, 21))
    assert abs(sum(res.final_fractions) - 100.0) < 0.1
    assert set(res.final_policy.logits) == {f"t{i:03d}" for i in range(10)} | {"m"}
    for tid in res.final_policy.logits:
        assert abs(res.final_policy.probs(tid).sum() - 1) < 1e-9


def test_training_deterministic():
    tasks = low_accuracy_population(20)
    cfg = SimConfig(steps=50, r_abs=0.1, seed=9)
    a, b = run_training(tasks, cfg), run_training(tasks, cfg)
    assert a.final_fractions == b.final_fractions
    assert a.per_step_log == b.per_step_log


def test_exact_and_monte_carlo_evaluation_agree():
    tasks = low_accuracy_population(50) + [MCQ]
    pol = initial_policy(tasks, 0.4)
    exact, exact_reward = evaluate_policy(pol, tasks, 0.1, exact=True)
    mc, mc_reward = evaluate_policy(pol, tasks, 0.1, rollouts=4000, rng=np.random.default_rng(0))
    assert np.allclose(exact, mc, atol=1.0)
    assert exact_reward == pytest.approx(mc_reward, abs=0.02)


def test_kl_pulls_toward_reference():
    tasks = low_accuracy_population(30)
    free = run_training(tasks, SimConfig(steps=300, r_abs=0.3, exact_eval=True))
    tied = run_training(tasks, SimConfig(steps=300, r_abs=0.3, kl_beta=5.0, exact_eval=True))
    # reference abstains 30% of the time
    assert abs(tied.idk_pct - 30) < abs(free.idk_pct - 30)


def test_mcq_population_learns_correct_letter():
    tasks = [SyntheticTask(f"m{i}", mode=SimMode.MCQ, correct_letter="ABCD"[i % 4]) for i in range(20)]
    res = run_training(tasks, SimConfig(steps=400, r_abs=-0.5, exact_eval=True))
    assert res.correct_pct > 90


# --- sweeps ---------------------------------------------------------------


def test_sweep_single_and_duplicates():
    tasks = low_accuracy_population(20)
    cfg = SimConfig(steps=30)
    (single,) = sweep_rabs(tasks, cfg, [-0.25])
    assert single[0] == -0.25
    (a_v, a), (b_v, b) = sweep_rabs(tasks, cfg, [0.1, 0.1])
    assert a.final_fractions == b.final_fractions


def test_sweep_parallel_matches_serial():
    tasks = low_accuracy_population(20)
    cfg = SimConfig(steps=30)
    serial = sweep_rabs(tasks, cfg, [-0.5, 0.3])
    parallel = sweep_rabs(tasks, cfg, [-0.5, 0.3], workers=2)
    assert [r.final_fractions for _, r in serial] == [r.final_fractions for _, r in parallel]


def test_sweep_rejects_non_finite():
    with pytest.raises(ValueError):
        sweep_rabs([BANDIT], SimConfig(steps=1), [float("nan")])


def test_sweep_monotone_over_seeds():
    tasks = low_accuracy_population()
    values = [-0.5, -0.25, 0.0, 0.3]
    per_seed = []
    for seed in range(5):
        rows = sweep_rabs(tasks, SimConfig(steps=500, seed=seed, init_abstain_prob=0.3), values)
        per_seed.append([res.idk_pct for _, res in rows])
    mean_idk = np.mean(per_seed, axis=0)
    drops = [max(0.0, a - b) for a, b in zip(mean_idk, mean_idk[1:])]
    assert max(drops) <= 2.0
    assert mean_idk[-1] > 95


def test_sft_rescue_property():
    tasks = low_accuracy_population()
    base = SimConfig(steps=500, init_abstain_prob=1e-4)
    for r_abs in (-0.5, -0.25, 0.0):
        rl = run_training(tasks, replace(base, r_abs=r_abs))
        sft = run_training(tasks, replace(base, r_abs=r_abs, sft_steps=200, sft_ratio=0.3))
        assert rl.idk_pct < 1, r_abs
        assert sft.idk_pct > 10, r_abs
