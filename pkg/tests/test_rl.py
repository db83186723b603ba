from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphsr.gnn import TrainConfig, train, val_accuracy
from graphsr.graph import SplitSpec, make_imbalanced_split, make_synthetic_graph
from graphsr.rl import (
    PolicyAgent,
    RewardTracker,
    RLConfig,
    SelectionEnv,
    Trajectory,
    gae,
    ppo_loss,
    ppo_update,
    reward,
    run_episode,
    select_supplement,
)
from graphsr.similarity import build_candidates, compute_centers

from .conftest import central_diff, rel_error

CFG = TrainConfig(max_epochs=200, patience=50, seed=0)


@pytest.fixture(scope="module")
def setup():
    g = make_synthetic_graph(120, 2, 1.0, 0.0, 4, seed=0)
    split = make_imbalanced_split(g, SplitSpec((1,), 4, 0.5, 10, 20, seed=0))
    model = train(g, split.train, split.train_labels, split.val, CFG)
    z = model.embed(g)
    pl = model.forward(g).argmax(axis=1)
    cands = build_candidates(z, pl, compute_centers(z, split), 5, split.unlabelled)
    return g, split, model, z, cands


def make_env(setup, **rl):
    g, split, model, z, cands = setup
    return SelectionEnv(g, split, model, cands, z, CFG, RLConfig(**rl), seed=0)


@pytest.mark.parametrize(
    "acc,b,a,expected",
    [
        (0.70, 0.60, 1, 1),
        (0.50, 0.60, 1, -1),
        (0.50, 0.60, 0, 1),
        (0.70, 0.60, 0, -1),
        (0.60, 0.60, 1, 1),
        (0.60, 0.60, 0, -1),
    ],
)
def test_reward_table(acc, b, a, expected):
    assert reward(acc, b, a) == expected


def test_reward_rejects_bad_action():
    with pytest.raises(ValueError):
        reward(0.5, 0.5, 2)


@given(st.floats(0, 1), st.lists(st.floats(0, 1), max_size=40))
@settings(max_examples=100, deadline=None)
def test_tracker_is_mean_of_last_ten(acc0, pushes):
    tr = RewardTracker(acc0)
    for x in pushes:
        tr.push(x)
    tail = ([acc0] + pushes)[-10:]
    assert tr.baseline == pytest.approx(sum(tail) / len(tail))


def test_forced_episodes(setup):
    g, split, model, z, cands = setup
    env = make_env(setup, finetune_epochs=2)
    agent = PolicyAgent.for_env(env)
    none = run_episode(agent, env, "explore", forced_action=0)
    assert sorted(none.train_nodes) == sorted(split.train.tolist())
    assert len(none) == len(cands)
    every = run_episode(agent, env, "greedy", forced_action=1)
    assert sorted(every.train_nodes) == sorted(split.train.tolist() + cands.nodes.tolist())
    assert every.accepted == list(range(len(cands)))
    with pytest.raises(RuntimeError):
        env.step(0)


def test_encoding_additivity(setup):
    g, split, model, z, cands = setup
    env = make_env(setup, finetune_epochs=1)
    s0 = env.reset()
    h = z.shape[1]
    assert np.allclose(s0[:h], z[split.train].sum(axis=0))
    assert np.array_equal(s0[h:], z[cands[0].node])
    s1, *_ = env.step(1)
    assert np.allclose(s1[:h] - s0[:h], z[cands[0].node])
    assert np.array_equal(s1[h:], z[cands[1].node])
    s2, *_ = env.step(0)
    assert np.allclose(s2[:h], s1[:h])


def test_reward_eval_boundaries(setup):
    g, split, model, z, cands = setup
    env = make_env(setup, finetune_epochs=0)
    env.reset()
    acc, _ = env.reward_eval(split.train.tolist() + [cands[0].node], split.train_labels.tolist() + [1])
    assert acc == val_accuracy(model, g, split.val)
    env = make_env(setup, finetune_epochs=10)
    env.reset()
    correct = [e for e in cands if g.labels[e.node] == e.pseudo_label][0]
    acc, _ = env.reward_eval(split.train.tolist() + [correct.node], split.train_labels.tolist() + [correct.pseudo_label])
    assert acc == 1.0
    dup, _ = env.reward_eval(split.train.tolist() + [int(split.train[0])], split.train_labels.tolist()
                             + [int(split.train_labels[0])])
    assert 0.0 <= dup <= 1.0
    with pytest.raises(ValueError):
        env.reward_eval([], [])


def test_rejection_leaves_committed_model_untouched(setup):
    env = make_env(setup, finetune_epochs=3)
    env.reset()
    before = {k: v.copy() for k, v in env.committed.params().items()}
    env.step(0)
    assert all(np.array_equal(v, before[k]) for k, v in env.committed.params().items())
    env.step(1)
    assert not all(np.array_equal(v, before[k]) for k, v in env.committed.params().items())


def test_step_logs_baseline_before_push(setup):
    env = make_env(setup, finetune_epochs=2)
    env.reset()
    _, r, _, info = env.step(1)
    assert info["b_t"] == env.acc0
    assert r == reward(info["acc_t"], info["b_t"], 1)
    _, _, _, info2 = env.step(0)
    assert info2["b_t"] == pytest.approx((env.acc0 + info["acc_t"]) / 2)


def test_policy_outputs_distribution():
    agent = PolicyAgent(8, seed=0)
    p = agent.probs(np.random.default_rng(0).normal(size=(5, 8)) * 10)
    assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1.0)


def test_gae_matches_direct_sum():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=7), rng.normal(size=7)
    gamma, lam = 0.99, 0.95
    adv, ret = gae(r, v, gamma, lam)
    vn = np.append(v, 0.0)
    delta = r + gamma * vn[1:] - v
    direct = [sum((gamma * lam) ** l * delta[t + l] for l in range(7 - t)) for t in range(7)]
    assert np.allclose(adv, direct)
    assert np.allclose(ret, adv + v)


def _batch(rng, n, dim):
    return (rng.normal(size=(n, dim)), rng.integers(2, size=n), np.log(rng.uniform(0.2, 0.8, size=n)),
            rng.normal(size=n), rng.normal(size=n))


def test_ppo_loss_gradient():
    rng = np.random.default_rng(3)
    cfg = RLConfig(hidden_dim=6)
    checked = 0
    while checked < 10:
        agent = PolicyAgent(4, cfg, seed=int(rng.integers(1 << 30)))
        s, a, old, adv, ret = _batch(rng, 5, 4)
        agent.policy.forward(s)
        agent.value.forward(s)
        ratio = np.exp(np.log(agent.probs(s)[np.arange(5), a]) - old)
        near_kink = min(np.abs(p).min() for p in agent.policy._pre + agent.value._pre) < 1e-3
        near_clip = np.min(np.abs(np.abs(ratio - 1) - cfg.clip_eps)) < 1e-3
        if near_kink or near_clip:
            continue
        ppo_loss(agent, s, a, old, adv, ret)
        grads = {k: v.copy() for k, v in agent.grads().items()}
        f = lambda: ppo_loss(agent, s, a, old, adv, ret, backward=False)["loss"]  # noqa: E731
        for name, p in agent.params().items():
            assert rel_error(grads[name], central_diff(f, p)) < 1e-4, name
        checked += 1


def _traj(states, actions, rewards, logps, values):
    return Trajectory(states, np.asarray(actions), np.asarray(rewards, float), np.asarray(logps),
                      np.asarray(values, float), [], [], [], [])


def test_first_epoch_ratio_is_one():
    rng = np.random.default_rng(0)
    agent = PolicyAgent(4, RLConfig(hidden_dim=8), seed=0)
    s = rng.normal(size=(6, 4))
    p = agent.probs(s)
    a = rng.integers(2, size=6)
    out = ppo_loss(agent, s, a, np.log(p[np.arange(6), a]), rng.normal(size=6), rng.normal(size=6))
    assert out["clip_frac"] == 0.0


def test_positive_advantage_raises_probability():
    agent = PolicyAgent(4, RLConfig(hidden_dim=8, ppo_epochs=1, entropy_coef=0.0), seed=2)
    s = np.random.default_rng(1).normal(size=(1, 4))
    p0 = agent.probs(s)[0, 1]
    t = _traj(s, [1], [1.0], [np.log(p0)], [0.0])
    ppo_update(agent, [t])
    assert agent.probs(s)[0, 1] >= p0


def test_zero_advantage_and_exact_value_is_fixed_point():
    agent = PolicyAgent(4, RLConfig(hidden_dim=8, entropy_coef=0.0), seed=3)
    s = np.random.default_rng(2).normal(size=(3, 4))
    v = agent.values(s)
    gamma = agent.cfg.gamma
    # choose rewards so that v_t = r_t + gamma * v_{t+1} exactly
    r = v - gamma * np.append(v[1:], 0.0)
    adv, _ = gae(r, v, gamma, agent.cfg.gae_lambda)
    assert np.allclose(adv, 0.0, atol=1e-12)
    p = agent.probs(s)
    a = np.array([0, 1, 0])
    before = {k: x.copy() for k, x in agent.params().items()}
    ppo_update(agent, [_traj(s, a, r, np.log(p[np.arange(3), a]), v)])
    # the policy only sees round-off gradients; Adam rescales the value head's
    # round-off error, so it may drift slightly
    for k, x in agent.policy.named_params("policy.").items():
        assert np.allclose(x, before[k], atol=1e-8)
    for k, x in agent.value.named_params("value.").items():
        assert np.allclose(x, before[k], atol=1e-2)


@given(st.floats(-5, 5), st.floats(0.01, 10))
@settings(max_examples=100, deadline=None)
def test_clipped_surrogate_upper_bound(adv, ratio):
    eps = 0.2
    surr = min(ratio * adv, np.clip(ratio, 1 - eps, 1 + eps) * adv)
    assert surr <= abs(adv) * (1 + eps) + 1e-12


def test_select_supplement_accounting(setup, tmp_path):
    g, split, model, z, cands = setup
    env = make_env(setup, finetune_epochs=2, epochs=2)
    agent = PolicyAgent.for_env(env)
    sup = select_supplement(agent, env, log_dir=tmp_path)
    assert len(sup.history) == 2
    assert sum(sup.counts.values()) == len(sup.nodes)
    assert set(sup.nodes) <= set(cands.nodes.tolist())
    assert set(split.train.tolist()) <= set(sup.greedy.train_nodes)
    lines = (tmp_path / "trajectory.jsonl").read_text().splitlines()
    assert len(lines) == len(cands)
    assert sum('"action": 1' in ln for ln in lines) == len(sup.nodes)
    loaded = PolicyAgent.load(tmp_path / "agent")
    s = env.reset()
    assert np.array_equal(loaded.probs(s), agent.probs(s))


def test_zero_episodes_is_greedy_rollout(setup):
    env = make_env(setup, finetune_epochs=1)
    a = select_supplement(PolicyAgent.for_env(env, seed=4), env, 0)
    b = select_supplement(PolicyAgent.for_env(env, seed=4), env, 0)
    assert a.history == [] and a.nodes == b.nodes


def test_rl_config_validation():
    with pytest.raises(ValueError):
        RLConfig(epochs=-1)
    with pytest.raises(ValueError):
        RLConfig(window=0)
    assert dataclasses.asdict(RLConfig())["clip_eps"] == 0.2
