"""Sequential accept/reject environment over the candidate set and a PPO agent."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .gnn import GnnModel, TrainConfig, fit, val_accuracy
from .graph import Graph, Split
from .nn import MLP, Adam, NonFiniteError, Params, load_params, log_softmax, save_params
from .similarity import CandidateSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RLConfig:
    epochs: int = 50
    finetune_epochs: int = 10
    lr: float = 0.005
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ppo_epochs: int = 4
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    hidden_dim: int = 128
    window: int = 10

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epochs and finetune_epochs must be nonnegative")
        if self.window < 1 or self.minibatch_size < 1 or self.ppo_epochs < 1:
            raise ValueError("window, minibatch_size and ppo_epochs must be positive")


def reward(acc: float, baseline: float, action: int) -> int:
    """+1 for accepting when accuracy holds up or rejecting when it drops, else -1."""
    if action not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {action!r}")
    good = acc >= baseline
    return 1 if good == (action == 1) else -1


class RewardTracker:
    """Running mean of the most recent accuracies, seeded with the initial one."""

    def __init__(self, acc0: float, window: int = 10) -> None:
        self.acc0 = float(acc0)
        self.history: deque[float] = deque([self.acc0], maxlen=window)

    @property
    def baseline(self) -> float:
        return float(np.mean(self.history))

    def push(self, acc: float) -> None:
        self.history.append(float(acc))


@dataclass
class EnvState:
    train_nodes: list[int]
    train_labels: list[int]
    cursor: int
    encoding: np.ndarray | None
    accepted: list[int] = field(default_factory=list)


class SelectionEnv:
    """Walks the candidate list once per episode.

    At each step the committed classifier is copied and fine-tuned on the
    current training set plus the candidate. The resulting validation
    accuracy drives the reward whatever the action; the fine-tuned copy
    replaces the committed classifier only when the candidate is accepted.
    """

    def __init__(
        self,
        g: Graph,
        split: Split,
        model: GnnModel,
        candidates: CandidateSet,
        embeddings: np.ndarray,
        train_cfg: TrainConfig,
        rl_cfg: RLConfig | None = None,
        seed: int = 0,
    ) -> None:
        if len(candidates) == 0:
            raise ValueError("candidate set is empty")
        self.g = g
        self.split = split
        self.base_model = model
        self.candidates = candidates
        self.embeddings = embeddings
        self.train_cfg = train_cfg
        self.rl_cfg = rl_cfg or RLConfig()
        self.seed = seed
        self.acc0 = val_accuracy(model, g, split.val)
        self.state: EnvState | None = None
        self.tracker: RewardTracker | None = None
        self.committed: GnnModel | None = None

    @property
    def state_dim(self) -> int:
        return 2 * self.embeddings.shape[1]

    def encode(self, nodes, cursor: int) -> np.ndarray:
        z_sum = self.embeddings[np.asarray(nodes, dtype=np.int64)].sum(axis=0)
        return np.concatenate([z_sum, self.embeddings[self.candidates[cursor].node]])

    def reset(self) -> np.ndarray:
        nodes = [int(v) for v in self.split.train]
        labels = [int(y) for y in self.split.train_labels]
        self.committed = self.base_model.copy()
        self.tracker = RewardTracker(self.acc0, self.rl_cfg.window)
        self.state = EnvState(nodes, labels, 0, self.encode(nodes, 0))
        return self.state.encoding.copy()

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.cursor >= len(self.candidates)

    def reward_eval(self, nodes, labels) -> tuple[float, GnnModel]:
        """Validation accuracy of a fine-tuned copy of the committed classifier."""
        if len(nodes) == 0:
            raise ValueError("training set is empty")
        model = self.committed.copy()
        if self.rl_cfg.finetune_epochs > 0:
            # same dropout stream for every call so counterfactuals differ only by data
            rng = np.random.default_rng([self.seed, 17])
            fit(model, self.g, np.asarray(nodes), np.asarray(labels), None, self.train_cfg,
                epochs=self.rl_cfg.finetune_epochs, rng=rng)
        return val_accuracy(model, self.g, self.split.val), model

    def step(self, action: int) -> tuple[np.ndarray | None, int, bool, dict]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if self.done:
            raise RuntimeError("episode is finished")
        st = self.state
        cand = self.candidates[st.cursor]
        acc, tuned = self.reward_eval(st.train_nodes + [cand.node], st.train_labels + [cand.pseudo_label])
        b = self.tracker.baseline
        r = reward(acc, b, action)
        self.tracker.push(acc)
        if action == 1:
            st.train_nodes.append(cand.node)
            st.train_labels.append(cand.pseudo_label)
            st.accepted.append(st.cursor)
            self.committed = tuned
        info = {"t": st.cursor, "node_id": cand.node, "action": int(action), "acc_t": acc, "b_t": b,
                "reward": r}
        st.cursor += 1
        st.encoding = None if self.done else self.encode(st.train_nodes, st.cursor)
        nxt = None if st.encoding is None else st.encoding.copy()
        return nxt, r, self.done, info


class PolicyAgent:
    """Policy and value MLPs trained with the clipped PPO objective.

    States are rescaled before entering the networks so that each half has
    roughly unit norm: the node half is divided by the mean labelled
    embedding norm, the set-sum half additionally by the largest possible
    set size. Without this a few Adam steps saturate the policy.
    """

    def __init__(self, state_dim: int, cfg: RLConfig | None = None, seed: int = 0,
                 state_scale: np.ndarray | None = None) -> None:
        self.cfg = cfg or RLConfig()
        self.state_dim = state_dim
        rng = np.random.default_rng([seed, 23])
        h = self.cfg.hidden_dim
        self.policy = MLP([state_dim, h, h, 2], rng)
        self.value = MLP([state_dim, h, h, 1], rng)
        self.rng = np.random.default_rng([seed, 29])
        self.state_scale = np.ones(state_dim) if state_scale is None else np.asarray(state_scale, float)
        self.opt = Adam(self.params(), self.cfg.lr)

    @classmethod
    def for_env(cls, env: SelectionEnv, cfg: RLConfig | None = None, seed: int = 0) -> PolicyAgent:
        norm = float(np.mean(np.linalg.norm(env.embeddings[env.split.train], axis=1))) or 1.0
        half = env.embeddings.shape[1]
        max_set = len(env.split.train) + len(env.candidates)
        scale = np.concatenate([np.full(half, 1.0 / (max_set * norm)), np.full(half, 1.0 / norm)])
        return cls(env.state_dim, cfg or env.rl_cfg, seed, scale)

    def params(self) -> Params:
        return {**self.policy.named_params("policy."), **self.value.named_params("value.")}

    def grads(self) -> Params:
        return {**self.policy.named_grads("policy."), **self.value.named_grads("value.")}

    def zero_grad(self) -> None:
        self.policy.zero_grad()
        self.value.zero_grad()

    def _x(self, states: np.ndarray) -> np.ndarray:
        return np.atleast_2d(states) * self.state_scale

    def probs(self, states: np.ndarray) -> np.ndarray:
        return np.exp(log_softmax(self.policy.forward(self._x(states))))

    def values(self, states: np.ndarray) -> np.ndarray:
        return self.value.forward(self._x(states))[:, 0]

    def act(self, state: np.ndarray, greedy: bool = False) -> tuple[int, float, float]:
        x = self._x(state)
        logp = log_softmax(self.policy.forward(x))[0]
        v = float(self.value.forward(x)[0, 0])
        if greedy:
            a = int(np.argmax(logp))
        else:
            a = int(self.rng.random() < np.exp(logp[1]))
        return a, float(logp[a]), v

    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        meta = {"state_dim": self.state_dim, "cfg": asdict(self.cfg),
                "state_scale": self.state_scale.tolist(), **(extra or {})}
        return save_params(self.params(), path, meta)

    @classmethod
    def load(cls, path: str | Path) -> PolicyAgent:
        params, meta = load_params(path)
        agent = cls(meta["state_dim"], RLConfig(**meta["cfg"]), state_scale=np.array(meta["state_scale"]))
        for k, v in agent.params().items():
            v[...] = params[k]
        return agent


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    logps: np.ndarray
    values: np.ndarray
    infos: list[dict]
    train_nodes: list[int]
    train_labels: list[int]
    accepted: list[int]

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for info in self.infos:
                f.write(json.dumps(info) + "\n")


def run_episode(agent: PolicyAgent, env: SelectionEnv, mode: str = "explore", forced_action: int | None = None) -> Trajectory:
    if mode not in ("explore", "greedy"):
        raise ValueError(f"unknown mode {mode!r}")
    s = env.reset()
    states, actions, rewards, logps, values, infos = [], [], [], [], [], []
    done = False
    while not done:
        a, lp, v = agent.act(s, greedy=mode == "greedy")
        if forced_action is not None:
            a = forced_action
            lp = float(np.log(max(agent.probs(s)[0, a], 1e-300)))
        states.append(s)
        s2, r, done, info = env.step(a)
        actions.append(a)
        rewards.append(r)
        logps.append(lp)
        values.append(v)
        infos.append(info)
        s = s2
    st = env.state
    return Trajectory(np.array(states), np.array(actions), np.array(rewards, dtype=float), np.array(logps),
                      np.array(values), infos, list(st.train_nodes), list(st.train_labels), list(st.accepted))


def gae(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for one finished episode (bootstrap value 0)."""
    T = rewards.shape[0]
    adv = np.zeros(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        nxt = values[t + 1] if t + 1 < T else 0.0
        delta = rewards[t] + gamma * nxt - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values


def ppo_loss(agent: PolicyAgent, states, actions, old_logps, advantages, returns, backward: bool = True) -> dict:
    """Clipped surrogate loss with value and entropy terms; fills agent grads."""
    cfg = agent.cfg
    n = states.shape[0]
    x = agent._x(states)
    logits = agent.policy.forward(x)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    rows = np.arange(n)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_logps)
    if not np.all(np.isfinite(ratio)):
        raise NonFiniteError("non-finite probability ratio")
    clipped = np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps)
    unclipped_term = ratio * advantages
    surr = np.minimum(unclipped_term, clipped * advantages)
    entropy = -np.sum(p * logp_all, axis=1)
    v = agent.value.forward(x)[:, 0]
    v_loss = np.mean((v - returns) ** 2)
    loss = -np.mean(surr) + cfg.value_coef * v_loss - cfg.entropy_coef * np.mean(entropy)
    out = {"loss": float(loss), "policy": float(-np.mean(surr)), "value": float(v_loss),
           "entropy": float(np.mean(entropy)), "clip_frac": float(np.mean(np.abs(ratio - 1) > cfg.clip_eps))}
    if not backward:
        return out
    # d surr / d logp is ratio*A where the unclipped branch is the minimum, else 0
    active = unclipped_term <= clipped * advantages
    ds = np.where(active, unclipped_term, 0.0)
    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    d_surr = ds[:, None] * (onehot - p)
    d_ent = -p * (logp_all + entropy[:, None])
    dlogits = (-d_surr - cfg.entropy_coef * d_ent) / n
    dv = (cfg.value_coef * 2.0 * (v - returns) / n)[:, None]
    agent.zero_grad()
    agent.policy.backward(dlogits)
    agent.value.backward(dv)
    return out


def ppo_update(agent: PolicyAgent, trajectories: list[Trajectory]) -> dict:
    if not trajectories:
        raise ValueError("need at least one trajectory")
    cfg = agent.cfg
    adv, ret = zip(*(gae(t.rewards, t.values, cfg.gamma, cfg.gae_lambda) for t in trajectories))
    states = np.concatenate([t.states for t in trajectories])
    actions = np.concatenate([t.actions for t in trajectories])
    old = np.concatenate([t.logps for t in trajectories])
    adv, ret = np.concatenate(adv), np.concatenate(ret)
    n = states.shape[0]
    stats = []
    for _ in range(cfg.ppo_epochs):
        order = agent.rng.permutation(n)
        for i in range(0, n, cfg.minibatch_size):
            idx = order[i:i + cfg.minibatch_size]
            stats.append(ppo_loss(agent, states[idx], actions[idx], old[idx], adv[idx], ret[idx]))
            agent.opt.step(agent.grads())
    return {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}


@dataclass
class Supplement:
    nodes: list[int]
    labels: list[int]
    counts: dict[int, int]
    greedy: Trajectory
    history: list[dict]


def select_supplement(agent: PolicyAgent, env: SelectionEnv, n_episodes: int | None = None,
                      log_dir: str | Path | None = None) -> Supplement:
    """Explore-and-update for ``n_episodes`` episodes, then one greedy rollout."""
    n_episodes = agent.cfg.epochs if n_episodes is None else n_episodes
    history = []
    for ep in range(n_episodes):
        traj = run_episode(agent, env, "explore")
        stats = ppo_update(agent, [traj])
        stats.update(episode=ep, accepted=len(traj.accepted), mean_reward=float(traj.rewards.mean()))
        history.append(stats)
        log.debug("episode %d: accepted %d/%d, mean reward %.3f", ep, len(traj.accepted), len(traj),
                  stats["mean_reward"])
    greedy = run_episode(agent, env, "greedy")
    minority = env.split.minority_classes
    counts = {int(c): 0 for c in minority}
    nodes, labels = [], []
    for i in greedy.accepted:
        cand = env.candidates[i]
        nodes.append(cand.node)
        labels.append(cand.pseudo_label)
        counts[cand.pseudo_label] = counts.get(cand.pseudo_label, 0) + 1
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        greedy.write_jsonl(log_dir / "trajectory.jsonl")
        with open(log_dir / "ppo_history.jsonl", "w") as f:
            for h in history:
                f.write(json.dumps(h) + "\n")
        agent.save(log_dir / "agent")
    return Supplement(nodes, labels, counts, greedy, history)
