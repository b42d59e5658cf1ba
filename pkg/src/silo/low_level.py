"""Goal-conditioned soft actor-critic with twin critics and hindsight relabeling.

The policy and both critics see :func:`goal_features` of the observation and
goal multiplied by a fixed ``input_scale`` (raw coordinates are a few
centimeters); the critics additionally take the action.  Rewards are -1 per step and 0 on the
step that reaches the goal, which also ends the goal segment (``done``).
Running out of episode time is not terminal for bootstrapping.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .buffers import EpisodeReplayBuffer
from .envs import gripper_position, is_success
from .demos import embed
from .numerics import (
    HIDDEN_UNITS,
    AdamState,
    GaussianHead,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    soft_update,
    squashed_sample,
    squashed_sample_grads,
)

GOAL_DIM = 3
EXPLORE = "explore"
EXPLOIT = "exploit"


@dataclass
class LowTransition:
    obs: np.ndarray
    goal: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class SacLosses:
    critic1: float
    critic2: float
    policy: float
    entropy: float
    mean_q: float


def goal_features(obs, goal):
    """``[obs | goal | goal - block | block - gripper]``, broadcasting ``obs`` over leading goal axes.

    The two difference vectors are functions of the inputs already present;
    handing them to the networks directly makes "push the block toward the
    goal" and "move to the block" linear in the input.
    """
    goal = np.asarray(goal, dtype=np.float64)
    obs = np.broadcast_to(np.asarray(obs, dtype=np.float64), goal.shape[:-1] + np.shape(obs)[-1:])
    block = embed(obs)
    grip = gripper_position(obs)
    return np.concatenate([obs, goal, goal - block, block[..., :grip.shape[-1]] - grip], axis=-1)


def feature_dim(obs_dim):
    return goal_features(np.zeros(obs_dim), np.zeros(GOAL_DIM)).shape[-1]


def low_buffer(obs_dim, action_dim, capacity=100_000):
    return EpisodeReplayBuffer({"obs": (obs_dim,), "goal": (GOAL_DIM,), "action": (action_dim,),
                                "reward": (), "next_obs": (obs_dim,), "done": ()}, capacity)


def transitions_to_batch(transitions):
    return {"obs": np.array([t.obs for t in transitions]),
            "goal": np.array([t.goal for t in transitions]),
            "action": np.array([t.action for t in transitions]),
            "reward": np.array([t.reward for t in transitions], dtype=np.float64),
            "next_obs": np.array([t.next_obs for t in transitions]),
            "done": np.array([t.done for t in transitions], dtype=np.float64)}


class SacAgent:
    def __init__(self, obs_dim, action_dim, *, learning_rate=3e-4, discount=0.99, tau=0.005,
                 entropy_coef=0.05, reward_scale=1.0, hidden=HIDDEN_UNITS, input_scale=10.0,
                 random_action_probability=0.0, seed=0):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.discount = discount
        self.tau = tau
        self.entropy_coef = entropy_coef
        self.reward_scale = reward_scale
        self.input_scale = input_scale
        self.random_action_probability = random_action_probability
        self.rng = np.random.default_rng(seed)
        in_dim = feature_dim(obs_dim)
        self.policy = init_mlp(in_dim, 2 * action_dim, self.rng, hidden)
        self.q1 = init_mlp(in_dim + action_dim, 1, self.rng, hidden)
        self.q2 = init_mlp(in_dim + action_dim, 1, self.rng, hidden)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.policy_opt = AdamState.for_params(self.policy, lr=learning_rate)
        self.q1_opt = AdamState.for_params(self.q1, lr=learning_rate)
        self.q2_opt = AdamState.for_params(self.q2, lr=learning_rate)
        self.updates = 0

    def inputs(self, obs, goal):
        return goal_features(obs, goal) * self.input_scale

    def head(self, obs, goal):
        return GaussianHead.from_output(mlp_forward(self.policy, self.inputs(obs, goal)))

    def networks(self):
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    def optimizers(self):
        return {"policy": self.policy_opt, "q1": self.q1_opt, "q2": self.q2_opt}

    def load(self, networks, optimizers=None):
        for name, params in networks.items():
            setattr(self, name, params.copy())
        for name, opt in (optimizers or {}).items():
            setattr(self, f"{name}_opt", opt)


def select_action(agent, obs, goal, mode=EXPLOIT, rng=None):
    """``tanh(mean)`` when exploiting.  When exploring, a uniform random action with
    probability ``agent.random_action_probability``, otherwise a squashed Gaussian sample."""
    head = agent.head(obs, goal)
    if mode == EXPLOIT:
        return np.tanh(head.mean)
    rng = agent.rng if rng is None else rng
    if agent.random_action_probability > 0 and rng.uniform() < agent.random_action_probability:
        return rng.uniform(-1.0, 1.0, head.mean.shape)
    s = squashed_sample(head, rng.standard_normal(head.mean.shape))
    return np.clip(s.action, -np.nextafter(1.0, 0.0), np.nextafter(1.0, 0.0))


def her_relabel(episode, rng, p=0.8, threshold=0.02):
    """Emit each transition once; with probability ``p`` its goal becomes a future achieved state.

    The replacement goal is ``embed(o_k)`` for ``k`` drawn uniformly from the
    observations after ``o_t`` in the same episode, and reward/done are
    recomputed against it.
    """
    episode = list(episode)
    achieved = [embed(t.next_obs) for t in episode]
    out = []
    for t, tr in enumerate(episode):
        if rng.uniform() < p:
            goal = achieved[int(rng.integers(t, len(episode)))].copy()
            reached = is_success(tr.next_obs, goal, threshold)
            out.append(LowTransition(tr.obs, goal, tr.action, 0.0 if reached else -1.0,
                                     tr.next_obs, reached))
        else:
            out.append(tr)
    return out


def critic_target(agent, reward, done, next_q1, next_q2, next_log_prob):
    """``r + discount * (1 - done) * (min(Q1', Q2') - alpha * log pi)``."""
    soft_v = np.minimum(next_q1, next_q2) - agent.entropy_coef * next_log_prob
    return agent.reward_scale * reward + agent.discount * (1.0 - done) * soft_v


def critic_objective(params, xa, y):
    """``(0.5 * mean((Q(xa) - y)**2), gradient)`` with ``y`` held fixed."""
    q, cache = mlp_forward_cached(params, xa)
    err = q[:, 0] - y
    grads, _ = mlp_backward(params, xa, (err / len(y))[:, None], cache)
    return 0.5 * float(np.mean(err ** 2)), grads


def policy_objective(agent, x, noise):
    """Reparameterized policy loss ``mean(alpha * log pi(a|x) - min(Q1, Q2)(x, a))`` and its gradient.

    ``noise`` fixes the Gaussian draws, so the loss is a deterministic
    function of the policy parameters.  Returns ``(loss, grads, sample, q_min)``.
    """
    n = len(x)
    out, pcache = mlp_forward_cached(agent.policy, x)
    head = GaussianHead.from_output(out)
    cur = squashed_sample(head, noise)
    xa_pi = np.concatenate([x, cur.action], axis=1)
    q1_pi, c1 = mlp_forward_cached(agent.q1, xa_pi)
    q2_pi, c2 = mlp_forward_cached(agent.q2, xa_pi)
    use_q1 = q1_pi[:, 0] <= q2_pi[:, 0]
    q_min = np.where(use_q1, q1_pi[:, 0], q2_pi[:, 0])
    alpha = agent.entropy_coef
    loss = float(np.mean(alpha * cur.log_prob - q_min))
    # d(-mean min Q)/da, routed through whichever critic was smaller per sample
    up1 = np.where(use_q1, -1.0 / n, 0.0)[:, None]
    up2 = np.where(use_q1, 0.0, -1.0 / n)[:, None]
    _, gx1 = mlp_backward(agent.q1, xa_pi, up1, c1, param_grads=False)
    _, gx2 = mlp_backward(agent.q2, xa_pi, up2, c2, param_grads=False)
    d = agent.action_dim
    grad_action = gx1[:, -d:] + gx2[:, -d:]
    d_mean, d_log_std = squashed_sample_grads(head, cur, grad_action, np.full(n, alpha / n))
    grads, _ = mlp_backward(agent.policy, x, np.concatenate([d_mean, d_log_std], axis=1), pcache)
    return loss, grads, cur, q_min


def sac_update(agent, buffer, batch_size=256, rng=None):
    """One critic step per critic, one policy step, then Polyak target averaging.

    Returns ``None`` (and changes nothing) while the buffer holds fewer than
    ``batch_size`` transitions.
    """
    if len(buffer) < batch_size:
        return None
    rng = agent.rng if rng is None else rng
    b = buffer.sample(batch_size, rng)
    n = batch_size
    x = agent.inputs(b["obs"], b["goal"])
    x_next = agent.inputs(b["next_obs"], b["goal"])

    next_head = GaussianHead.from_output(mlp_forward(agent.policy, x_next))
    nxt = squashed_sample(next_head, rng.standard_normal(next_head.mean.shape))
    xa_next = np.concatenate([x_next, nxt.action], axis=1)
    q1_next = mlp_forward(agent.q1_target, xa_next)[:, 0]
    q2_next = mlp_forward(agent.q2_target, xa_next)[:, 0]
    y = critic_target(agent, b["reward"], b["done"], q1_next, q2_next, nxt.log_prob)

    xa = np.concatenate([x, b["action"]], axis=1)
    critic_losses = []
    for name in ("q1", "q2"):
        params = getattr(agent, name)
        loss, grads = critic_objective(params, xa, y)
        critic_losses.append(loss)
        params, opt = adam_step(getattr(agent, f"{name}_opt"), params, grads)
        setattr(agent, name, params)
        setattr(agent, f"{name}_opt", opt)

    policy_loss, pgrads, cur, q_min = policy_objective(agent, x, rng.standard_normal((n, agent.action_dim)))
    agent.policy, agent.policy_opt = adam_step(agent.policy_opt, agent.policy, pgrads)

    agent.q1_target = soft_update(agent.q1_target, agent.q1, agent.tau)
    agent.q2_target = soft_update(agent.q2_target, agent.q2, agent.tau)
    agent.updates += 1
    return SacLosses(critic_losses[0], critic_losses[1], policy_loss,
                     float(-np.mean(cur.log_prob)), float(np.mean(q_min)))
