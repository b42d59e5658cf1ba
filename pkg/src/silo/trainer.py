"""Rollouts with a sub-goal selector over a goal-conditioned controller, and joint training."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import envs
from .demos import generate_demos, load_demos
from .envs import EnvConfig, is_success
from .exceptions import ConfigurationError, KindMismatchError
from .low_level import (
    EXPLOIT,
    EXPLORE,
    LowTransition,
    SacAgent,
    her_relabel,
    low_buffer,
    sac_update,
    select_action,
    transitions_to_batch,
)
from .meta import (
    MetaAgent,
    MetaTransition,
    RandomSkipSelector,
    SequentialSelector,
    candidate_window,
    ddqn_update,
    meta_buffer,
    meta_reward,
    meta_transitions_to_batch,
)
from .numerics import save_checkpoint

logger = logging.getLogger(__name__)

SELECTORS = ("meta", "sequential", "random_skip")
CONFIG_SECTION = "silo"
# attribute -> key in the config file, where the two differ beyond "_" vs " "
_KEY_OVERRIDES = {"reward_scale": "reward scale (SAC)"}
METRIC_COLUMNS = ("env_step", "episode", "success", "coverage", "coverage_furthest", "mean_subgoals",
                  "train_success", "train_coverage", "critic_loss", "policy_loss", "meta_loss",
                  "epsilon")

DEMO_END = "demo_end"
TIME_LIMIT = "time_limit"


@dataclass
class TrainConfig:
    # environment
    env: str = envs.OBSTACLE_PUSH
    obstacle: bool = True
    reach_limit: float = 0.14
    episode_length: int = 50
    success_threshold: float = 0.02
    # demonstrations
    demo_path: str = ""
    n_demos: int = 20
    demo_seed_start: int = 0
    demo_stride: int = 1
    eval_demo_path: str = ""
    n_eval_demos: int = 100
    eval_demo_seed_start: int = 100_000
    goal_reaching: bool = False
    # hyperparameters; names match the published table
    learning_rate: float = 3e-4
    meta_window: int = 5
    meta_reward_decay: float = 0.99
    gradient_steps: int = 50
    batch_size: int = 256
    discount_factor: float = 0.99
    target_smoothing_coefficient: float = 0.005
    epsilon_decay: float = 0.005
    reward_scale: float = 1.0
    experience_buffer_size: int = 100_000
    # remaining agent settings
    selector: str = "meta"
    her_probability: float = 0.8
    entropy_coefficient: float = 0.05
    random_action_probability: float = 0.3
    epsilon_min: float = 0.05
    hidden_units: int = 128
    input_scale: float = 10.0
    updates: bool = True
    # run control
    env_steps: int = 100_000
    max_episodes: int = 0  # 0 means no episode cap
    eval_interval: int = 10_000  # env steps between metric rows; 0 disables evaluation
    periodic_eval_demos: int = 20
    seed: int = 0
    checkpoint_dir: str = ""

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise ConfigurationError(f"selector must be one of {SELECTORS}, got {self.selector!r}")
        if self.meta_window < 1:
            raise ConfigurationError("meta window must be at least 1")
        if self.env_steps < 0 or self.gradient_steps < 0 or self.batch_size < 1:
            raise ConfigurationError("budgets and batch size must be non-negative")
        if not 0.0 <= self.her_probability <= 1.0:
            raise ConfigurationError("her probability must lie in [0, 1]")
        if not 0.0 <= self.random_action_probability <= 1.0:
            raise ConfigurationError("random action probability must lie in [0, 1]")
        self.env_config()

    def env_config(self):
        return EnvConfig(kind=self.env, obstacle=self.obstacle, reach_limit=self.reach_limit,
                         episode_length=self.episode_length, success_threshold=self.success_threshold,
                         seed=self.seed)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def config_key(name):
    return _KEY_OVERRIDES.get(name, name.replace("_", " "))


def _parser():
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    return parser


def config_to_text(config):
    parser = _parser()
    parser[CONFIG_SECTION] = {config_key(f.name): str(getattr(config, f.name)) for f in fields(config)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(path, config):
    Path(path).write_text(config_to_text(config), encoding="utf-8")


def config_from_text(text):
    parser = _parser()
    parser.read_string(text)
    if CONFIG_SECTION not in parser:
        raise ConfigurationError(f"config has no [{CONFIG_SECTION}] section")
    section = parser[CONFIG_SECTION]
    by_key = {config_key(f.name): f for f in fields(TrainConfig)}
    values = {}
    for key, raw in section.items():
        f = by_key.get(key)
        if f is None:
            raise ConfigurationError(f"unknown config key {key!r}")
        kind = f.type if isinstance(f.type, str) else f.type.__name__
        try:
            if kind == "bool":
                values[f.name] = section.getboolean(key)
            elif kind == "int":
                values[f.name] = int(float(raw)) if "e" in raw.lower() else int(raw)
            elif kind == "float":
                values[f.name] = float(raw)
            else:
                values[f.name] = raw
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key!r}: {exc}") from None
    return TrainConfig(**values)


def load_config(path):
    return config_from_text(Path(path).read_text(encoding="utf-8"))


@dataclass
class RolloutRecord:
    demo_id: int
    T: int
    subgoals: list = field(default_factory=list)
    reached: list = field(default_factory=list)
    low_steps: list = field(default_factory=list)
    meta_rewards: list = field(default_factory=list)
    terminal_cause: str = ""

    @property
    def achieved(self):
        return [g for g, ok in zip(self.subgoals, self.reached) if ok]

    @property
    def env_steps(self):
        return int(sum(self.low_steps))

    @property
    def success(self):
        return bool(self.achieved) and self.achieved[-1] == self.T

    @property
    def episode_return(self):
        return float(sum(self.meta_rewards))


def make_selector(config, obs_dim, seed):
    if config.selector == "meta":
        return MetaAgent(obs_dim, window=config.meta_window, gamma=config.meta_reward_decay,
                         learning_rate=config.learning_rate, tau=config.target_smoothing_coefficient,
                         epsilon_decay=config.epsilon_decay, epsilon_min=config.epsilon_min,
                         hidden=(config.hidden_units,) * 2, input_scale=config.input_scale, seed=seed)
    if config.selector == "sequential":
        return SequentialSelector(config.meta_window)
    return RandomSkipSelector(config.meta_window)


def make_low_agent(config, seed):
    env = config.env_config()
    return SacAgent(env.obs_dim, env.action_dim, learning_rate=config.learning_rate,
                    discount=config.discount_factor, tau=config.target_smoothing_coefficient,
                    entropy_coef=config.entropy_coefficient, reward_scale=config.reward_scale,
                    hidden=(config.hidden_units,) * 2, input_scale=config.input_scale,
                    random_action_probability=config.random_action_probability, seed=seed)


def rollout(selector, low, env_config, demo, mode=EXPLORE, rng=None, seed=0):
    """Run one episode of following ``demo``.

    Returns ``(record, low_transitions, meta_transitions)``.  The episode
    time limit is global; a sub-goal still unreached when it runs out earns
    the selector 0 and ends the episode, and reaching frame ``T`` ends it
    with +1.
    """
    if demo.kind != env_config.kind:
        raise KindMismatchError(f"demonstration is {demo.kind}, environment is {env_config.kind}")
    rng = np.random.default_rng(seed) if rng is None else rng
    state, obs = envs.reset(env_config, seed=seed, block_start=demo.block_start)
    eps = env_config.success_threshold
    window = selector.window
    record = RolloutRecord(demo.demo_id, demo.T)
    lows, metas = [], []
    prev = 0
    while True:
        g = selector.select_subgoal(obs, demo, prev, mode, rng)
        goal = demo.frame_embedding(g)
        start_obs = obs
        steps = 0
        reached = is_success(obs, goal, eps)
        while not reached and not envs.episode_over(env_config, state):
            action = select_action(low, obs, goal, mode, rng)
            state, next_obs = envs.step(env_config, state, action)
            reached = is_success(next_obs, goal, eps)
            lows.append(LowTransition(obs, goal.copy(), action, 0.0 if reached else -1.0, next_obs, reached))
            obs = next_obs
            steps += 1
        reward, terminal = meta_reward(reached, g, demo.T)
        out_of_time = envs.episode_over(env_config, state)
        terminal = terminal or out_of_time
        next_prev = g if reached else prev
        if terminal:
            next_goals = np.zeros((0, 3))
        else:
            next_goals = demo.embeddings[candidate_window(next_prev, demo.T, window) - 1]
        metas.append(MetaTransition(start_obs, demo.demo_id, prev, g, reward, obs, next_prev, terminal,
                                    goal.copy(), next_goals))
        record.subgoals.append(g)
        record.reached.append(reached)
        record.low_steps.append(steps)
        record.meta_rewards.append(reward)
        if terminal:
            record.terminal_cause = DEMO_END if reached and g == demo.T else TIME_LIMIT
            return record, lows, metas
        prev = g


@dataclass
class TrainResult:
    config: TrainConfig
    low: SacAgent
    selector: object
    metrics: list
    records: list
    low_buffer: object
    meta_buffer: object
    env_steps: int
    episodes: int
    n_demos: int


def goal_reaching_demos(demos):
    """Two-frame tasks (start, final frame): plain goal reaching for the low-level controller."""
    from .demos import Demonstration

    return [Demonstration(d.observations[[0, -1]], d.kind, d.goal, demo_id=d.demo_id, seed=d.seed)
            for d in demos]


def resolve_demos(config, train=True):
    path = config.demo_path if train else config.eval_demo_path
    if path:
        demos = load_demos(path, kind=config.env)
    else:
        start = config.demo_seed_start if train else config.eval_demo_seed_start
        n = config.n_demos if train else config.n_eval_demos
        demos = generate_demos(config.env, range(start, start + n), stride=config.demo_stride)
    if not demos:
        raise ConfigurationError("no demonstrations available")
    for d in demos:
        if d.kind != config.env:
            raise KindMismatchError(f"demonstration {d.demo_id} is {d.kind}, config is for {config.env}")
    return goal_reaching_demos(demos) if config.goal_reaching else demos


def _fmt(value):
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_metrics(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in METRIC_COLUMNS])


def _checkpoint(run_dir, tag, config, low, selector, env_steps):
    nets = dict(low.networks())
    opts = dict(low.optimizers())
    if isinstance(selector, MetaAgent):
        nets.update(selector.networks())
        opts.update(selector.optimizers())
    extra = {"config": config_to_text(config), "env_steps": env_steps, "selector": config.selector,
             "epsilon": getattr(selector, "epsilon", None)}
    save_checkpoint(Path(run_dir) / f"{tag}.npz", nets, opts, extra)


def train(config, demos=None, eval_demos=None, on_episode=None):
    """Joint training loop; returns a :class:`TrainResult`.

    Each iteration samples a training demo uniformly, rolls it out with
    exploration, stores relabeled low-level transitions and the selector's
    transitions, then performs ``gradient_steps`` updates per learning agent
    (once its buffer holds a full batch).  Every ``eval_interval`` env steps
    the greedy agents are scored on held-out demos and a metrics row is
    appended.
    """
    from .evaluation import evaluate

    env_cfg = config.env_config()
    demos = resolve_demos(config, train=True) if demos is None else list(demos)
    for d in demos:
        if d.kind != config.env:
            raise KindMismatchError(f"demonstration {d.demo_id} is {d.kind}, config is for {config.env}")
    if eval_demos is None and config.eval_interval > 0:
        eval_demos = resolve_demos(config.replace(n_eval_demos=config.periodic_eval_demos), train=False)

    seeds = np.random.SeedSequence(config.seed).spawn(6)
    low_seed, sel_seed = (int(s.generate_state(1)[0]) for s in seeds[:2])
    rollout_rng, her_rng, update_rng, demo_rng = (np.random.default_rng(s) for s in seeds[2:])

    low = make_low_agent(config, low_seed)
    selector = make_selector(config, env_cfg.obs_dim, sel_seed)
    lbuf = low_buffer(env_cfg.obs_dim, env_cfg.action_dim, config.experience_buffer_size)
    mbuf = meta_buffer(env_cfg.obs_dim, config.meta_window, config.experience_buffer_size)

    run_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        save_config(run_dir / "config.ini", config)
        _checkpoint(run_dir, "initial", config, low, selector, 0)

    metrics, records = [], []
    env_steps = episodes = 0
    next_eval = config.eval_interval
    window_stats = {"success": [], "coverage": [], "critic": [], "policy": [], "meta": []}
    while env_steps < config.env_steps and not (config.max_episodes and episodes >= config.max_episodes):
        demo = demos[int(demo_rng.integers(len(demos)))]
        record, lows, metas = rollout(selector, low, env_cfg, demo, EXPLORE, rollout_rng, seed=episodes)
        records.append(record)
        if lows:
            lbuf.add_episode(transitions_to_batch(her_relabel(lows, her_rng, config.her_probability,
                                                              env_cfg.success_threshold)))
        mbuf.add_episode(meta_transitions_to_batch(metas, config.meta_window))
        env_steps += record.env_steps
        episodes += 1
        window_stats["success"].append(float(record.success))
        window_stats["coverage"].append(len(record.achieved) / record.T)

        if config.updates:
            for _ in range(config.gradient_steps):
                losses = sac_update(low, lbuf, config.batch_size, update_rng)
                if losses is not None:
                    window_stats["critic"].append(0.5 * (losses.critic1 + losses.critic2))
                    window_stats["policy"].append(losses.policy)
                if getattr(selector, "learns", False):
                    meta_loss = ddqn_update(selector, mbuf, config.batch_size, update_rng)
                    if meta_loss is not None:
                        window_stats["meta"].append(meta_loss)
        if isinstance(selector, MetaAgent):
            selector.decay_epsilon()
        if on_episode is not None:
            on_episode(record, episodes, env_steps)

        finished = env_steps >= config.env_steps or episodes == config.max_episodes
        if config.eval_interval > 0 and (env_steps >= next_eval or finished):
            while next_eval <= env_steps:
                next_eval += config.eval_interval
            m = evaluate(selector, low, env_cfg, eval_demos, seed=config.seed)
            mean = lambda xs: float(np.mean(xs)) if xs else None
            metrics.append({"env_step": env_steps, "episode": episodes, "success": m.success_rate,
                            "coverage": m.coverage, "coverage_furthest": m.coverage_furthest,
                            "mean_subgoals": m.mean_subgoals,
                            "train_success": mean(window_stats["success"]),
                            "train_coverage": mean(window_stats["coverage"]),
                            "critic_loss": mean(window_stats["critic"]),
                            "policy_loss": mean(window_stats["policy"]),
                            "meta_loss": mean(window_stats["meta"]),
                            "epsilon": getattr(selector, "epsilon", None)})
            window_stats = {k: [] for k in window_stats}
            logger.info("step %d episode %d success %.3f coverage %.3f", env_steps, episodes,
                        m.success_rate, m.coverage)
            if run_dir is not None:
                _checkpoint(run_dir, f"step_{env_steps:08d}", config, low, selector, env_steps)
                write_metrics(run_dir / "metrics.csv", metrics)

    if run_dir is not None:
        _checkpoint(run_dir, "final", config, low, selector, env_steps)
        write_metrics(run_dir / "metrics.csv", metrics)
    return TrainResult(config, low, selector, metrics, records, lbuf, mbuf, env_steps, episodes, len(demos))


def load_agents(path):
    """Rebuild ``(config, low, selector)`` from a checkpoint written by :func:`train`."""
    from .numerics import load_checkpoint

    networks, optimizers, extra = load_checkpoint(path)
    config = config_from_text(extra["config"])
    env_cfg = config.env_config()
    low = make_low_agent(config, 0)
    low.load({k: v for k, v in networks.items() if not k.startswith("meta_")},
             {k: v for k, v in optimizers.items() if not k.startswith("meta_")})
    selector = make_selector(config, env_cfg.obs_dim, 0)
    if isinstance(selector, MetaAgent):
        selector.load(networks, optimizers)
        if extra.get("epsilon") is not None:
            selector.epsilon = float(extra["epsilon"])
    return config, low, selector
