"""Observation-only demonstrations: scripted demonstrators, embedding, and the JSONL demo file.

Demonstrators act in the *unconstrained* environment (no obstacle, no reach
limit) and only their observations are kept.  A frame is recorded whenever
the block moves, so consecutive frames are one demonstrator step apart in
block space and never farther than the per-step cap.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import envs
from .envs import OBSTACLE_PUSH, PICK_AND_PLACE, EnvConfig, block_position
from .exceptions import ConfigurationError, DemoParseError, KindMismatchError

DEMO_FORMAT_VERSION = "silo-demo-v1"
DEMO_FIELDS = ("version", "id", "kind", "seed", "stride", "T", "goal", "observations")
_MAX_DEMO_STEPS = 400


def embed(obs):
    """Task embedding of an observation: the block's (x, y, z) position."""
    return block_position(obs)


def embedding_distance(a, b):
    return float(np.linalg.norm(embed(a) - embed(b)))


@dataclass
class Demonstration:
    observations: np.ndarray
    kind: str
    goal: np.ndarray
    demo_id: int = 0
    seed: int | None = None
    stride: int = 1
    _embeddings: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.goal = np.asarray(self.goal, dtype=np.float64)
        if self.kind not in envs.KINDS:
            raise ConfigurationError(f"unknown environment kind {self.kind!r}")
        if self.observations.ndim != 2 or self.observations.shape[1] != envs.OBS_WIDTH[self.kind]:
            raise ConfigurationError(f"{self.kind} demonstrations need observations of width "
                                     f"{envs.OBS_WIDTH[self.kind]}, got {self.observations.shape}")
        if len(self.observations) < 2:
            raise ConfigurationError("a demonstration needs at least two frames")
        self._embeddings = embed(self.observations)

    @property
    def T(self):
        return len(self.observations)

    @property
    def embeddings(self):
        return self._embeddings

    @property
    def block_start(self):
        return self._embeddings[0, :2].copy()

    def frame(self, index):
        """Observation ``o_index`` with the 1-based indexing of ``o_1 .. o_T``."""
        if not 1 <= index <= self.T:
            raise IndexError(f"frame {index} outside 1..{self.T}")
        return self.observations[index - 1]

    def frame_embedding(self, index):
        if not 1 <= index <= self.T:
            raise IndexError(f"frame {index} outside 1..{self.T}")
        return self._embeddings[index - 1]

    def __eq__(self, other):
        if not isinstance(other, Demonstration):
            return NotImplemented
        return (self.kind == other.kind and self.demo_id == other.demo_id and self.seed == other.seed
                and self.stride == other.stride
                and np.array_equal(self.observations, other.observations)
                and np.array_equal(self.goal, other.goal))


# -- scripted demonstrators ---------------------------------------------------

def _wrap(angle):
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _push_action(config, state, target):
    """Proportional pushing controller: orbit to the far side of the block, then push."""
    b = state.block[:2]
    g = state.gripper
    to = target - b
    dist = float(np.hypot(*to))
    d = to / dist
    contact = envs.BLOCK_RADIUS + envs.GRIPPER_RADIUS
    orbit = contact + 0.006
    rel = g - b
    ang_g = math.atan2(rel[1], rel[0])
    ang_pose = math.atan2(-d[1], -d[0])
    diff = _wrap(ang_pose - ang_g)
    if abs(diff) > 0.3:
        max_turn = 0.9 * config.max_step / orbit
        ang = ang_g + float(np.clip(diff, -max_turn, max_turn))
        move = b + orbit * np.array([math.cos(ang), math.sin(ang)]) - g
    else:
        move = (b - d * contact - g) + d * min(config.max_step, dist)
    norm = float(np.hypot(*move))
    if norm > config.max_step:
        move = move * (config.max_step / norm)
    return move / config.max_step


def _run_controller(config, state, obs, controller, done):
    frames = [obs]
    last = envs.block_position(obs).copy()
    for _ in range(_MAX_DEMO_STEPS):
        if done(state):
            break
        state, obs = envs.step(config, state, controller(state))
        pos = envs.block_position(obs)
        if np.linalg.norm(pos - last) > 1e-9:
            frames.append(obs)
            last = pos.copy()
    else:
        raise AssertionError("scripted demonstrator did not finish")
    return state, np.array(frames)


def _push_demo(config, seed):
    state, obs = envs.reset(config, seed)
    x0, y0 = state.block[:2]
    clear_x = x0 + config.obstacle_offset + config.obstacle_size / 2 + envs.BLOCK_RADIUS + 0.01
    frames = [obs[None, :]]
    for target in (np.array([clear_x, y0]), state.goal[:2]):
        state, seg = _run_controller(
            config, state, obs,
            lambda s, target=target: _push_action(config, s, target),
            lambda s, target=target: np.hypot(*(s.block[:2] - target)) < 1e-3)
        frames.append(seg[1:])
        obs = seg[-1]
    return np.concatenate(frames), state.goal


def _pick_demo(config, seed):
    state, obs = envs.reset(config, seed)

    def carry_to(target):
        def act(s):
            move = np.clip((target - s.gripper) / config.max_step, -1.0, 1.0)
            norm = np.linalg.norm(move)
            if norm > 1.0:
                move = move / norm
            return np.append(move, 1.0)
        return act

    def grasp(s):
        move = np.clip((s.block - s.gripper) / config.max_step, -1.0, 1.0)
        return np.append(move, 1.0)

    frames = [obs[None, :]]
    state, seg = _run_controller(config, state, obs, grasp, lambda s: s.latched)
    frames.append(seg[1:])
    obs = seg[-1]
    for target in state.waypoints:
        state, seg = _run_controller(config, state, obs, carry_to(target),
                                     lambda s, target=target: np.linalg.norm(s.gripper - target) < 1e-3)
        frames.append(seg[1:])
        obs = seg[-1]
    return np.concatenate(frames), state.goal


def generate_demo(kind, seed, demo_id=None, stride=1, config=None):
    """Script one demonstration in the unconstrained version of ``kind``.

    ``stride > 1`` keeps every ``stride``-th frame (plus the last) to make the
    demonstrator move faster than the learner.
    """
    base = config if config is not None else EnvConfig(kind=kind)
    if base.kind != kind:
        raise KindMismatchError(f"config is for {base.kind}, asked for {kind}")
    cfg = base.unconstrained(episode_length=_MAX_DEMO_STEPS)
    if kind == OBSTACLE_PUSH:
        obs, goal = _push_demo(cfg, seed)
    else:
        obs, goal = _pick_demo(cfg, seed)
    if stride > 1:
        keep = list(range(0, len(obs), stride))
        if keep[-1] != len(obs) - 1:
            keep.append(len(obs) - 1)
        obs = obs[keep]
    return Demonstration(obs, kind, goal, demo_id=seed if demo_id is None else demo_id,
                         seed=seed, stride=stride)


def generate_demos(kind, seeds, stride=1, config=None):
    return [generate_demo(kind, int(s), stride=stride, config=config) for s in seeds]


def unreachable_frames(demo, config):
    """1-based indices of frames the constrained learner cannot bring within the success radius."""
    eps = config.success_threshold
    bad = []
    for k, e in enumerate(demo.embeddings, start=1):
        if demo.kind == OBSTACLE_PUSH:
            if not config.has_obstacle:
                continue
            center = demo.block_start + np.array([config.obstacle_offset, 0.0])
            half = config.obstacle_size / 2 + envs.BLOCK_RADIUS
            d = np.abs(e[:2] - center)
            # distance from inside the inflated square to its boundary
            if np.all(d < half) and float(np.min(half - d)) >= eps:
                bad.append(k)
        else:
            if config.reach is not None and abs(e[0]) - config.reach >= eps:
                bad.append(k)
    return bad


def longest_unreachable_run(demo, config):
    bad = unreachable_frames(demo, config)
    best = run = 0
    prev = None
    for k in bad:
        run = run + 1 if prev is not None and k == prev + 1 else 1
        best = max(best, run)
        prev = k
    return best


# -- persistence ----------------------------------------------------------------

def _to_record(demo):
    return {"version": DEMO_FORMAT_VERSION, "id": demo.demo_id, "kind": demo.kind,
            "seed": demo.seed, "stride": demo.stride, "T": demo.T,
            "goal": [float(v) for v in demo.goal],
            "observations": [[float(v) for v in row] for row in demo.observations]}


def save_demos(path, demos):
    """One JSON object per line, keys in ``DEMO_FIELDS`` order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for demo in demos:
            fh.write(json.dumps(_to_record(demo)) + "\n")


def load_demos(path, kind=None):
    demos = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DemoParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict) or rec.get("version") != DEMO_FORMAT_VERSION:
                raise DemoParseError(f"expected a {DEMO_FORMAT_VERSION} record", lineno)
            missing = [k for k in DEMO_FIELDS if k not in rec]
            if missing:
                raise DemoParseError(f"missing fields {missing}", lineno)
            try:
                demo = Demonstration(np.array(rec["observations"], dtype=np.float64), rec["kind"],
                                     np.array(rec["goal"], dtype=np.float64), demo_id=rec["id"],
                                     seed=rec["seed"], stride=rec["stride"])
            except (ConfigurationError, ValueError, TypeError) as exc:
                raise DemoParseError(str(exc), lineno) from None
            if demo.T != rec["T"]:
                raise DemoParseError(f"T={rec['T']} but {demo.T} observations", lineno)
            if kind is not None and demo.kind != kind:
                raise KindMismatchError(f"line {lineno}: demonstration is {demo.kind}, expected {kind}")
            demos.append(demo)
    return demos
