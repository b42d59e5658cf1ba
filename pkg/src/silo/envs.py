"""Seeded kinematic tabletop environments: ObstaclePush and PickAndPlace.

Geometry (meters, table centred at the origin):

* the block is a disc of radius 0.02 whose centre rests at z = 0.02;
* in ObstaclePush the gripper is a disc of radius 0.01 at block height and
  moves in the plane only.  A gripper that overlaps the block after its
  move pushes the block along the separation normal until the two discs
  just touch.  The obstacle is an axis-aligned 0.04 x 0.04 square; block
  and gripper centres are kept outside the square inflated by their radius
  (minimum-penetration projection), so the block centre can never enter
  the obstacle footprint;
* in PickAndPlace the gripper moves in 3-D.  Closing the gripper (grip
  action > 0) within 0.03 of the block centre latches the block, which then
  sits at the gripper position; opening drops it back onto the table.  The
  learner's gripper is clamped to ``|x| <= reach_limit``.

Nothing rotates: the block yaw is carried in the observation and stays at
its reset value.

Observation layouts (fixed widths):

* ObstaclePush (8): gripper x, y | gripper vx, vy | block x, y, z | block yaw
* PickAndPlace (11): gripper x, y, z | gripper vx, vy, vz | grip | block x, y, z | block yaw
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigurationError, ProtocolError

OBSTACLE_PUSH = "obstacle_push"
PICK_AND_PLACE = "pick_and_place"
KINDS = (OBSTACLE_PUSH, PICK_AND_PLACE)

BLOCK_RADIUS = 0.02
BLOCK_REST_Z = 0.02
GRIPPER_RADIUS = 0.01
GRIPPER_START_GAP = 0.01
GRIPPER_START_HEIGHT = 0.04
GRIPPER_MAX_Z = 0.30
LATCH_RADIUS = 0.03
TABLE_HALF_X = 0.45
TABLE_HALF_Y = 0.30
START_RADIUS = 0.02
GOAL_CENTER = (0.25, 0.0)
GOAL_RADIUS = 0.1

OBS_WIDTH = {OBSTACLE_PUSH: 8, PICK_AND_PLACE: 11}
ACTION_WIDTH = {OBSTACLE_PUSH: 2, PICK_AND_PLACE: 4}
_BLOCK_SLICE = {OBSTACLE_PUSH: slice(4, 7), PICK_AND_PLACE: slice(7, 10)}
_GRIPPER_SLICE = {OBSTACLE_PUSH: slice(0, 2), PICK_AND_PLACE: slice(0, 3)}
_KIND_BY_WIDTH = {w: k for k, w in OBS_WIDTH.items()}


@dataclass(frozen=True)
class EnvConfig:
    kind: str = OBSTACLE_PUSH
    obstacle: bool = True
    obstacle_size: float = 0.04
    obstacle_offset: float = 0.16
    reach_limit: float | None = 0.14
    episode_length: int = 50
    dt: float = 0.1
    success_threshold: float = 0.02
    max_step: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown environment kind {self.kind!r}")
        if not self.success_threshold > 0:
            raise ConfigurationError("success threshold must be positive")
        if self.episode_length < 1:
            raise ConfigurationError("episode length must be at least 1")
        if self.max_step <= 0 or self.dt <= 0:
            raise ConfigurationError("max_step and dt must be positive")

    @property
    def obs_dim(self):
        return OBS_WIDTH[self.kind]

    @property
    def action_dim(self):
        return ACTION_WIDTH[self.kind]

    @property
    def has_obstacle(self):
        return self.kind == OBSTACLE_PUSH and self.obstacle

    @property
    def reach(self):
        return self.reach_limit if self.kind == PICK_AND_PLACE else None

    def unconstrained(self, episode_length=400):
        """The demonstrator's view of the same task: no obstacle, no reach limit."""
        return replace(self, obstacle=False, reach_limit=None, episode_length=episode_length)


@dataclass
class EnvState:
    gripper: np.ndarray
    gripper_vel: np.ndarray
    grip: float
    latched: bool
    block: np.ndarray
    block_yaw: float
    obstacle: np.ndarray | None
    goal: np.ndarray
    waypoints: np.ndarray
    t: int = 0
    rng_state: dict = field(default_factory=dict)

    def copy(self):
        return EnvState(self.gripper.copy(), self.gripper_vel.copy(), self.grip, self.latched,
                        self.block.copy(), self.block_yaw,
                        None if self.obstacle is None else self.obstacle.copy(),
                        self.goal.copy(), self.waypoints.copy(), self.t, _deep_copy(self.rng_state))

    def to_dict(self):
        arr = lambda a: None if a is None else [float(v) for v in np.ravel(a)]
        return {"gripper": arr(self.gripper), "gripper_vel": arr(self.gripper_vel),
                "grip": float(self.grip), "latched": bool(self.latched), "block": arr(self.block),
                "block_yaw": float(self.block_yaw), "obstacle": arr(self.obstacle),
                "goal": arr(self.goal), "waypoints": [arr(w) for w in self.waypoints],
                "t": int(self.t), "rng_state": _deep_copy(self.rng_state)}

    @classmethod
    def from_dict(cls, d):
        vec = lambda v: None if v is None else np.array(v, dtype=np.float64)
        waypoints = np.array(d["waypoints"], dtype=np.float64).reshape(-1, 3)
        return cls(vec(d["gripper"]), vec(d["gripper_vel"]), d["grip"], d["latched"], vec(d["block"]),
                   d["block_yaw"], vec(d["obstacle"]), vec(d["goal"]), waypoints, d["t"],
                   _deep_copy(d["rng_state"]))


def _deep_copy(obj):
    if isinstance(obj, dict):
        return {k: _deep_copy(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_deep_copy(v) for v in obj]
    return obj


def observe(config, state):
    if config.kind == OBSTACLE_PUSH:
        parts = (state.gripper, state.gripper_vel, state.block, [state.block_yaw])
    else:
        parts = (state.gripper, state.gripper_vel, [state.grip], state.block, [state.block_yaw])
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


def kind_of(obs):
    """Environment kind that produces observations as wide as ``obs``."""
    width = np.shape(obs)[-1]
    kind = _KIND_BY_WIDTH.get(width)
    if kind is None:
        raise ConfigurationError(f"no environment produces observations of width {width}")
    return kind


def block_position(obs):
    """Block (x, y, z) slice of an observation; works on batches along the last axis."""
    obs = np.asarray(obs, dtype=np.float64)
    return obs[..., _BLOCK_SLICE[kind_of(obs)]]


def gripper_position(obs):
    """Gripper (x, y) for pushing, (x, y, z) for pick-and-place."""
    obs = np.asarray(obs, dtype=np.float64)
    return obs[..., _GRIPPER_SLICE[kind_of(obs)]]


def is_success(current, goal, threshold=0.02):
    """True iff the block positions of ``current`` and ``goal`` are closer than ``threshold``.

    ``goal`` may be a full observation or an already-embedded (x, y, z).
    """
    a = block_position(current)
    goal = np.asarray(goal, dtype=np.float64)
    b = goal if goal.shape[-1] == 3 else block_position(goal)
    return bool(np.linalg.norm(a - b) < threshold)


def sample_push_goal(rng, block_start, config):
    """Goal uniform in a 0.1 m disc around (0.25, 0), kept beyond the obstacle zone."""
    min_x = (block_start[0] + config.obstacle_offset + config.obstacle_size / 2
             + BLOCK_RADIUS + 0.03)
    for _ in range(100):
        r = GOAL_RADIUS * np.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * np.pi)
        goal = np.array([GOAL_CENTER[0] + r * np.cos(phi), GOAL_CENTER[1] + r * np.sin(phi)])
        if goal[0] >= min_x:
            break
    else:
        # the block starts too far forward for the disc; slide the last draw past the obstacle
        goal[0] = min(min_x, TABLE_HALF_X - BLOCK_RADIUS)
    return np.array([goal[0], goal[1], BLOCK_REST_Z])


def sample_pick_milestones(rng):
    """C-shape milestones: far to one side (|x| > 0.14) then back to the centre strip."""
    side = 1.0 if rng.uniform() < 0.5 else -1.0
    first = np.array([side * rng.uniform(0.165, 0.185), rng.uniform(0.04, 0.08), rng.uniform(0.06, 0.07)])
    second = np.array([rng.uniform(-0.05, 0.05), rng.uniform(0.14, 0.18), rng.uniform(0.06, 0.07)])
    return np.stack([first, second])


def reset(config, seed=None, block_start=None):
    """Start an episode; returns ``(state, observation)``.

    ``block_start`` pins the block's initial (x, y) so a learner can be
    placed in the same situation as a demonstration.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    if config.kind == OBSTACLE_PUSH:
        if block_start is None:
            r = START_RADIUS * np.sqrt(rng.uniform())
            phi = rng.uniform(0.0, 2.0 * np.pi)
            xy = np.array([r * np.cos(phi), r * np.sin(phi)])
        else:
            xy = np.asarray(block_start, dtype=np.float64)[:2].copy()
        block = np.array([xy[0], xy[1], BLOCK_REST_Z])
        gripper = xy - np.array([BLOCK_RADIUS + GRIPPER_RADIUS + GRIPPER_START_GAP, 0.0])
        obstacle = xy + np.array([config.obstacle_offset, 0.0]) if config.has_obstacle else None
        goal = sample_push_goal(rng, xy, config)
        waypoints = goal[None, :].copy()
        vel = np.zeros(2)
    else:
        xy = np.zeros(2) if block_start is None else np.asarray(block_start, dtype=np.float64)[:2].copy()
        block = np.array([xy[0], xy[1], BLOCK_REST_Z])
        gripper = block + np.array([0.0, 0.0, GRIPPER_START_HEIGHT])
        obstacle = None
        waypoints = sample_pick_milestones(rng)
        goal = waypoints[-1].copy()
        vel = np.zeros(3)
    state = EnvState(gripper, vel, 0.0, False, block, 0.0, obstacle, goal, waypoints, 0,
                     rng.bit_generator.state)
    return state, observe(config, state)


def _push_out_of_box(p, center, half):
    """Project ``p`` onto the boundary of the square if strictly inside it."""
    d = p - center
    pen = half - np.abs(d)
    if np.all(pen > 0):
        axis = int(np.argmin(pen))
        p = p.copy()
        p[axis] = center[axis] + np.copysign(half, d[axis] if d[axis] != 0 else 1.0)
    return p


def _clip_table(p, margin):
    return np.clip(p, [-TABLE_HALF_X + margin, -TABLE_HALF_Y + margin],
                   [TABLE_HALF_X - margin, TABLE_HALF_Y - margin])


def _step_push(config, s, action):
    delta = config.max_step * action[:2]
    g = _clip_table(s.gripper + delta, GRIPPER_RADIUS)
    half = config.obstacle_size / 2
    if s.obstacle is not None:
        g = _push_out_of_box(g, s.obstacle, half + GRIPPER_RADIUS)
    b = s.block[:2]
    reach = BLOCK_RADIUS + GRIPPER_RADIUS
    sep = b - g
    dist = float(np.hypot(*sep))
    if dist < reach:
        if dist > 1e-12:
            normal = sep / dist
        else:
            norm = float(np.hypot(*delta))
            normal = delta / norm if norm > 0 else np.array([1.0, 0.0])
        b = _clip_table(g + normal * reach, BLOCK_RADIUS)
        if s.obstacle is not None:
            b = _push_out_of_box(b, s.obstacle, half + BLOCK_RADIUS)
        back = g - b
        back_dist = float(np.hypot(*back))
        if back_dist < reach:
            g = b + (back / back_dist if back_dist > 1e-12 else -normal) * reach
            g = _clip_table(g, GRIPPER_RADIUS)
    s.gripper_vel = (g - s.gripper) / config.dt
    s.gripper = g
    s.block = np.array([b[0], b[1], BLOCK_REST_Z])


def _step_pick(config, s, action):
    g = s.gripper + config.max_step * action[:3]
    lo = np.array([-TABLE_HALF_X, -TABLE_HALF_Y, BLOCK_REST_Z])
    hi = np.array([TABLE_HALF_X, TABLE_HALF_Y, GRIPPER_MAX_Z])
    if config.reach is not None:
        lo[0] = max(lo[0], -config.reach)
        hi[0] = min(hi[0], config.reach)
    g = np.clip(g, lo, hi)
    closed = bool(action[3] > 0.0)
    if s.latched and not closed:
        s.latched = False
        s.block = np.array([s.block[0], s.block[1], BLOCK_REST_Z])
    if closed and not s.latched and np.linalg.norm(g - s.block) < LATCH_RADIUS:
        s.latched = True
    if s.latched:
        s.block = g.copy()
    s.grip = 1.0 if closed else 0.0
    s.gripper_vel = (g - s.gripper) / config.dt
    s.gripper = g


def step(config, state, action):
    """Advance one control step; returns a new ``(state, observation)``."""
    if state.t >= config.episode_length:
        raise ProtocolError(f"episode already ended after {state.t} steps")
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (config.action_dim,):
        raise ConfigurationError(f"{config.kind} expects an action of width {config.action_dim}, "
                                 f"got shape {action.shape}")
    if not np.all(np.isfinite(action)):
        raise ConfigurationError("action must be finite")
    action = np.clip(action, -1.0, 1.0)
    s = state.copy()
    if config.kind == OBSTACLE_PUSH:
        _step_push(config, s, action)
    else:
        _step_pick(config, s, action)
    s.t += 1
    return s, observe(config, s)


def episode_over(config, state):
    return state.t >= config.episode_length


def in_obstacle(config, state_or_block, obstacle=None):
    """Whether a block centre lies inside the (uninflated) obstacle footprint."""
    if isinstance(state_or_block, EnvState):
        block, obstacle = state_or_block.block, state_or_block.obstacle
    else:
        block = np.asarray(state_or_block, dtype=np.float64)
    if obstacle is None:
        return False
    return bool(np.all(np.abs(block[:2] - obstacle) < config.obstacle_size / 2))
