"""scikit-learn style wrapper: ``fit`` on demonstrations, ``predict``/``score`` by greedy imitation."""
from __future__ import annotations

from os import PathLike

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import envs
from .demos import Demonstration, load_demos
from .evaluation import evaluate
from .exceptions import ConfigurationError, KindMismatchError
from .trainer import TrainConfig, train


def check_demos(X, kind=None):
    """Normalise ``X`` to a non-empty list of same-kind :class:`Demonstration` objects.

    ``X`` may be a path to a demonstration file, a single demonstration or an
    iterable of them.  When ``kind`` is given every demonstration must match it.
    """
    if isinstance(X, (str, PathLike)):
        demos = load_demos(X)
    elif isinstance(X, Demonstration):
        demos = [X]
    else:
        try:
            demos = list(X)
        except TypeError:
            raise ConfigurationError(f"expected demonstrations, got {type(X).__name__}") from None
    if not demos:
        raise ConfigurationError("need at least one demonstration")
    bad = [type(d).__name__ for d in demos if not isinstance(d, Demonstration)]
    if bad:
        raise ConfigurationError(f"expected Demonstration objects, got {bad[0]}")
    kinds = {d.kind for d in demos}
    if len(kinds) > 1:
        raise KindMismatchError(f"mixed demonstration kinds: {sorted(kinds)}")
    if kind is not None and kinds != {kind}:
        raise KindMismatchError(f"demonstrations are {kinds.pop()}, expected {kind}")
    return demos


def check_seed(random_state):
    if isinstance(random_state, (bool, np.bool_)) or not isinstance(random_state, (int, np.integer)):
        raise ConfigurationError(f"random_state must be an int, got {random_state!r}")
    if random_state < 0:
        raise ConfigurationError("random_state must be non-negative")
    return int(random_state)


class SelectiveImitation(BaseEstimator):
    """Learn to follow observation-only demonstrations by choosing which frames to imitate.

    ``fit(X)`` trains the sub-goal selector and the goal-conditioned
    controller on the demonstrations in ``X``.  ``predict(X)`` runs one
    greedy episode per demonstration and returns whether its final frame was
    reached; ``score(X)`` is the success rate over ``X`` and
    :meth:`coverage` the mean fraction of frames achieved.

    Parameters mirror :class:`silo.trainer.TrainConfig`; ``env`` is taken
    from the demonstrations when left as ``None``.
    """

    def __init__(self, env=None, selector="meta", env_steps=100_000, meta_window=5, learning_rate=3e-4,
                 meta_reward_decay=0.99, gradient_steps=50, batch_size=256, discount_factor=0.99,
                 target_smoothing_coefficient=0.005, epsilon_decay=0.005, reward_scale=1.0,
                 experience_buffer_size=100_000, her_probability=0.8, entropy_coefficient=0.05,
                 random_action_probability=0.3,
                 obstacle=True, reach_limit=0.14, episode_length=50, hidden_units=128,
                 random_state=0):
        self.env = env
        self.selector = selector
        self.env_steps = env_steps
        self.meta_window = meta_window
        self.learning_rate = learning_rate
        self.meta_reward_decay = meta_reward_decay
        self.gradient_steps = gradient_steps
        self.batch_size = batch_size
        self.discount_factor = discount_factor
        self.target_smoothing_coefficient = target_smoothing_coefficient
        self.epsilon_decay = epsilon_decay
        self.reward_scale = reward_scale
        self.experience_buffer_size = experience_buffer_size
        self.her_probability = her_probability
        self.entropy_coefficient = entropy_coefficient
        self.random_action_probability = random_action_probability
        self.obstacle = obstacle
        self.reach_limit = reach_limit
        self.episode_length = episode_length
        self.hidden_units = hidden_units
        self.random_state = random_state

    def _config(self, kind, n_demos):
        params = self.get_params()
        params["seed"] = check_seed(params.pop("random_state"))
        params["env"] = kind
        # evaluation during fit is left to the caller
        return TrainConfig(**params, eval_interval=0, n_demos=n_demos)

    def fit(self, X, y=None):
        kind = self.env
        if kind is not None and kind not in envs.KINDS:
            raise ConfigurationError(f"unknown environment kind {kind!r}")
        demos = check_demos(X, kind)
        kind = demos[0].kind
        config = self._config(kind, len(demos))
        result = train(config, demos=demos)
        self.config_ = config
        self.low_ = result.low
        self.selector_ = result.selector
        self.n_demos_ = len(demos)
        self.env_steps_ = result.env_steps
        self.kind_ = kind
        return self

    def predict(self, X):
        """Per-demonstration success (final frame reached) of one greedy episode."""
        return np.array([r.success for r in self.evaluate(X).records], dtype=bool)

    def evaluate(self, X):
        check_is_fitted(self, "low_")
        demos = check_demos(X, self.kind_)
        return evaluate(self.selector_, self.low_, self.config_.env_config(), demos, seed=self.config_.seed)

    def score(self, X, y=None):
        return self.evaluate(X).success_rate

    def coverage(self, X):
        return self.evaluate(X).coverage_count
