import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from silo import envs
from silo.demos import Demonstration, generate_demo
from silo.exceptions import ProtocolError
from silo.meta import (
    MetaAgent,
    MetaTransition,
    RandomSkipSelector,
    SequentialSelector,
    candidate_window,
    ddqn_targets,
    ddqn_update,
    discounted_argmax,
    meta_buffer,
    meta_reward,
    meta_transitions_to_batch,
    select_subgoal,
)
from silo.low_level import EXPLOIT, EXPLORE

OBS = 8


class TableAgent(MetaAgent):
    """Meta agent whose Q-values come from a lookup keyed on the frame's x coordinate."""

    def __init__(self, table, **kw):
        super().__init__(OBS, hidden=(4, 4), **kw)
        self.table = table

    def q_values(self, obs, goals, params=None):
        goals = np.asarray(goals)
        return np.vectorize(lambda x: self.table[int(round(x))])(goals[..., 0])


def line_demo(T):
    obs = np.zeros((T, OBS))
    obs[:, 4] = np.arange(1, T + 1)  # block x equals the 1-based frame index
    return Demonstration(obs, envs.OBSTACLE_PUSH, obs[-1, 4:7])


def brute_force(q_by_index, prev, T, window, gamma):
    best, best_g = -np.inf, None
    for g in range(prev + 1, min(prev + window, T) + 1):
        score = gamma ** (g - prev - 1) * q_by_index[g]
        if score > best:
            best, best_g = score, g
    return best_g


def test_window_one_is_the_next_frame():
    demo = line_demo(8)
    agent = TableAgent({g: float(g) for g in range(1, 9)}, window=1)
    for prev in range(8):
        assert select_subgoal(agent, np.zeros(OBS), demo, prev) == prev + 1


def test_discounted_argmax_worked_example():
    demo = line_demo(10)
    q = {1: 0.5, 2: 0.6, 3: 0.6, 4: 0.1, 5: 0.1}
    q.update({g: 0.0 for g in range(6, 11)})
    agent = TableAgent(q, window=5, gamma=0.99)
    # 0.99 * 0.6 beats 0.99**2 * 0.6 and 0.5
    assert select_subgoal(agent, np.zeros(OBS), demo, 0) == 2


def test_equal_scores_pick_the_earliest_frame():
    assert discounted_argmax([1.0, 1.0, 1.0], 1.0) == 0
    assert discounted_argmax([0.0, 0.0], 0.99) == 0


def test_window_clips_at_demo_end():
    assert list(candidate_window(7, 9, 5)) == [8, 9]
    assert list(candidate_window(0, 9, 3)) == [1, 2, 3]
    with pytest.raises(ProtocolError):
        candidate_window(9, 9, 5)


@settings(max_examples=200, deadline=None)
@given(q=st.lists(st.floats(0.01, 10.0), min_size=1, max_size=12), scale=st.floats(0.01, 100.0))
def test_selection_is_invariant_to_positive_scaling(q, scale):
    q = np.array(q)
    assert discounted_argmax(q, 0.99) == discounted_argmax(q * scale, 0.99)


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        T = int(rng.integers(2, 30))
        window = int(rng.integers(1, 11))
        gamma = float(rng.choice([0.5, 0.9, 0.99, 1.0]))
        prev = int(rng.integers(0, T))
        values = rng.normal(size=T + 1)
        if rng.uniform() < 0.3:
            values = np.round(values, 1)  # force ties
        table = {g: values[g] for g in range(1, T + 1)}
        agent = TableAgent(table, window=window, gamma=gamma)
        got = select_subgoal(agent, np.zeros(OBS), line_demo(T), prev, EXPLOIT)
        assert got == brute_force(table, prev, T, window, gamma)


def test_meta_reward_cases():
    assert meta_reward(True, 3, 10) == (1.0, False)
    assert meta_reward(True, 10, 10) == (1.0, True)
    assert meta_reward(False, 3, 10) == (0.0, True)


def test_baseline_selectors():
    demo = line_demo(12)
    rng = np.random.default_rng(0)
    assert SequentialSelector(5).select_subgoal(None, demo, 4) == 5
    picks = [RandomSkipSelector(5).select_subgoal(None, demo, 4, EXPLOIT, rng) for _ in range(5000)]
    counts = np.bincount(picks, minlength=10)[5:10] / 5000
    assert np.allclose(counts, 0.2, atol=0.02)
    assert set(RandomSkipSelector(5).select_subgoal(None, demo, 10, EXPLOIT, rng) for _ in range(50)) == {11, 12}


def test_epsilon_one_explores_uniformly_and_decays_to_floor():
    demo = line_demo(12)
    agent = TableAgent({g: float(g == 1) for g in range(1, 13)}, window=4, epsilon=1.0)
    rng = np.random.default_rng(1)
    picks = [select_subgoal(agent, np.zeros(OBS), demo, 0, EXPLORE, rng) for _ in range(4000)]
    assert np.allclose(np.bincount(picks, minlength=5)[1:5] / 4000, 0.25, atol=0.03)
    for _ in range(2000):
        agent.decay_epsilon()
    assert agent.epsilon == pytest.approx(0.05)
    agent = MetaAgent(OBS, epsilon_decay=0.005)
    agent.decay_epsilon()
    assert agent.epsilon == pytest.approx(0.995)


def test_ddqn_terminal_target_is_reward():
    agent = MetaAgent(OBS, window=3, seed=0)
    y = ddqn_targets(agent, np.array([1.0, 0.0]), np.array([1.0, 1.0]), np.zeros((2, OBS)),
                     np.ones((2, 3, 3)), np.array([3.0, 0.0]))
    assert np.array_equal(y, [1.0, 0.0])


def test_ddqn_target_uses_online_choice_and_target_value():
    agent = MetaAgent(OBS, window=3, gamma=0.9, hidden=(8, 8), seed=0)
    agent.q_target = MetaAgent(OBS, window=3, hidden=(8, 8), seed=5).q  # a genuinely different target net
    rng = np.random.default_rng(0)
    next_obs = rng.normal(size=(4, OBS))
    next_goals = rng.normal(size=(4, 3, 3))
    counts = np.array([3.0, 2.0, 1.0, 3.0])
    y = ddqn_targets(agent, np.ones(4), np.zeros(4), next_obs, next_goals, counts)
    for k in range(4):
        m = int(counts[k])
        online = agent.q_values(next_obs[k], next_goals[k, :m])
        choice = int(np.argmax(0.9 ** np.arange(m) * online))
        target = agent.q_values(next_obs[k], next_goals[k, choice][None, :], agent.q_target)[0]
        assert y[k] == pytest.approx(1.0 + 0.9 ** (choice + 1) * target)
    # a single candidate needs no choice at all
    assert y[2] == pytest.approx(1.0 + 0.9 * agent.q_values(next_obs[2], next_goals[2, :1], agent.q_target)[0])


def test_ddqn_update_fits_constant_reward():
    agent = MetaAgent(OBS, window=2, gamma=0.5, learning_rate=3e-3, tau=0.05, hidden=(16, 16), seed=0)
    rng = np.random.default_rng(0)
    trs = [MetaTransition(rng.normal(size=OBS) * 0.01, 0, 0, 1, 1.0, np.zeros(OBS), 1, True,
                          rng.normal(size=3) * 0.01, np.zeros((0, 3))) for _ in range(64)]
    buf = meta_buffer(OBS, 2)
    buf.add_episode(meta_transitions_to_batch(trs, 2))
    assert ddqn_update(agent, buf, batch_size=65) is None
    for _ in range(400):
        loss = ddqn_update(agent, buf, batch_size=32, rng=rng)
    assert loss < 1e-3
    assert agent.updates == 400


def test_meta_batch_pads_next_goals():
    demo = generate_demo(envs.OBSTACLE_PUSH, 0)
    t1 = MetaTransition(np.zeros(OBS), 0, 0, 2, 1.0, np.ones(OBS), 2, False, demo.frame_embedding(2),
                        demo.embeddings[2:5])
    t2 = MetaTransition(np.ones(OBS), 0, 2, 5, 0.0, np.ones(OBS), 2, True, demo.frame_embedding(5),
                        np.zeros((0, 3)))
    batch = meta_transitions_to_batch([t1, t2], 5)
    assert batch["next_goals"].shape == (2, 5, 3)
    assert list(batch["next_count"]) == [3.0, 0.0]
    assert np.array_equal(batch["next_goals"][0, :3], demo.embeddings[2:5])
