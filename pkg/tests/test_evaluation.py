import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from silo import envs
from silo.demos import generate_demos, unreachable_frames
from silo.envs import EnvConfig
from silo.evaluation import (
    ABLATION_DEMO_COUNTS,
    RESULT_COLUMNS,
    DemoResult,
    Metrics,
    ablation_suite,
    evaluate,
    format_table,
    metrics_from_records,
    run_baseline,
    write_results,
)
from silo.exceptions import KindMismatchError
from silo.low_level import SacAgent
from silo.meta import MetaAgent, RandomSkipSelector, SequentialSelector
from silo.trainer import RolloutRecord, TrainConfig, load_config

PUSH = EnvConfig(envs.OBSTACLE_PUSH)


def record(T, achieved, subgoals=None):
    subgoals = achieved if subgoals is None else subgoals
    r = RolloutRecord(0, T)
    for g in subgoals:
        r.subgoals.append(g)
        r.reached.append(g in achieved)
        r.meta_rewards.append(1.0 if g in achieved else 0.0)
        r.low_steps.append(1)
    return r


def test_full_follow_scores_one():
    m = metrics_from_records([record(10, list(range(1, 11)))])
    assert m.success_rate == 1.0 and m.coverage_count == 1.0 and m.coverage_furthest == 1.0


def test_partial_follow():
    m = metrics_from_records([record(10, [1, 2, 4], subgoals=[1, 2, 4, 7])])
    assert m.success_rate == 0.0
    assert m.coverage_count == pytest.approx(0.3)
    assert m.coverage_furthest == pytest.approx(0.4)
    assert m.mean_subgoals == 4.0


def test_all_failures_and_empty():
    m = metrics_from_records([record(10, [], subgoals=[1]), record(8, [], subgoals=[2])])
    assert m.success_rate == 0.0 and m.coverage_count == 0.0
    assert Metrics().success_rate == 0.0 and Metrics().n_demos == 0


def test_aggregates_are_means_of_per_demo_values():
    recs = [record(10, [1, 2, 3]), record(5, [2, 5]), record(4, [1])]
    m = metrics_from_records(recs)
    assert m.coverage_count == pytest.approx(np.mean([0.3, 0.4, 0.25]))
    assert m.success_rate == pytest.approx(1 / 3)
    assert m.n_demos == 3


@settings(max_examples=200, deadline=None)
@given(T=st.integers(1, 40), data=st.data())
def test_coverage_is_monotone_and_success_implies_coverage(T, data):
    sub = sorted(data.draw(st.sets(st.integers(1, T))))
    extra = sorted(set(sub) | data.draw(st.sets(st.integers(1, T))))
    small, big = DemoResult(0, T, sub, bool(sub) and sub[-1] == T, len(sub)), \
        DemoResult(0, T, extra, bool(extra) and extra[-1] == T, len(extra))
    assert big.coverage_count >= small.coverage_count
    for r in (small, big):
        if r.success:
            assert r.coverage_count > 0


def test_sequential_fails_on_every_obstacle_demo():
    # a controller that cannot pass the obstacle frames never reaches T under sequential following
    demos = generate_demos(envs.OBSTACLE_PUSH, range(100, 105))
    assert all(unreachable_frames(d, PUSH) for d in demos)
    m = evaluate(SequentialSelector(5), SacAgent(8, 2, seed=0), PUSH, demos)
    assert m.success_rate == 0.0 and m.n_demos == 5


def test_evaluation_leaves_agents_untouched():
    demos = generate_demos(envs.OBSTACLE_PUSH, range(3))
    low = SacAgent(8, 2, hidden=(16, 16), seed=0)
    meta = MetaAgent(8, hidden=(16, 16), seed=0)
    low_state = [a.copy() for a in low.policy.arrays()]
    rng_state = (low.rng.bit_generator.state, meta.rng.bit_generator.state)
    a = evaluate(meta, low, PUSH, demos, seed=3)
    b = evaluate(meta, low, PUSH, demos, seed=3)
    assert a == b
    assert all(np.array_equal(x, y) for x, y in zip(low_state, low.policy.arrays()))
    assert (low.rng.bit_generator.state, meta.rng.bit_generator.state) == rng_state
    assert meta.epsilon == 1.0 and meta.updates == 0


def test_random_skip_evaluation_is_order_independent():
    demos = generate_demos(envs.OBSTACLE_PUSH, range(4))
    low = SacAgent(8, 2, hidden=(16, 16), seed=0)
    m = evaluate(RandomSkipSelector(5), low, PUSH, demos, episodes_per_demo=2, seed=1)
    assert m.n_demos == 8


def test_evaluate_rejects_kind_mismatch():
    with pytest.raises(KindMismatchError):
        evaluate(SequentialSelector(), SacAgent(8, 2), PUSH, generate_demos(envs.PICK_AND_PLACE, [0]))


def tiny_config(**kw):
    base = dict(env_steps=200, eval_interval=0, gradient_steps=1, batch_size=16, hidden_units=8,
                n_demos=2, n_eval_demos=3)
    base.update(kw)
    return TrainConfig(**base)


def test_run_baseline_swaps_the_selector():
    summary = run_baseline("sequential", tiny_config())
    row = summary.row()
    assert row["selector"] == "sequential" and row["n_eval_demos"] == 3
    assert row["success_rate"] == 0.0
    with pytest.raises(ValueError):
        run_baseline("oracle", tiny_config())


def test_results_csv_and_table(tmp_path):
    rows = [run_baseline(k, tiny_config()).row() for k in ("sequential", "random_skip")]
    write_results(tmp_path / "r.csv", rows)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS) and len(lines) == 3
    table = format_table(rows)
    assert "sequential" in table and "obstacle_push" in table
    assert "0.00 (" in table


def test_ablation_suite_shapes(tmp_path):
    cfg = tiny_config(env_steps=50)
    counts, windows = ablation_suite(cfg, tmp_path, demo_counts=ABLATION_DEMO_COUNTS)
    assert [r["n_demos"] for r in counts] == [10, 20, 40, 60, 80, 100]
    assert {r["n_eval_demos"] for r in counts + windows} == {3}
    assert [r["window"] for r in windows] == [5, 10]
    assert len((tmp_path / "demo_count.csv").read_text().splitlines()) == 7
    assert len((tmp_path / "window.csv").read_text().splitlines()) == 3
    assert load_config(tmp_path / "window_10" / "config.ini").meta_window == 10
