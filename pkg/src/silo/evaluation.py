"""Greedy evaluation, the two selector baselines, and the demo-count / window ablations."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import KindMismatchError
from .low_level import EXPLOIT

logger = logging.getLogger(__name__)

BASELINE_KINDS = ("sequential", "random_skip", "meta")
ABLATION_DEMO_COUNTS = (10, 20, 40, 60, 80, 100)
RESULT_COLUMNS = ("env", "selector", "seed", "n_demos", "window", "env_steps", "n_eval_demos",
                  "success_rate", "coverage_count", "coverage_furthest", "mean_subgoals")


@dataclass
class DemoResult:
    demo_id: int
    T: int
    achieved: list
    success: bool
    n_subgoals: int

    @property
    def coverage_count(self):
        return len(self.achieved) / self.T

    @property
    def coverage_furthest(self):
        return (max(self.achieved) if self.achieved else 0) / self.T


@dataclass
class Metrics:
    records: list = field(default_factory=list)

    @property
    def n_demos(self):
        return len(self.records)

    def _mean(self, attr):
        if not self.records:
            return 0.0
        return float(np.mean([getattr(r, attr) for r in self.records]))

    @property
    def success_rate(self):
        return self._mean("success")

    @property
    def coverage_count(self):
        return self._mean("coverage_count")

    @property
    def coverage(self):
        return self.coverage_count

    @property
    def coverage_furthest(self):
        return self._mean("coverage_furthest")

    @property
    def mean_subgoals(self):
        return self._mean("n_subgoals")

    def summary(self):
        return f"{self.success_rate:.2f} ({self.coverage_count:.3f})"


def metrics_from_records(rollout_records):
    return Metrics([DemoResult(r.demo_id, r.T, r.achieved, r.success, len(r.subgoals))
                    for r in rollout_records])


def evaluate(selector, low, env_config, demos, episodes_per_demo=1, seed=0):
    """Greedy rollouts on each demo; nothing is stored and no agent state changes.

    Randomness (only the random-skip selector uses any) comes from a fresh
    generator per episode derived from ``seed``, so results do not depend on
    evaluation order.
    """
    from .trainer import rollout

    records = []
    for k, demo in enumerate(demos):
        if demo.kind != env_config.kind:
            raise KindMismatchError(f"demonstration {demo.demo_id} is {demo.kind}, "
                                    f"environment is {env_config.kind}")
        for e in range(episodes_per_demo):
            rng = np.random.default_rng([seed, k, e])
            record, _, _ = rollout(selector, low, env_config, demo, EXPLOIT, rng, seed=k)
            records.append(record)
    return metrics_from_records(records)


@dataclass
class RunSummary:
    config: object
    metrics: Metrics
    train_result: object

    def row(self):
        c = self.config
        m = self.metrics
        return {"env": c.env, "selector": c.selector, "seed": c.seed,
                "n_demos": self.train_result.n_demos, "window": c.meta_window,
                "env_steps": self.train_result.env_steps,
                "n_eval_demos": m.n_demos, "success_rate": m.success_rate,
                "coverage_count": m.coverage_count, "coverage_furthest": m.coverage_furthest,
                "mean_subgoals": m.mean_subgoals}


def train_and_evaluate(config, demos=None, eval_demos=None):
    """Train with ``config`` then score the greedy agents on the held-out demos."""
    from .trainer import resolve_demos, train

    if eval_demos is None:
        eval_demos = resolve_demos(config, train=False)
    result = train(config, demos=demos)
    metrics = evaluate(result.selector, result.low, config.env_config(), eval_demos, seed=config.seed)
    return RunSummary(config, metrics, result)


def run_baseline(kind, config, demos=None, eval_demos=None):
    """Full train+evaluate pipeline with the selector swapped for ``kind``."""
    if kind not in BASELINE_KINDS:
        raise ValueError(f"baseline kind must be one of {BASELINE_KINDS}, got {kind!r}")
    return train_and_evaluate(config.replace(selector=kind), demos, eval_demos)


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_results(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


def format_table(rows, row_key="selector", col_key="env"):
    """Plain-text table of ``rate (coverage)`` cells, one row per selector and one column per env."""
    row_names = list(dict.fromkeys(str(r[row_key]) for r in rows))
    col_names = list(dict.fromkeys(str(r[col_key]) for r in rows))
    cells = {}
    for r in rows:
        cells.setdefault((str(r[row_key]), str(r[col_key])), []).append(r)
    out = [[row_key] + col_names]
    for name in row_names:
        line = [name]
        for col in col_names:
            group = cells.get((name, col))
            if not group:
                line.append("-")
                continue
            rate = np.mean([g["success_rate"] for g in group])
            cov = np.mean([g["coverage_count"] for g in group])
            line.append(f"{rate:.2f} ({cov:.3f})")
        out.append(line)
    widths = [max(len(row[i]) for row in out) for i in range(len(out[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in out)


def ablation_suite(config, out_dir, demo_counts=ABLATION_DEMO_COUNTS, window=10, pick_reach=0.10):
    """Demo-count sweep on push and the wider-window variant on pick-and-place.

    Every run is scored on the same held-out demos (``config.n_eval_demos`` of
    them, drawn from seeds disjoint from training).  Writes
    ``demo_count.csv`` and ``window.csv`` under ``out_dir``, keeps each run's
    config and checkpoints in its own subdirectory, and returns both row lists.
    """
    from . import envs

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    push = config.replace(env=envs.OBSTACLE_PUSH, selector="meta")
    count_rows = []
    for n in demo_counts:
        summary = train_and_evaluate(push.replace(n_demos=n, checkpoint_dir=str(out_dir / f"demos_{n}")))
        count_rows.append(summary.row())
        logger.info("demos=%d %s", n, summary.metrics.summary())
    write_results(out_dir / "demo_count.csv", count_rows)

    # a shorter reach widens the unreachable stretches to 5-9 frames, which only a wider window can skip
    pick = config.replace(env=envs.PICK_AND_PLACE, selector="meta", reach_limit=pick_reach)
    window_rows = []
    for w in sorted({config.meta_window, window}):
        summary = train_and_evaluate(pick.replace(meta_window=w, checkpoint_dir=str(out_dir / f"window_{w}")))
        window_rows.append(summary.row())
        logger.info("window=%d %s", w, summary.metrics.summary())
    write_results(out_dir / "window.csv", window_rows)
    return count_rows, window_rows
