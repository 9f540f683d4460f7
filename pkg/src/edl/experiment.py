"""Run orchestration.

Turns a resolved config into a run directory with a fixed set of artifacts:

    config.txt        resolved config; re-running it reproduces the run
    metrics.jsonl     one JSON object per epoch/iteration, append-only
    metrics.csv       spreadsheet mirror of the JSONL rows
    reward_curve.csv  tabular mode: greedy mean reward per iteration
    checkpoint.ckpt   latest state, overwritten after every epoch/iteration
    plot_metrics.py   standalone plotting script (emitted text, never run)

Evaluation and protocol analysis load a checkpoint back and write their
reports beside it (eval.json, retrieval.csv, protocol.txt, protocol_counts.csv).
"""

from __future__ import annotations

import csv
import json
import logging
import os

import numpy as np

from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    neural_checkpoint,
    save_checkpoint,
    tabular_checkpoint,
    unpack_nets,
    unpack_tables,
)
from .config import ConfigError, ExperimentConfig
from .evaluation import (
    NeuralAgents,
    TabularAgents,
    percentile_rank,
    protocol_report,
    ranking_metrics,
    retrieval_curve,
    task_accuracy,
)
from .tabular import (
    AlternatingSchedule,
    EpsGreedyConfig,
    TabularGame,
    answer_map_is_injective,
    train_alternating,
)
from .training import (
    AblationFlags,
    NeuralResume,
    TrainSettings,
    train_neural,
)
from .nets import image_one_hot
from .world import World

log = logging.getLogger("edl")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}


def configure_logging(level_name: str | None = None) -> None:
    """Set the package log level from EDL_LOG_LEVEL (error|info|debug)."""
    if level_name is None:
        level_name = os.environ.get("EDL_LOG_LEVEL", "info")
    key = level_name.strip().lower()
    if key not in LOG_LEVELS:
        raise ConfigError(
            f"EDL_LOG_LEVEL must be one of error, info, debug; got {level_name!r}")
    if not log.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(handler)
        log.propagate = False
    log.setLevel(LOG_LEVELS[key])


# -- artifact writers ---------------------------------------------------------

def _append_jsonl(path: str, row: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_csv(path: str, rows: list[dict]) -> None:
    """Mirror metric rows to CSV; columns are the union of keys in
    first-seen order, missing cells left empty."""
    cols: list[str] = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, restval="")
        writer.writeheader()
        writer.writerows(rows)


def _write_reward_curve(path: str, curve: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "greedy_mean_reward"])
        for it, reward in enumerate(curve):
            writer.writerow([it, repr(float(reward))])


PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Plot the metrics of the run directory this script sits in.

Reads metrics.csv (and reward_curve.csv if present); writes metrics.png.
Requires matplotlib, which the training code itself never imports.
\"\"\"
import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))

def read_csv(name):
    path = os.path.join(here, name)
    if not os.path.exists(path):
        return []
    with open(path) as fh:
        return list(csv.DictReader(fh))

rows = read_csv("metrics.csv")
curve = read_csv("reward_curve.csv")
fig, axes = plt.subplots(1, 2, figsize=(10, 4))

if curve:
    xs = [int(r["iteration"]) for r in curve]
    ys = [float(r["greedy_mean_reward"]) for r in curve]
    axes[0].plot(xs, ys)
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("greedy mean reward")
    axes[0].set_ylim(-1.05, 1.05)
elif rows:
    xs = [int(r["epoch"]) for r in rows]
    axes[0].plot(xs, [float(r["mean_return"]) for r in rows], label="return")
    axes[0].plot(xs, [float(r["percentile_rank"]) / 100 for r in rows],
                 label="percentile/100")
    axes[0].set_xlabel("epoch")
    axes[0].legend()

if rows and "accuracy" in rows[0]:
    xs = [int(r.get("epoch", r.get("iteration", 0))) for r in rows]
    axes[1].plot(xs, [float(r["accuracy"]) for r in rows])
    axes[1].set_ylabel("task accuracy")
    axes[1].set_ylim(0, 1.05)

fig.tight_layout()
out = os.path.join(here, "metrics.png")
fig.savefig(out, dpi=120)
print(out)
"""


class RunPaths:
    """Canonical artifact locations inside one run directory."""

    def __init__(self, out_dir: str):
        self.dir = out_dir
        self.config = os.path.join(out_dir, "config.txt")
        self.metrics_jsonl = os.path.join(out_dir, "metrics.jsonl")
        self.metrics_csv = os.path.join(out_dir, "metrics.csv")
        self.reward_curve = os.path.join(out_dir, "reward_curve.csv")
        self.checkpoint = os.path.join(out_dir, "checkpoint.ckpt")
        self.plot_script = os.path.join(out_dir, "plot_metrics.py")

    def prepare(self, cfg: ExperimentConfig) -> None:
        os.makedirs(self.dir, exist_ok=True)
        cfg.write(self.config)
        with open(self.plot_script, "w") as fh:
            fh.write(PLOT_SCRIPT)


def _check_resume_config(snapshot: dict, current: dict,
                         ignore: tuple[str, ...]) -> None:
    """A resumed run must train under the checkpoint's exact config.
    The output directory and pure stop conditions (iteration/epoch budgets)
    may differ; anything else would change the trajectory."""
    skip = set(ignore) | {"out_dir"}
    mismatched = sorted(
        key for key in set(snapshot) | set(current)
        if key not in skip and snapshot.get(key) != current.get(key)
    )
    if mismatched:
        raise CheckpointError(
            "checkpoint config does not match the requested run "
            f"(differs on: {', '.join(mismatched)})")


# -- training entry points ----------------------------------------------------

def train_from_config(cfg: ExperimentConfig,
                      resume_path: str | None = None) -> dict:
    """Train per config, writing all artifacts. Returns a summary dict."""
    resolved = cfg.resolved()
    paths = RunPaths(resolved.out_dir)
    paths.prepare(resolved)
    log.info("run directory: %s", paths.dir)
    if resolved.mode == "tabular":
        return _train_tabular(resolved, paths, resume_path)
    return _train_neural_run(resolved, paths, resume_path)


def _train_tabular(resolved: ExperimentConfig, paths: RunPaths,
                   resume_path: str | None) -> dict:
    world = World(resolved.n_attributes, resolved.n_values)
    game = TabularGame(world, q_vocab=resolved.q_vocab,
                       a_vocab=resolved.a_vocab, n_rounds=resolved.rounds)
    eps = EpsGreedyConfig(greedy_prob=resolved.greedy_prob,
                          rng_seed=resolved.seed)
    schedule = AlternatingSchedule(
        episodes_per_iteration=resolved.episodes_per_iteration,
        max_iterations=resolved.max_iterations)
    snapshot = resolved.as_dict()

    q_table = a_table = None
    curve = None
    start = 0
    if resume_path is not None:
        ckpt = load_checkpoint(resume_path)
        _check_resume_config(ckpt.config, snapshot, ("max_iterations",))
        q_table, a_table, curve = unpack_tables(ckpt)
        start = ckpt.step
        log.info("resuming tabular run at iteration %d", start)

    rows: list[dict] = []

    def on_iteration(it, side, mean, q_t, a_t, curve_now):
        row = {"iteration": it, "side": side,
               "greedy_mean_reward": mean,
               "accuracy": (mean + 1.0) / 2.0}
        rows.append(row)
        _append_jsonl(paths.metrics_jsonl, row)
        _write_csv(paths.metrics_csv, rows)
        _write_reward_curve(paths.reward_curve, curve_now)
        save_checkpoint(paths.checkpoint,
                        tabular_checkpoint(snapshot, it + 1, q_t, a_t,
                                           list(curve_now)))
        log.info("iteration %d side %s greedy reward %.4f", it, side, mean)

    result = train_alternating(game, schedule, eps, q_init=resolved.q_init,
                               q_table=q_table, a_table=a_table,
                               start_iteration=start, reward_curve=curve,
                               on_iteration=on_iteration)
    _write_reward_curve(paths.reward_curve, result.reward_curve)
    save_checkpoint(paths.checkpoint,
                    tabular_checkpoint(snapshot, result.iterations_run,
                                       result.q_table, result.a_table,
                                       list(result.reward_curve)))
    final = result.reward_curve[-1]
    summary = {
        "mode": "tabular",
        "out_dir": paths.dir,
        "iterations_run": result.iterations_run,
        "final_greedy_reward": final,
        "accuracy": (final + 1.0) / 2.0,
        "injective": answer_map_is_injective(game, result.q_table,
                                             result.a_table),
    }
    log.info("finished: reward %.4f after %d iterations", final,
             result.iterations_run)
    return summary


def _train_neural_run(resolved: ExperimentConfig, paths: RunPaths,
                      resume_path: str | None) -> dict:
    world = World(resolved.n_attributes, resolved.n_values)
    settings = TrainSettings(
        seed=resolved.seed,
        n_rounds=resolved.rounds,
        sl_epochs=resolved.sl_epochs,
        rl_epochs=resolved.rl_epochs,
        batch_size=resolved.batch_size,
        lr=resolved.lr,
        corpus_fraction=resolved.corpus_fraction,
        k_start=resolved.k_start,
        anneal_every=resolved.anneal_every,
        flags=AblationFlags(
            freeze_q=resolved.freeze_q,
            freeze_a=resolved.freeze_a,
            freeze_f=resolved.freeze_f,
            multi_task=resolved.multi_task,
            sl_weight=resolved.sl_weight,
            rl_weight=resolved.rl_weight,
        ),
    )
    snapshot = resolved.as_dict()

    resume = None
    if resume_path is not None:
        ckpt = load_checkpoint(resume_path)
        _check_resume_config(ckpt.config, snapshot, ("rl_epochs",))
        q_net, a_net, adam = unpack_nets(ckpt)
        resume = NeuralResume(q_net, a_net, adam, start_epoch=ckpt.step,
                              mt_cursor=ckpt.header.get("mt_cursor", 0),
                              mt_pass=ckpt.header.get("mt_pass", 0))
        log.info("resuming neural run at epoch %d", ckpt.step)

    rows: list[dict] = []

    def on_epoch(row, q_net, a_net, adam, loop_state):
        rows.append(row)
        _append_jsonl(paths.metrics_jsonl, row)
        _write_csv(paths.metrics_csv, rows)
        extra = {"mt_cursor": loop_state["mt_cursor"],
                 "mt_pass": loop_state["mt_pass"]}
        save_checkpoint(paths.checkpoint,
                        neural_checkpoint(snapshot, row["epoch"] + 1,
                                          q_net, a_net, adam, extra))
        log.info("epoch %d [%s] accuracy %.4f return %.4f percentile %.2f",
                 row["epoch"], row["phase"], row["accuracy"],
                 row["mean_return"], row["percentile_rank"])

    result = train_neural(settings, world=world, on_epoch=on_epoch,
                          resume=resume)
    save_checkpoint(
        paths.checkpoint,
        neural_checkpoint(snapshot,
                          settings.sl_epochs + settings.rl_epochs,
                          result.q_net, result.a_net, result.adam,
                          {"mt_cursor": result.mt_cursor,
                           "mt_pass": result.mt_pass}))
    summary = {"mode": "neural", "out_dir": paths.dir}
    if result.metrics:
        last = result.metrics[-1]
        summary.update({
            "epochs_run": last["epoch"] + 1,
            "accuracy": last["accuracy"],
            "mean_return": last["mean_return"],
            "percentile_rank": last["percentile_rank"],
        })
    log.info("finished: %s", summary)
    return summary


# -- checkpoint loading for evaluation and play -------------------------------

def agents_from_checkpoint(path: str, rounds: int | None = None):
    """(agents, world, ckpt) with greedy_episode() play, either mode."""
    ckpt = load_checkpoint(path)
    cfg = ckpt.config
    world = World(cfg.get("n_attributes", 3), cfg.get("n_values", 4))
    if ckpt.mode == "tabular":
        game = TabularGame(world, q_vocab=cfg.get("q_vocab", 3),
                           a_vocab=cfg.get("a_vocab", 4),
                           n_rounds=rounds or cfg.get("rounds", 2))
        q_table, a_table, _ = unpack_tables(ckpt)
        return TabularAgents(game, q_table, a_table), world, ckpt
    q_net, a_net, _ = unpack_nets(ckpt)
    n_rounds = rounds or cfg.get("rounds", 10)
    return NeuralAgents(q_net, a_net, world, n_rounds), world, ckpt


def run_eval(checkpoint_path: str, out_dir: str | None = None,
             rounds: int | None = None) -> dict:
    """Accuracy (both modes) plus retrieval curve and ranking metrics
    (neural mode); writes eval.json and retrieval.csv beside the
    checkpoint unless out_dir says otherwise."""
    agents, world, ckpt = agents_from_checkpoint(checkpoint_path, rounds)
    if out_dir is None:
        out_dir = os.path.dirname(os.path.abspath(checkpoint_path))
    os.makedirs(out_dir, exist_ok=True)
    instances = world.enumerate_instances()
    summary: dict = {
        "mode": ckpt.mode,
        "checkpoint": checkpoint_path,
        "trained_steps": ckpt.step,
        "accuracy": task_accuracy(agents, instances),
    }
    if ckpt.mode == "tabular":
        summary["injective"] = answer_map_is_injective(
            agents.game, agents.q_table, agents.a_table)
    else:
        pool = list(world.enumerate_images())
        curve = retrieval_curve(agents, instances, pool)
        with open(os.path.join(out_dir, "retrieval.csv"), "w",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "mean_percentile", "std_error"])
            writer.writerows(curve.rows())
        ranks = []
        for inst in instances:
            rec = agents.greedy_episode(inst)
            pred = rec.predictions[-1]
            d_true = float(np.sum(
                (pred - image_one_hot(inst.image.values)) ** 2))
            closer = sum(
                1 for img in pool if img.id != inst.image.id
                and float(np.sum((pred - image_one_hot(img.values)) ** 2))
                < d_true)
            ranks.append(1 + closer)
        mrr, recall, mean_rank = ranking_metrics(ranks, [1, 5, 10])
        summary.update({
            "final_percentile_mean": curve.mean[-1],
            "retrieval_rounds": len(curve),
            "mrr": mrr,
            "recall_at": {str(k): v for k, v in recall.items()},
            "mean_rank": mean_rank,
        })
    with open(os.path.join(out_dir, "eval.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def run_analyze(checkpoint_path: str, out_dir: str | None = None,
                rounds: int | None = None) -> str:
    """Protocol-grounding report for a checkpoint; writes protocol.txt and
    protocol_counts.csv, returns the rendered text."""
    agents, world, _ = agents_from_checkpoint(checkpoint_path, rounds)
    if out_dir is None:
        out_dir = os.path.dirname(os.path.abspath(checkpoint_path))
    os.makedirs(out_dir, exist_ok=True)
    report = protocol_report(agents, world.enumerate_instances())
    text = report.render_text(world)
    with open(os.path.join(out_dir, "protocol.txt"), "w") as fh:
        fh.write(text + "\n")
    with open(os.path.join(out_dir, "protocol_counts.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["q_symbol", "attribute", "value", "answer", "count"])
        writer.writerows(report.csv_rows())
    return text
