"""Evaluation: retrieval percentile ranks, task accuracy, protocol analysis.

Agents are anything with greedy_episode(instance) -> EpisodeRecord; adapters
for the tabular and neural players live here. The retrieval pool in the
synthetic world is all 64 images (too few to hold any out).

Percentile rank sorts the pool by squared distance to the prediction. Exact
distance ties get half credit each, so a prediction equidistant from the
whole pool scores exactly 50.0 and an exact hit scores 100.0.

The protocol report tabulates, per emitted question symbol, the joint counts
of each attribute's value against the answer given, and computes plug-in
mutual information in bits. A protocol is "factorized" when every emitted
question symbol has some attribute whose MI is exactly 2 bits (one full
4-valued attribute) with the answer a deterministic function of that
attribute's value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dialog import (
    EpisodeRecord,
    Q_SIDE,
    QState,
    AState,
    Round,
    episode_return,
    round_reward,
)
from .nets import DialogRunner, greedy_symbol, image_one_hot
from .tabular import EpsGreedyConfig, TabularGame, rollout_tabular
from .world import Instance, PredictionPair, SynthImage, World


# -- retrieval ---------------------------------------------------------------


def percentile_rank(prediction: np.ndarray, true_image: SynthImage,
                    pool: list[SynthImage]) -> float:
    """Percentile of the true image when the pool is sorted by distance to
    the prediction; 100 = closest, ties get half credit."""
    if len(pool) < 2:
        raise ValueError("pool must contain at least 2 images")
    if not any(img.id == true_image.id for img in pool):
        raise ValueError("true image must be in the pool")
    pred = np.asarray(prediction, dtype=np.float64)
    d_true = float(np.sum((pred - image_one_hot(true_image.values)) ** 2))
    closer = 0.0
    for img in pool:
        if img.id == true_image.id:
            continue
        d = float(np.sum((pred - image_one_hot(img.values)) ** 2))
        if d < d_true:
            closer += 1.0
        elif d == d_true:
            closer += 0.5
    rank = 1.0 + closer
    n = len(pool)
    return 100.0 * (n - rank) / (n - 1)


@dataclass
class RetrievalCurve:
    mean: list[float]
    std_error: list[float]

    def __len__(self):
        return len(self.mean)

    def rows(self):
        return [(t, self.mean[t], self.std_error[t]) for t in range(len(self.mean))]


def retrieval_curve(agents, instances: list[Instance],
                    pool: list[SynthImage]) -> RetrievalCurve:
    """Mean percentile rank per round (0 = prompt-only prediction) with
    standard error, from greedy rollouts."""
    per_round: list[list[float]] = []
    for inst in instances:
        rec = agents.greedy_episode(inst)
        for t, pred in enumerate(rec.predictions):
            if t >= len(per_round):
                per_round.append([])
            per_round[t].append(percentile_rank(pred, inst.image, pool))
    means, errs = [], []
    for vals in per_round:
        arr = np.asarray(vals)
        means.append(float(arr.mean()))
        errs.append(float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0)
    return RetrievalCurve(means, errs)


# -- task accuracy -----------------------------------------------------------


def task_accuracy(agents, instances: list[Instance], mode: str = "greedy") -> float:
    """Fraction of instances whose final pair guess is correct. The affine
    identity mean_reward = 2*accuracy - 1 holds under the +1/-1 scheme."""
    if mode != "greedy":
        raise ValueError(f"only greedy evaluation is defined, got {mode!r}")
    world = agents.world
    correct = 0
    for inst in instances:
        rec = agents.greedy_episode(inst)
        if rec.final_guess is not None and world.check_prediction(inst, rec.final_guess):
            correct += 1
    return correct / len(instances)


# -- ranking -----------------------------------------------------------------


def ranking_metrics(ranks: list[int], ks: list[int]):
    """(MRR, {k: recall@k}, mean rank) over 1-based ranks."""
    if not ranks:
        raise ValueError("ranks must be non-empty")
    if any(r < 1 for r in ranks):
        raise ValueError("ranks are 1-based")
    n = len(ranks)
    mrr = sum(1.0 / r for r in ranks) / n
    recall = {k: sum(1 for r in ranks if r <= k) / n for k in ks}
    mean_rank = sum(ranks) / n
    return mrr, recall, mean_rank


# -- protocol analysis -------------------------------------------------------


def mutual_information_bits(counts: np.ndarray) -> float:
    """Plug-in MI of a joint count table, base 2, with 0 log 0 = 0."""
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mi = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if p[i, j] > 0:
                mi += p[i, j] * math.log2(p[i, j] / (px[i] * py[j]))
    return mi


@dataclass
class ProtocolReport:
    joint_counts: dict  # (q_symbol, attribute) -> n_values x n_answers counts
    mi_bits: dict       # (q_symbol, attribute) -> float
    symbol_attribute: dict   # q_symbol -> attribute index or None
    symbol_value_map: dict   # q_symbol -> {value_index: answer_token}
    factorized: bool
    emitted_symbols: list[int] = field(default_factory=list)

    def render_text(self, world: World) -> str:
        lines = []
        verdict = "factorized" if self.factorized else "not factorized"
        lines.append(f"protocol grounding: {verdict}")
        for sym in self.emitted_symbols:
            attr = self.symbol_attribute.get(sym)
            head = f"Q-symbol {sym}"
            if attr is not None:
                head += f" -> {world.attribute_name(attr)}"
            lines.append(head)
            for k in range(world.n_attributes):
                mi = self.mi_bits.get((sym, k), 0.0)
                lines.append(f"  MI(answer; {world.attribute_name(k)}) = {mi:.4f} bits")
            vmap = self.symbol_value_map.get(sym)
            if vmap is not None and attr is not None:
                pairs = ", ".join(
                    f"{world.value_label(attr, v)}->answer {a}" for v, a in sorted(vmap.items())
                )
                lines.append(f"  value map: {pairs}")
        return "\n".join(lines)

    def csv_rows(self):
        """(q_symbol, attribute, value, answer, count) conditional tables."""
        rows = []
        for (sym, attr), counts in sorted(self.joint_counts.items()):
            for v in range(counts.shape[0]):
                for a in range(counts.shape[1]):
                    rows.append((sym, attr, v, a, int(counts[v, a])))
        return rows


def protocol_report(agents, instances: list[Instance]) -> ProtocolReport:
    """Greedy-rollout answer statistics per question symbol, MI per
    attribute, and the factorized-grounding verdict."""
    world = agents.world
    n_sym = None
    counts: dict = {}
    for inst in instances:
        rec = agents.greedy_episode(inst)
        for rnd in rec.rounds:
            sym = rnd.question[0]
            ans = rnd.answer[0]
            for attr in range(world.n_attributes):
                key = (sym, attr)
                if key not in counts:
                    counts[key] = np.zeros((world.n_values, world.n_values), dtype=np.int64)
                counts[key][inst.image.values[attr], ans] += 1
    emitted = sorted({sym for sym, _ in counts})
    mi = {key: mutual_information_bits(tbl) for key, tbl in counts.items()}

    symbol_attribute: dict = {}
    symbol_value_map: dict = {}
    factorized = len(emitted) > 0
    for sym in emitted:
        best_attr = None
        for attr in range(world.n_attributes):
            tbl = counts.get((sym, attr))
            if tbl is None or mi[(sym, attr)] != 2.0:
                continue
            deterministic = all(
                np.count_nonzero(tbl[v]) <= 1 for v in range(tbl.shape[0])
            )
            if deterministic:
                best_attr = attr
                break
        symbol_attribute[sym] = best_attr
        if best_attr is None:
            factorized = False
        else:
            tbl = counts[(sym, best_attr)]
            symbol_value_map[sym] = {
                v: int(np.argmax(tbl[v]))
                for v in range(tbl.shape[0])
                if tbl[v].sum() > 0
            }
    return ProtocolReport(
        joint_counts=counts,
        mi_bits=mi,
        symbol_attribute=symbol_attribute,
        symbol_value_map=symbol_value_map,
        factorized=factorized,
        emitted_symbols=emitted,
    )


# -- agent adapters ----------------------------------------------------------


class TabularAgents:
    """Greedy tabular pair: episodes come from table argmax play."""

    def __init__(self, game: TabularGame, q_table, a_table):
        self.game = game
        self.world = game.world
        self.q_table = q_table
        self.a_table = a_table
        self._cfg = EpsGreedyConfig()

    def greedy_episode(self, instance: Instance) -> EpisodeRecord:
        return rollout_tabular(self.game, instance, self.q_table, self.a_table,
                               self._cfg, "greedy")


def readout_pair(world: World, task, prediction: np.ndarray) -> PredictionPair:
    """Blockwise argmax of the prediction on the task's two attributes,
    ties to the lowest value index."""
    nv = world.n_values
    v1 = int(np.argmax(prediction[task.first * nv:(task.first + 1) * nv]))
    v2 = int(np.argmax(prediction[task.second * nv:(task.second + 1) * nv]))
    return world.pair(world.value(task.first, v1), world.value(task.second, v2))


class NeuralAgents:
    """Greedy play of the recurrent policies for n_rounds, with per-round
    predictions and telescoping rewards; the final guess is the blockwise
    readout of the last prediction."""

    def __init__(self, q_net, a_net, world: World, n_rounds: int):
        self.q_net = q_net
        self.a_net = a_net
        self.world = world
        self.n_rounds = n_rounds

    def greedy_episode(self, instance: Instance) -> EpisodeRecord:
        world = self.world
        y_true = world.target_vector(instance.image)
        runner = DialogRunner(self.q_net, self.a_net, instance)
        predictions = [np.asarray(runner.predict().value)]
        rewards = []
        for _ in range(self.n_rounds):
            qlp = runner.question_logprobs()
            q_tok = greedy_symbol(np.exp(qlp.value), Q_SIDE).token
            alp = runner.answer_logprobs(q_tok)
            a_tok = greedy_symbol(np.exp(alp.value)).token
            runner.commit_round(q_tok, a_tok)
            predictions.append(np.asarray(runner.predict().value))
            rewards.append(round_reward(y_true, predictions[-2], predictions[-1]))
        guess = readout_pair(world, instance.task, predictions[-1])
        return EpisodeRecord(
            instance=instance,
            rounds=tuple(runner.rounds),
            predictions=tuple(predictions),
            rewards=tuple(rewards),
            final_guess=guess,
        )
