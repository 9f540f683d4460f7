"""Neural training: supervised pretraining on scripted dialogs, then
policy-gradient fine-tuning with curriculum annealing.

Supervised phase: teacher-force the scripted protocol's dialogs and minimize
mean question NLL + mean answer NLL + mean squared regression error, with
full backprop (the regression loss shapes the questioner's state too).

Policy-gradient phase: each episode teacher-forces rounds 1..K and samples
rounds K+1..T; K starts at T-1 and anneals by one per epoch to 0. Each
sampled round's reward multiplies that round's own log-probabilities (no
return-to-go, no baseline), giving the surrogate -sum_t r_t (log pi_Q +
log pi_A). The regression term stays a plain supervised loss on every
round's prediction and backpropagates through the questioner's whole
encoder; freeze_f drops it. Forced rounds contribute their NLL to the same
optimizer step.

Gradients are clamped coordinatewise to [-clamp_bound, clamp_bound] inside
the Adam update; frozen blocks are skipped entirely and their accumulated
gradients discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dialog import AState, EpisodeRecord, QState, Round, distance
from .evaluation import NeuralAgents, percentile_rank
from .nets import ABotNet, DialogRunner, Node, QBotNet, image_one_hot, sample_symbol
from .oracle import IDENTITY_PROTOCOL, ScriptedProtocol, scripted_dialog
from .rng import SplitMix64, derive_seed
from .world import Instance, World


# -- schedules and flags -----------------------------------------------------


@dataclass
class CurriculumSchedule:
    """Teacher-forcing horizon: current_k forced rounds, annealed down by
    one every anneal_every epochs, never back up."""

    k_start: int
    anneal_every: int = 1
    current_k: int = field(default=-1)

    def __post_init__(self):
        if self.current_k < 0:
            self.current_k = self.k_start

    def k_for_epoch(self, epoch: int) -> int:
        k = max(0, self.k_start - epoch // self.anneal_every)
        if k > self.current_k:
            k = self.current_k
        self.current_k = k
        return k


@dataclass
class AblationFlags:
    freeze_q: bool = False
    freeze_a: bool = False
    freeze_f: bool = False
    multi_task: bool = False
    sl_weight: float = 1.0
    rl_weight: float = 10.0

    def __post_init__(self):
        if self.freeze_q and self.freeze_a and self.freeze_f:
            raise ValueError("at most two of freeze_q/freeze_a/freeze_f may be set")


def frozen_block_names(q_net: QBotNet, a_net: ABotNet,
                       flags: AblationFlags) -> set[str]:
    names: set[str] = set()
    if flags.freeze_q:
        names |= {b.name for b in q_net.blocks() if not b.name.startswith("q.reg")}
    if flags.freeze_a:
        names |= {b.name for b in a_net.blocks()}
    if flags.freeze_f:
        names |= {"q.reg.W", "q.reg.b"}
    return names


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clamp_bound: float = 5.0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)

    @property
    def step_count(self) -> int:
        return max(self.t.values(), default=0)


def adam_update(state: AdamState, block) -> None:
    """One bias-corrected Adam step on a block; clamps the gradient to
    [-clamp_bound, clamp_bound] first and zeroes it afterward."""
    g = block.grad
    if not np.all(np.isfinite(g)):
        raise ValueError(f"non-finite gradient in block {block.name}")
    g = np.clip(g, -state.clamp_bound, state.clamp_bound)
    name = block.name
    if name not in state.m:
        state.m[name] = np.zeros_like(block.values)
        state.v[name] = np.zeros_like(block.values)
        state.t[name] = 0
    state.t[name] += 1
    t = state.t[name]
    m = state.m[name]
    v = state.v[name]
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    block.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    block.zero_grad()


def apply_adam(state: AdamState, q_net: QBotNet, a_net: ABotNet,
               flags: AblationFlags | None = None) -> None:
    frozen = frozen_block_names(q_net, a_net, flags) if flags else set()
    for block in list(q_net.blocks()) + list(a_net.blocks()):
        if block.name in frozen:
            block.zero_grad()
        else:
            adam_update(state, block)


# -- scripted-dialog corpus --------------------------------------------------


@dataclass(frozen=True)
class CorpusDialog:
    instance: Instance
    rounds: tuple[Round, ...]
    target: np.ndarray  # 12-d regression target


@dataclass
class OracleCorpus:
    """Teacher-forcing corpus from the scripted optimal protocol.

    dialogs is the grouped form the trainers batch over; q_items, a_items
    and reg_items are the same supervision flattened to (state, target)
    pairs, one per round.
    """

    dialogs: list[CorpusDialog]
    protocol: ScriptedProtocol
    seed: int
    n_rounds: int
    q_items: list = field(default_factory=list)
    a_items: list = field(default_factory=list)
    reg_items: list = field(default_factory=list)

    def dialog_for(self, instance: Instance) -> tuple[Round, ...]:
        return scripted_dialog(instance, self.n_rounds, self.protocol)

    def subset(self, fraction: float, seed: int) -> "OracleCorpus":
        """Deterministic instance-level subset (for truncated pretraining)."""
        if not 0.0 < fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")
        n = max(1, round(fraction * len(self.dialogs)))
        order = list(range(len(self.dialogs)))
        SplitMix64(derive_seed(seed, "corpus-subset")).shuffle(order)
        picked = [self.dialogs[i] for i in sorted(order[:n])]
        return _build_corpus(picked, self.protocol, self.seed, self.n_rounds)


def _build_corpus(dialogs: list[CorpusDialog], protocol: ScriptedProtocol,
                  seed: int, n_rounds: int) -> OracleCorpus:
    corpus = OracleCorpus(dialogs=dialogs, protocol=protocol, seed=seed,
                          n_rounds=n_rounds)
    for d in dialogs:
        for t, rnd in enumerate(d.rounds):
            prefix = d.rounds[:t]
            corpus.q_items.append(
                (QState(prompt=d.instance.task.id, history=prefix), rnd.question[0]))
            corpus.a_items.append(
                (AState(image=d.instance.image, history=prefix,
                        pending_question=rnd.question), rnd.answer[0]))
            corpus.reg_items.append(
                (QState(prompt=d.instance.task.id, history=d.rounds[:t + 1]),
                 d.target))
    return corpus


def generate_oracle_corpus(world: World, protocol_seed: int,
                           n_rounds: int = 10) -> OracleCorpus:
    """Scripted dialogs for every instance under the identity protocol
    (question symbol k asks attribute k; answers are value indexes)."""
    protocol = IDENTITY_PROTOCOL
    dialogs = [
        CorpusDialog(
            instance=inst,
            rounds=scripted_dialog(inst, n_rounds, protocol, world.n_attributes),
            target=world.target_vector(inst.image),
        )
        for inst in world.enumerate_instances()
    ]
    return _build_corpus(dialogs, protocol, protocol_seed, n_rounds)


# -- supervised step ---------------------------------------------------------


def _forced_dialog_terms(q_net: QBotNet, a_net: ABotNet, dialog: CorpusDialog,
                         detach_prediction: bool):
    """Teacher-force one dialog; return (tape, question log-prob nodes,
    answer log-prob nodes, squared-error nodes)."""
    runner = DialogRunner(q_net, a_net, dialog.instance,
                          detach_prediction=detach_prediction)
    y = runner.tape.const(dialog.target)
    q_terms: list[Node] = []
    a_terms: list[Node] = []
    reg_terms: list[Node] = []
    for rnd in dialog.rounds:
        q_tok, a_tok = rnd.question[0], rnd.answer[0]
        qlp = runner.question_logprobs()
        q_terms.append(runner.tape.pick(qlp, q_tok))
        alp = runner.answer_logprobs(q_tok)
        a_terms.append(runner.tape.pick(alp, a_tok))
        runner.commit_round(q_tok, a_tok)
        reg_terms.append(runner.tape.sq_dist(runner.predict(), y))
    return runner.tape, q_terms, a_terms, reg_terms


def supervised_loss_terms(q_net: QBotNet, a_net: ABotNet,
                          batch: list[CorpusDialog],
                          detach_prediction: bool = False,
                          backward_scale: float | None = None):
    """Mean question NLL, mean answer NLL, mean squared regression error
    over a batch of dialogs. With backward_scale set, also backpropagates
    that multiple of the summed loss."""
    if not batch:
        raise ValueError("empty batch")
    n_q = sum(len(d.rounds) for d in batch)
    nll_q = nll_a = reg = 0.0
    for d in batch:
        tape, q_terms, a_terms, reg_terms = _forced_dialog_terms(
            q_net, a_net, d, detach_prediction)
        terms = [(n, -1.0 / n_q) for n in q_terms]
        terms += [(n, -1.0 / n_q) for n in a_terms]
        terms += [(n, 1.0 / n_q) for n in reg_terms]
        node = tape.wsum(terms)
        nll_q -= sum(float(n.value) for n in q_terms) / n_q
        nll_a -= sum(float(n.value) for n in a_terms) / n_q
        reg += sum(float(n.value) for n in reg_terms) / n_q
        if backward_scale is not None:
            tape.backward(node, seed=backward_scale)
    return nll_q, nll_a, reg


def supervised_step(nets, batch: list[CorpusDialog], adam: AdamState,
                    flags: AblationFlags | None = None) -> float:
    """One teacher-forced optimizer step on a batch of corpus dialogs;
    returns mean question NLL + mean answer NLL + mean squared error."""
    q_net, a_net = nets
    nll_q, nll_a, reg = supervised_loss_terms(q_net, a_net, batch,
                                              backward_scale=1.0)
    apply_adam(adam, q_net, a_net, flags)
    return nll_q + nll_a + reg


# -- rollouts ----------------------------------------------------------------


@dataclass
class NeuralRollout:
    """One curriculum episode with everything the update step needs: the
    tape, per-round log-prob nodes (forced and sampled), squared-error
    nodes, and the plain episode record. Exploration episodes carry no
    final pair guess (final_guess is None); greedy evaluation owns that
    readout."""

    record: EpisodeRecord
    tape: object
    forced_q: list[Node]
    forced_a: list[Node]
    sampled_q: list[tuple[int, Node]]  # (round index, log-prob node)
    sampled_a: list[tuple[int, Node]]
    reg_terms: list[Node]
    curriculum_k: int


def rollout_neural(nets, instance: Instance, curriculum_k: int,
                   rng: SplitMix64, oracle: OracleCorpus) -> NeuralRollout:
    """Play one episode: rounds 1..K teacher-forced from the scripted
    dialog, rounds K+1..T sampled from the policies, a prediction and
    telescoping reward every round."""
    q_net, a_net = nets
    n_rounds = oracle.n_rounds
    if not 0 <= curriculum_k <= n_rounds:
        raise ValueError(f"curriculum_k {curriculum_k} outside [0, {n_rounds}]")
    forced = oracle.dialog_for(instance)
    runner = DialogRunner(q_net, a_net, instance)
    tape = runner.tape
    y = image_one_hot(instance.image.values)
    y_node = tape.const(y)

    predictions = [np.array(runner.predict().value)]
    rewards: list[float] = []
    forced_q: list[Node] = []
    forced_a: list[Node] = []
    sampled_q: list[tuple[int, Node]] = []
    sampled_a: list[tuple[int, Node]] = []
    reg_terms: list[Node] = []
    for t in range(n_rounds):
        qlp = runner.question_logprobs()
        if t < curriculum_k:
            q_tok = forced[t].question[0]
            forced_q.append(tape.pick(qlp, q_tok))
        else:
            q_tok = sample_symbol(np.exp(qlp.value), rng).token
            sampled_q.append((t, tape.pick(qlp, q_tok)))
        alp = runner.answer_logprobs(q_tok)
        if t < curriculum_k:
            a_tok = forced[t].answer[0]
            forced_a.append(tape.pick(alp, a_tok))
        else:
            a_tok = sample_symbol(np.exp(alp.value), rng).token
            sampled_a.append((t, tape.pick(alp, a_tok)))
        runner.commit_round(q_tok, a_tok)
        pred = runner.predict()
        reg_terms.append(tape.sq_dist(pred, y_node))
        predictions.append(np.array(pred.value))
        rewards.append(distance(predictions[-2], y) - distance(predictions[-1], y))

    record = EpisodeRecord(
        instance=instance,
        rounds=tuple(runner.rounds),
        predictions=tuple(predictions),
        rewards=tuple(rewards),
        final_guess=None,
    )
    return NeuralRollout(record=record, tape=tape, forced_q=forced_q,
                         forced_a=forced_a, sampled_q=sampled_q,
                         sampled_a=sampled_a, reg_terms=reg_terms,
                         curriculum_k=curriculum_k)


def replay_surrogate(nets, instance: Instance, rounds: tuple[Round, ...],
                     round_weights: list[float]):
    """Rebuild -sum_t w_t (log pi_Q + log pi_A) for fixed tokens; the
    finite-difference reference for the policy-gradient direction."""
    q_net, a_net = nets
    runner = DialogRunner(q_net, a_net, instance)
    terms = []
    for t, rnd in enumerate(rounds):
        qlp = runner.question_logprobs()
        terms.append((runner.tape.pick(qlp, rnd.question[0]), -round_weights[t]))
        alp = runner.answer_logprobs(rnd.question[0])
        terms.append((runner.tape.pick(alp, rnd.answer[0]), -round_weights[t]))
        runner.commit_round(rnd.question[0], rnd.answer[0])
    return runner.tape, runner.tape.wsum(terms)


# -- policy-gradient step ----------------------------------------------------


def reinforce_step(nets, episodes: list[NeuralRollout], adam: AdamState,
                   flags: AblationFlags,
                   sl_batch: list[CorpusDialog] | None = None) -> dict:
    """One combined optimizer step on a batch of rollouts.

    Sampled rounds contribute the policy-gradient surrogate (per-round
    reward times that round's log-probs), forced rounds their NLL, every
    round its squared regression error (dropped from the loss when
    freeze_f, though still reported). With multi_task, a corpus batch adds
    sl_weight * supervised loss and the surrogate is scaled by rl_weight.
    Returns per-term diagnostics.
    """
    q_net, a_net = nets
    if flags.multi_task and sl_batch is None:
        raise ValueError("multi_task requires an SL corpus batch")
    n_sampled = sum(len(ep.sampled_q) + len(ep.sampled_a) for ep in episodes)
    if n_sampled == 0:
        return {
            "warning": "no sampled rounds; skipped update",
            "rl_loss": 0.0, "sl_loss": 0.0, "reg_loss": 0.0,
            "mean_return": float(np.mean([sum(ep.record.rewards) for ep in episodes]))
            if episodes else 0.0,
            "n_sampled": 0,
        }

    n_ep = len(episodes)
    rl_scale = flags.rl_weight if flags.multi_task else 1.0
    n_forced_q = sum(len(ep.forced_q) for ep in episodes)
    n_forced_a = sum(len(ep.forced_a) for ep in episodes)

    rl_loss = sl_loss = reg_loss = 0.0
    for ep in episodes:
        r = ep.record.rewards
        terms = []
        for t, node in ep.sampled_q:
            terms.append((node, -r[t] * rl_scale / n_ep))
            rl_loss += -r[t] * float(node.value) / n_ep
        for t, node in ep.sampled_a:
            terms.append((node, -r[t] * rl_scale / n_ep))
            rl_loss += -r[t] * float(node.value) / n_ep
        for node in ep.forced_q:
            terms.append((node, -flags.sl_weight / max(1, n_forced_q)))
            sl_loss += -float(node.value) / max(1, n_forced_q)
        for node in ep.forced_a:
            terms.append((node, -flags.sl_weight / max(1, n_forced_a)))
            sl_loss += -float(node.value) / max(1, n_forced_a)
        for node in ep.reg_terms:
            if not flags.freeze_f:
                terms.append((node, 1.0 / n_ep))
            reg_loss += float(node.value) / n_ep
        ep.tape.backward(ep.tape.wsum(terms))

    if flags.multi_task:
        nq, na, rg = supervised_loss_terms(q_net, a_net, sl_batch,
                                           backward_scale=flags.sl_weight)
        sl_loss += nq + na + rg

    apply_adam(adam, q_net, a_net, flags)
    return {
        "rl_loss": rl_loss,
        "sl_loss": sl_loss,
        "reg_loss": reg_loss,
        "mean_return": float(np.mean([sum(ep.record.rewards) for ep in episodes])),
        "n_sampled": n_sampled,
    }


# -- training loop -----------------------------------------------------------


@dataclass
class TrainSettings:
    seed: int = 0
    n_rounds: int = 10
    sl_epochs: int = 15
    rl_epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    corpus_fraction: float = 1.0
    k_start: int | None = None  # None -> n_rounds - 1
    anneal_every: int = 1
    flags: AblationFlags = field(default_factory=AblationFlags)


@dataclass
class TrainResult:
    q_net: QBotNet
    a_net: ABotNet
    metrics: list[dict]
    adam: AdamState
    mt_cursor: int = 0
    mt_pass: int = 0


@dataclass
class NeuralResume:
    """Loop state restored from a checkpoint to continue a neural run.

    start_epoch counts completed epochs on the single global axis
    (supervised epochs first, then policy-gradient epochs). mt_cursor and
    mt_pass restore the multi-task corpus stream; the stream's order is
    recomputed from mt_pass, so only the two counters need persisting.
    """

    q_net: QBotNet
    a_net: ABotNet
    adam: AdamState
    start_epoch: int = 0
    mt_cursor: int = 0
    mt_pass: int = 0


def greedy_metrics(q_net: QBotNet, a_net: ABotNet, world: World,
                   n_rounds: int, instances=None) -> dict:
    """Greedy-play accuracy, mean episode return, and mean final-round
    percentile rank over the given instances (default: all)."""
    agents = NeuralAgents(q_net, a_net, world, n_rounds)
    if instances is None:
        instances = world.enumerate_instances()
    pool = list(world.enumerate_images())
    correct = 0
    returns = []
    percentiles = []
    for inst in instances:
        rec = agents.greedy_episode(inst)
        if world.check_prediction(inst, rec.final_guess):
            correct += 1
        returns.append(sum(rec.rewards))
        percentiles.append(percentile_rank(rec.predictions[-1], inst.image, pool))
    return {
        "accuracy": correct / len(instances),
        "mean_return": float(np.mean(returns)),
        "percentile_rank": float(np.mean(percentiles)),
    }


def _batches(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def train_neural(settings: TrainSettings, world: World | None = None,
                 corpus: OracleCorpus | None = None, on_epoch=None,
                 resume: NeuralResume | None = None) -> TrainResult:
    """Supervised pretraining then policy-gradient fine-tuning.

    Fully determined by settings: every shuffle and every episode draws
    from a seed derived from (settings.seed, phase, epoch, index), so a
    run resumed from epoch e is identical to one that never stopped.
    on_epoch(metrics_row, q_net, a_net, adam, loop_state) fires after each
    epoch; loop_state carries the multi-task stream counters a checkpoint
    needs for exact resumption.
    """
    if world is None:
        world = World()
    if corpus is None:
        corpus = generate_oracle_corpus(world, settings.seed,
                                        n_rounds=settings.n_rounds)
    if settings.corpus_fraction < 1.0:
        sl_corpus = corpus.subset(settings.corpus_fraction, settings.seed)
    else:
        sl_corpus = corpus
    if resume is not None:
        q_net, a_net, adam = resume.q_net, resume.a_net, resume.adam
        start_epoch = resume.start_epoch
    else:
        q_net = QBotNet(derive_seed(settings.seed, "q-net"),
                        n_tasks=world.n_tasks)
        a_net = ABotNet(derive_seed(settings.seed, "a-net"))
        adam = AdamState(lr=settings.lr)
        start_epoch = 0
    nets = (q_net, a_net)
    flags = settings.flags
    k_start = settings.k_start
    if k_start is None:
        k_start = settings.n_rounds - 1
    curriculum = CurriculumSchedule(k_start=k_start,
                                    anneal_every=settings.anneal_every)
    metrics: list[dict] = []
    instances = list(world.enumerate_instances())
    loop_state = {
        "mt_cursor": resume.mt_cursor if resume is not None else 0,
        "mt_pass": resume.mt_pass if resume is not None else 0,
    }

    def log_epoch(epoch, phase, k, loss_terms):
        row = {"epoch": epoch, "phase": phase, "k": k}
        row.update(greedy_metrics(q_net, a_net, world, settings.n_rounds))
        row.update(loss_terms)
        metrics.append(row)
        if on_epoch is not None:
            on_epoch(row, q_net, a_net, adam, loop_state)

    for epoch in range(start_epoch, settings.sl_epochs):
        order = list(range(len(sl_corpus.dialogs)))
        SplitMix64(derive_seed(settings.seed, "sl-shuffle", epoch)).shuffle(order)
        total = 0.0
        n_batches = 0
        for batch_idx in _batches(order, settings.batch_size):
            batch = [sl_corpus.dialogs[i] for i in batch_idx]
            total += supervised_step(nets, batch, adam, flags)
            n_batches += 1
        log_epoch(epoch, "sl", k_start, {"loss": total / max(1, n_batches)})

    mt_cursor = loop_state["mt_cursor"]
    mt_pass = loop_state["mt_pass"]
    mt_order: list[int] = []
    if mt_pass > 0:
        # The stream's current pass was shuffled when mt_pass was one lower.
        mt_order = list(range(len(sl_corpus.dialogs)))
        SplitMix64(derive_seed(settings.seed, "mt-shuffle",
                               mt_pass - 1)).shuffle(mt_order)
    start_rl = max(0, start_epoch - settings.sl_epochs)
    for epoch in range(start_rl, settings.rl_epochs):
        k = curriculum.k_for_epoch(epoch)
        order = list(range(len(instances)))
        SplitMix64(derive_seed(settings.seed, "rl-shuffle", epoch)).shuffle(order)
        sums: dict[str, float] = {}
        n_steps = 0
        idx = 0
        for batch_idx in _batches(order, settings.batch_size):
            episodes = []
            for i in batch_idx:
                rng = SplitMix64(derive_seed(settings.seed, "episode", epoch, idx))
                episodes.append(rollout_neural(nets, instances[i], k, rng, corpus))
                idx += 1
            sl_batch = None
            if flags.multi_task:
                sl_batch = []
                for _ in range(settings.batch_size):
                    if mt_cursor == len(mt_order):
                        mt_order = list(range(len(sl_corpus.dialogs)))
                        SplitMix64(derive_seed(settings.seed, "mt-shuffle",
                                               mt_pass)).shuffle(mt_order)
                        mt_cursor = 0
                        mt_pass += 1
                    sl_batch.append(sl_corpus.dialogs[mt_order[mt_cursor]])
                    mt_cursor += 1
            diag = reinforce_step(nets, episodes, adam, flags, sl_batch)
            for key in ("rl_loss", "sl_loss", "reg_loss"):
                sums[key] = sums.get(key, 0.0) + diag[key]
            n_steps += 1
        loss_terms = {key: val / max(1, n_steps) for key, val in sums.items()}
        loop_state["mt_cursor"] = mt_cursor
        loop_state["mt_pass"] = mt_pass
        log_epoch(settings.sl_epochs + epoch, "rl", k, loss_terms)

    return TrainResult(q_net=q_net, a_net=a_net, metrics=metrics, adam=adam,
                       mt_cursor=mt_cursor, mt_pass=mt_pass)
