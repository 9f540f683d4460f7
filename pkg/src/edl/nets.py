"""Small recurrent policy networks with a hand-rolled reverse-mode tape.

The questioner encodes each past round's (question, answer) token pair with
a fact cell, folds the fact encodings into a history state (the task
embedding is the first history step), and reads both its next-question
distribution and a 12-d regression prediction off that state. The answerer
embeds its image's attribute one-hot, encodes the pending question and the
previous round's fact, and folds [image; question; previous fact] into its
own history state before emitting an answer distribution.

Cells are single-layer tanh recurrences h' = tanh(W [h; x] + b) with 32-d
hidden states and 16-d token embeddings. All math is float64 numpy.

Gradients come from a tape: every operation appends a closure that routes
the output gradient to its inputs, and backward() replays the tape in
reverse. Parameter gradients accumulate additively into each ParamBlock's
.grad until explicitly zeroed, so losses may be built from many separate
forward passes.
"""

from __future__ import annotations

import numpy as np

from .dialog import (
    A_SIDE,
    A_TOKEN_LABELS,
    AState,
    Q_SIDE,
    Q_TOKEN_LABELS,
    QState,
    Round,
    Symbol,
)
from .rng import SplitMix64, derive_seed

Q_VOCAB = len(Q_TOKEN_LABELS)
A_VOCAB = len(A_TOKEN_LABELS)

HIDDEN_DIM = 32
EMBED_DIM = 16


class ParamBlock:
    """Named parameter array with a matching gradient accumulator."""

    __slots__ = ("name", "values", "grad")

    def __init__(self, name: str, values: np.ndarray):
        self.name = name
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"ParamBlock({self.name}, shape={self.values.shape})"


class Node:
    """One tape value: an ndarray plus the gradient flowing back into it."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None


def _acc(node: Node, g) -> None:
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


class Tape:
    """Records forward operations; backward() replays them in reverse."""

    def __init__(self):
        self._entries: list[tuple[Node, object]] = []

    def _emit(self, value, fn) -> Node:
        node = Node(value)
        self._entries.append((node, fn))
        return node

    # leaves ---------------------------------------------------------------

    def const(self, value) -> Node:
        return Node(value)

    def param(self, block: ParamBlock) -> Node:
        node = Node(block.values)

        def fn(g):
            block.grad += g

        self._entries.append((node, fn))
        return node

    # ops ------------------------------------------------------------------

    def embed(self, mat: Node, row: int) -> Node:
        def fn(g, mat=mat, row=row):
            if mat.grad is None:
                mat.grad = np.zeros_like(mat.value)
            mat.grad[row] += g

        return self._emit(mat.value[row], fn)

    def affine(self, W: Node, b: Node, x: Node) -> Node:
        def fn(g, W=W, b=b, x=x):
            if W.grad is None:
                W.grad = np.zeros_like(W.value)
            W.grad += np.outer(g, x.value)
            _acc(b, g)
            _acc(x, W.value.T @ g)

        return self._emit(W.value @ x.value + b.value, fn)

    def tanh(self, x: Node) -> Node:
        v = np.tanh(x.value)

        def fn(g, x=x, v=v):
            _acc(x, g * (1.0 - v * v))

        return self._emit(v, fn)

    def concat(self, *xs: Node) -> Node:
        sizes = [x.value.size for x in xs]

        def fn(g, xs=xs, sizes=sizes):
            off = 0
            for x, n in zip(xs, sizes):
                _acc(x, g[off : off + n])
                off += n

        return self._emit(np.concatenate([x.value for x in xs]), fn)

    def log_softmax(self, x: Node) -> Node:
        m = np.max(x.value)
        shifted = x.value - m
        lse = m + np.log(np.sum(np.exp(shifted)))
        v = x.value - lse
        p = np.exp(v)

        def fn(g, x=x, p=p):
            _acc(x, g - p * np.sum(g))

        return self._emit(v, fn)

    def pick(self, x: Node, i: int) -> Node:
        def fn(g, x=x, i=i):
            if x.grad is None:
                x.grad = np.zeros_like(x.value)
            x.grad[i] += g

        return self._emit(x.value[i], fn)

    def sq_dist(self, a: Node, b: Node) -> Node:
        d = a.value - b.value

        def fn(g, a=a, b=b, d=d):
            _acc(a, 2.0 * d * g)
            _acc(b, -2.0 * d * g)

        return self._emit(np.dot(d, d), fn)

    def wsum(self, terms: list[tuple[Node, float]]) -> Node:
        """Weighted sum of scalar nodes."""
        v = sum(float(t.value) * w for t, w in terms)

        def fn(g, terms=terms):
            for t, w in terms:
                _acc(t, w * g)

        return self._emit(v, fn)

    def detach(self, x: Node) -> Node:
        return Node(x.value.copy())

    # ------------------------------------------------------------------

    def backward(self, root: Node, seed=1.0) -> None:
        """Propagate d(root)/d(param) into every ParamBlock on the tape."""
        _acc(root, np.asarray(seed, dtype=np.float64))
        for node, fn in reversed(self._entries):
            if node.grad is not None:
                fn(node.grad)


def _init_block(name: str, shape: tuple[int, ...], seed: int) -> ParamBlock:
    # stream keyed by block name: layout changes never shift other blocks
    rng = SplitMix64(derive_seed(seed, "init", name))
    n = int(np.prod(shape))
    vals = rng.uniform_array(-0.1, 0.1, n).reshape(shape)
    return ParamBlock(name, vals)


class RecurrentCell:
    """h' = tanh(W [h; x] + b)."""

    def __init__(self, W: ParamBlock, b: ParamBlock):
        self.W = W
        self.b = b
        self.hidden_dim = W.shape[0]
        self.input_dim = W.shape[1] - W.shape[0]

    def step(self, tape: Tape, h: Node, x: Node) -> Node:
        W = tape.param(self.W)
        b = tape.param(self.b)
        return tape.tanh(tape.affine(W, b, tape.concat(h, x)))


class _NetBase:
    def blocks(self) -> list[ParamBlock]:
        return list(self._blocks)

    def zero_grad(self) -> None:
        for blk in self._blocks:
            blk.zero_grad()

    def block(self, name: str) -> ParamBlock:
        for blk in self._blocks:
            if blk.name == name:
                return blk
        raise KeyError(name)

    @property
    def n_params(self) -> int:
        return sum(b.size for b in self._blocks)


class QBotNet(_NetBase):
    """Questioner: task + dialog history in, question distribution and
    regression prediction out. Never sees the image.

    Embedding matrix rows: questioner tokens first, answer tokens after.
    The history cell's input has a task slot and a fact slot; the task
    embedding rides the task slot at every step (step 0 carries it with an
    empty fact slot), so the prompt never has to survive the whole
    recurrence unaided. Fact encodings ride the fact slot from step 1 on.
    """

    def __init__(self, seed: int, n_tasks: int = 6, hidden_dim: int = HIDDEN_DIM,
                 embed_dim: int = EMBED_DIM, target_dim: int = 12):
        h, e = hidden_dim, embed_dim
        self.hidden_dim = h
        self.embed_dim = e
        self.target_dim = target_dim
        self.sym_emb = _init_block("q.sym_emb", (Q_VOCAB + A_VOCAB, e), seed)
        self.task_emb = _init_block("q.task_emb", (n_tasks, e), seed)
        self.fact_cell = RecurrentCell(
            _init_block("q.fact.W", (h, h + e), seed),
            _init_block("q.fact.b", (h,), seed),
        )
        self.hist_cell = RecurrentCell(
            _init_block("q.hist.W", (h, h + e + h), seed),
            _init_block("q.hist.b", (h,), seed),
        )
        self.head_W = _init_block("q.head.W", (Q_VOCAB, h), seed)
        self.head_b = _init_block("q.head.b", (Q_VOCAB,), seed)
        self.reg_W = _init_block("q.reg.W", (target_dim, h), seed)
        self.reg_b = _init_block("q.reg.b", (target_dim,), seed)
        self._blocks = [
            self.sym_emb, self.task_emb,
            self.fact_cell.W, self.fact_cell.b,
            self.hist_cell.W, self.hist_cell.b,
            self.head_W, self.head_b, self.reg_W, self.reg_b,
        ]


class ABotNet(_NetBase):
    """Answerer: image one-hot + dialog history + pending question in,
    answer distribution out. Never sees the task. The history encoder
    takes one image-only priming step before the first round."""

    def __init__(self, seed: int, hidden_dim: int = HIDDEN_DIM,
                 embed_dim: int = EMBED_DIM, image_dim: int = 12):
        h, e = hidden_dim, embed_dim
        self.hidden_dim = h
        self.embed_dim = e
        self.image_dim = image_dim
        self.sym_emb = _init_block("a.sym_emb", (Q_VOCAB + A_VOCAB, e), seed)
        self.img_W = _init_block("a.img.W", (e, image_dim), seed)
        self.img_b = _init_block("a.img.b", (e,), seed)
        self.ques_cell = RecurrentCell(
            _init_block("a.ques.W", (h, h + e), seed),
            _init_block("a.ques.b", (h,), seed),
        )
        self.fact_cell = RecurrentCell(
            _init_block("a.fact.W", (h, h + e), seed),
            _init_block("a.fact.b", (h,), seed),
        )
        self.hist_cell = RecurrentCell(
            _init_block("a.hist.W", (h, h + e + h + h), seed),
            _init_block("a.hist.b", (h,), seed),
        )
        self.head_W = _init_block("a.head.W", (A_VOCAB, h), seed)
        self.head_b = _init_block("a.head.b", (A_VOCAB,), seed)
        self._blocks = [
            self.sym_emb, self.img_W, self.img_b,
            self.ques_cell.W, self.ques_cell.b,
            self.fact_cell.W, self.fact_cell.b,
            self.hist_cell.W, self.hist_cell.b,
            self.head_W, self.head_b,
        ]


def image_one_hot(values: tuple[int, ...], n_values: int = 4) -> np.ndarray:
    """Concatenated per-attribute one-hot, matching the world's target
    encoding (attribute k's value v lights index k*n_values + v)."""
    vec = np.zeros(len(values) * n_values)
    for k, v in enumerate(values):
        vec[k * n_values + v] = 1.0
    return vec


class QForwardResult:
    __slots__ = ("question_probs", "question_logprobs", "hidden", "prediction", "tape")

    def __init__(self, question_probs, question_logprobs, hidden, prediction, tape):
        self.question_probs = question_probs
        self.question_logprobs = question_logprobs
        self.hidden = hidden
        self.prediction = prediction
        self.tape = tape


class AForwardResult:
    __slots__ = ("answer_probs", "answer_logprobs", "hidden", "tape")

    def __init__(self, answer_probs, answer_logprobs, hidden, tape):
        self.answer_probs = answer_probs
        self.answer_logprobs = answer_logprobs
        self.hidden = hidden
        self.tape = tape


def _encode_fact(tape: Tape, cell: RecurrentCell, emb: Node,
                 q_tok: int, a_tok: int, hidden_dim: int) -> Node:
    h = tape.const(np.zeros(hidden_dim))
    h = cell.step(tape, h, tape.embed(emb, q_tok))
    h = cell.step(tape, h, tape.embed(emb, Q_VOCAB + a_tok))
    return h


def q_forward(net: QBotNet, state: QState,
              detach_prediction: bool = False) -> QForwardResult:
    """Unroll the questioner on a dialog state.

    Returns the next-question distribution, the history hidden state, and
    the regression prediction read from it. With detach_prediction the
    prediction is computed from a gradient-stopped copy of the hidden
    state, so its loss reaches only the regressor blocks.
    """
    tape = Tape()
    emb = tape.param(net.sym_emb)
    task_e = tape.embed(tape.param(net.task_emb), state.prompt)
    zero_fact = tape.const(np.zeros(net.hidden_dim))

    h = tape.const(np.zeros(net.hidden_dim))
    h = net.hist_cell.step(tape, h, tape.concat(task_e, zero_fact))
    for rnd in state.history:
        fact = _encode_fact(tape, net.fact_cell, emb,
                            rnd.question[0], rnd.answer[0], net.hidden_dim)
        h = net.hist_cell.step(tape, h, tape.concat(task_e, fact))

    logits = tape.affine(tape.param(net.head_W), tape.param(net.head_b), h)
    logprobs = tape.log_softmax(logits)
    probs = np.exp(logprobs.value)

    reg_in = tape.detach(h) if detach_prediction else h
    pred = tape.affine(tape.param(net.reg_W), tape.param(net.reg_b), reg_in)
    return QForwardResult(probs, logprobs, h, pred, tape)


def a_forward(net: ABotNet, state: AState) -> AForwardResult:
    """Unroll the answerer on a dialog state with a pending question."""
    if state.pending_question is None:
        raise ValueError("a_forward needs a pending question")
    tape = Tape()
    emb = tape.param(net.sym_emb)
    img = tape.affine(tape.param(net.img_W), tape.param(net.img_b),
                      tape.const(image_one_hot(state.image.values)))

    questions = [rnd.question[0] for rnd in state.history]
    questions.append(state.pending_question[0])

    # Priming step: one image-only pass so the first real round sees a
    # nonzero recurrent state (mirrors the questioner's task step).
    zero_h = tape.const(np.zeros(net.hidden_dim))
    h = net.hist_cell.step(tape, tape.const(np.zeros(net.hidden_dim)),
                           tape.concat(img, zero_h, zero_h))
    for t, q_tok in enumerate(questions):
        # The question encoder starts from the running dialog state, so the
        # question is contextualized against the image and history.
        q_enc = net.ques_cell.step(tape, h, tape.embed(emb, q_tok))
        if t == 0:
            fact = tape.const(np.zeros(net.hidden_dim))
        else:
            prev = state.history[t - 1]
            fact = _encode_fact(tape, net.fact_cell, emb,
                                prev.question[0], prev.answer[0], net.hidden_dim)
        h = net.hist_cell.step(tape, h, tape.concat(img, q_enc, fact))

    logits = tape.affine(tape.param(net.head_W), tape.param(net.head_b), h)
    logprobs = tape.log_softmax(logits)
    return AForwardResult(np.exp(logprobs.value), logprobs, h, tape)


def _check_distribution(dist: np.ndarray) -> None:
    if abs(float(np.sum(dist)) - 1.0) > 1e-6 or np.any(dist < -1e-12):
        raise ValueError(f"not a probability distribution: {dist}")


def _side_for_length(n: int) -> str:
    if n == Q_VOCAB:
        return Q_SIDE
    if n == A_VOCAB:
        return A_SIDE
    raise ValueError(f"cannot infer side from distribution of length {n}")


def sample_symbol(dist: np.ndarray, rng: SplitMix64, side: str | None = None) -> Symbol:
    _check_distribution(dist)
    if side is None:
        side = _side_for_length(len(dist))
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(dist):
        acc += p
        if u < acc:
            return Symbol(side, i)
    return Symbol(side, len(dist) - 1)


def greedy_symbol(dist: np.ndarray, side: str | None = None) -> Symbol:
    _check_distribution(dist)
    if side is None:
        side = _side_for_length(len(dist))
    return Symbol(side, int(np.argmax(dist)))


class DialogRunner:
    """Incremental episode builder on one tape.

    q_forward and a_forward re-unroll the whole history per call, which is
    O(T^2) cell steps over an episode; the runner caches both hidden states
    and the previous fact encoding so an episode costs O(T). Values are
    bit-identical to the per-state forwards: each node is the same primitive
    op applied to the same inputs, and op interleaving cannot change that.

    Call order per round: question_logprobs() -> answer_logprobs(q_token)
    -> commit_round(q_token, a_token); predict() is valid any time between
    rounds and reads the questioner state after the last committed round.
    """

    def __init__(self, q_net: QBotNet, a_net: ABotNet, instance,
                 detach_prediction: bool = False):
        self.q_net = q_net
        self.a_net = a_net
        self.instance = instance
        self.detach_prediction = detach_prediction
        t = self.tape = Tape()
        self._q_emb = t.param(q_net.sym_emb)
        self._a_emb = t.param(a_net.sym_emb)
        self._img = t.affine(t.param(a_net.img_W), t.param(a_net.img_b),
                             t.const(image_one_hot(instance.image.values)))
        self._task_e = t.embed(t.param(q_net.task_emb), instance.task.id)
        h0 = t.const(np.zeros(q_net.hidden_dim))
        self._h_q = q_net.hist_cell.step(
            t, h0, t.concat(self._task_e, t.const(np.zeros(q_net.hidden_dim))))
        za = t.const(np.zeros(a_net.hidden_dim))
        self._h_a = a_net.hist_cell.step(
            t, t.const(np.zeros(a_net.hidden_dim)), t.concat(self._img, za, za))
        self._a_fact_prev: Node | None = None
        self._awaiting_commit = False
        self.rounds: list = []

    def question_logprobs(self) -> Node:
        t = self.tape
        logits = t.affine(t.param(self.q_net.head_W),
                          t.param(self.q_net.head_b), self._h_q)
        return t.log_softmax(logits)

    def predict(self) -> Node:
        t = self.tape
        reg_in = t.detach(self._h_q) if self.detach_prediction else self._h_q
        return t.affine(t.param(self.q_net.reg_W),
                        t.param(self.q_net.reg_b), reg_in)

    def answer_logprobs(self, q_token: int) -> Node:
        if self._awaiting_commit:
            raise RuntimeError("commit_round before starting the next round")
        t = self.tape
        q_enc = self.a_net.ques_cell.step(t, self._h_a,
                                          t.embed(self._a_emb, q_token))
        fact = self._a_fact_prev
        if fact is None:
            fact = t.const(np.zeros(self.a_net.hidden_dim))
        self._h_a = self.a_net.hist_cell.step(
            t, self._h_a, t.concat(self._img, q_enc, fact))
        self._awaiting_commit = True
        logits = t.affine(t.param(self.a_net.head_W),
                          t.param(self.a_net.head_b), self._h_a)
        return t.log_softmax(logits)

    def commit_round(self, q_token: int, a_token: int) -> None:
        if not self._awaiting_commit:
            raise RuntimeError("answer_logprobs must run before commit_round")
        t = self.tape
        q_fact = _encode_fact(t, self.q_net.fact_cell, self._q_emb,
                              q_token, a_token, self.q_net.hidden_dim)
        self._h_q = self.q_net.hist_cell.step(
            t, self._h_q, t.concat(self._task_e, q_fact))
        self._a_fact_prev = _encode_fact(t, self.a_net.fact_cell, self._a_emb,
                                         q_token, a_token, self.a_net.hidden_dim)
        self._awaiting_commit = False
        self.rounds.append(Round(question=(q_token,), answer=(a_token,)))


def fd_check(net, state, loss_spec, h: float = 1e-5) -> float:
    """Max relative error between backward's gradients and central finite
    differences of the same scalar loss.

    net may be one network or a tuple of networks; loss_spec is a callable
    (net, state) -> (tape, scalar Node) that rebuilds the loss from scratch
    (finite differencing re-runs it under perturbed parameters).
    """
    nets = net if isinstance(net, (tuple, list)) else (net,)
    blocks = [b for n in nets for b in n.blocks()]

    def loss_value() -> float:
        _, node = loss_spec(net, state)
        return float(node.value)

    for b in blocks:
        b.zero_grad()
    tape, node = loss_spec(net, state)
    tape.backward(node)
    analytic = {b.name: b.grad.copy() for b in blocks}

    worst = 0.0
    for b in blocks:
        flat = b.values.reshape(-1)
        a_flat = analytic[b.name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(a_flat[i] - numeric) / max(1e-8, abs(numeric))
            if err > worst:
                worst = err
    return worst
