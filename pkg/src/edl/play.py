"""Interactive play against a checkpointed partner.

The human takes one seat and a trained model the other. Side "q": you are
the questioner — you see the task, type one question token per round, and
guess the two attribute values at the end while the model answers from the
hidden image. Side "a": you see the image and answer the model's questions;
the model guesses at the end.

Line-oriented: every prompt reads exactly one token; anything that is not
an in-vocabulary integer re-prompts. EOF at any prompt ends the session
cleanly.
"""

from __future__ import annotations

import sys

import numpy as np

from .dialog import a_token_label, q_token_label
from .evaluation import NeuralAgents, TabularAgents, readout_pair
from .experiment import agents_from_checkpoint
from .nets import DialogRunner, greedy_symbol
from .rng import SplitMix64, derive_seed
from .tabular import EpsGreedyConfig, select_action


def _prompt_token(inp, out, label: str, n: int) -> int | None:
    """One integer in [0, n) per line; re-prompts until valid, None on EOF."""
    while True:
        out.write(f"{label} [0-{n - 1}]: ")
        out.flush()
        line = inp.readline()
        if line == "":
            out.write("\n(end of input)\n")
            return None
        text = line.strip()
        if not text:
            continue
        try:
            value = int(text)
        except ValueError:
            out.write(f"  '{text}' is not a token; enter an integer\n")
            continue
        if 0 <= value < n:
            return value
        out.write(f"  token {value} is out of vocabulary (0..{n - 1})\n")


class _TabularSeats:
    """Greedy table play, advanced one exchange at a time."""

    def __init__(self, agents: TabularAgents):
        self.game = agents.game
        self.q_table = agents.q_table
        self.a_table = agents.a_table
        self._cfg = EpsGreedyConfig()

    def reset(self, instance):
        self.instance = instance
        self.round = 0
        self._qcode = instance.task.id
        self._acode = instance.image.id

    @property
    def q_vocab(self):
        return self.game.q_vocab

    @property
    def a_vocab(self):
        return self.game.a_vocab

    @property
    def n_rounds(self):
        return self.game.n_rounds

    def machine_question(self) -> int:
        state = self.game.q_offsets[self.round] + self._qcode
        return select_action(self.q_table, state, self.game.q_vocab,
                             self._cfg, "greedy")

    def machine_answer(self, q_token: int) -> int:
        state = (self.game.a_offsets[self.round]
                 + self._acode * self.game.q_vocab + q_token)
        return select_action(self.a_table, state, self.game.a_vocab,
                             self._cfg, "greedy")

    def observe(self, q_token: int, a_token: int) -> None:
        step = q_token * self.game.a_vocab + a_token
        rc = self.game.q_vocab * self.game.a_vocab
        self._qcode = self._qcode * rc + step
        self._acode = self._acode * rc + step
        self.round += 1

    def machine_guess(self):
        world = self.game.world
        state = self.game.q_offsets[self.game.n_rounds] + self._qcode
        index = select_action(self.q_table, state, world.n_pairs,
                              self._cfg, "greedy")
        return world.pair_from_index(index)


class _NeuralSeats:
    """Greedy recurrent-policy play via the incremental dialog runner."""

    def __init__(self, agents: NeuralAgents):
        self.q_net = agents.q_net
        self.a_net = agents.a_net
        self.world = agents.world
        self.n_rounds = agents.n_rounds
        self.q_vocab = 3
        self.a_vocab = 4

    def reset(self, instance):
        self.instance = instance
        self._runner = DialogRunner(self.q_net, self.a_net, instance)
        self._scored_question = None

    def machine_question(self) -> int:
        probs = np.exp(self._runner.question_logprobs().value)
        return greedy_symbol(probs, "Q").token

    def machine_answer(self, q_token: int) -> int:
        probs = np.exp(self._runner.answer_logprobs(q_token).value)
        self._scored_question = q_token
        return greedy_symbol(probs).token

    def observe(self, q_token: int, a_token: int) -> None:
        # The runner computes the answerer's dialog state while scoring
        # answers; when a human supplied the answer, make that pass happen.
        if self._scored_question != q_token:
            self._runner.answer_logprobs(q_token)
        self._runner.commit_round(q_token, a_token)
        self._scored_question = None

    def machine_guess(self):
        pred = np.asarray(self._runner.predict().value)
        return readout_pair(self.world, self.instance.task, pred)


def _pick_instance(world, seed: int):
    instances = world.enumerate_instances()
    rng = SplitMix64(derive_seed(seed, "play"))
    return instances[rng.randrange(len(instances))]


def _pair_text(world, pair) -> str:
    return (f"{world.value_label(pair.first.kind, pair.first.value_index)} "
            f"{world.value_label(pair.second.kind, pair.second.value_index)}")


def play(checkpoint_path: str, side: str, seed: int = 0,
         rounds: int | None = None, inp=None, out=None) -> int:
    """Run one interactive episode. Returns a process exit code."""
    inp = inp if inp is not None else sys.stdin
    out = out if out is not None else sys.stdout
    if side not in ("q", "a"):
        out.write(f"side must be 'q' or 'a', got {side!r}\n")
        return 2
    agents, world, ckpt = agents_from_checkpoint(checkpoint_path, rounds)
    if ckpt.mode == "tabular":
        seats = _TabularSeats(agents)
    else:
        seats = _NeuralSeats(agents)
    n_rounds = rounds if rounds is not None else seats.n_rounds
    instance = _pick_instance(world, seed)
    seats.reset(instance)
    task = instance.task

    if side == "q":
        out.write("You are the questioner; the model answers from a "
                  "hidden image.\n")
        out.write(f"Task: report the image's {world.describe_task(task)}.\n")
        out.write(f"Question vocabulary: 0..{seats.q_vocab - 1}; "
                  f"{n_rounds} rounds.\n")
        for t in range(n_rounds):
            q_tok = _prompt_token(inp, out, f"round {t} question", seats.q_vocab)
            if q_tok is None:
                return 0
            a_tok = seats.machine_answer(q_tok)
            out.write(f"  model answers: {a_tok} "
                      f"({a_token_label(a_tok)})\n")
            seats.observe(q_tok, a_tok)
        guesses = []
        for kind in (task.first, task.second):
            labels = ", ".join(
                f"{v}={world.value_label(kind, v)}"
                for v in range(world.n_values))
            v = _prompt_token(
                inp, out,
                f"guess {world.attribute_name(kind)} ({labels})",
                world.n_values)
            if v is None:
                return 0
            guesses.append(world.value(kind, v))
        pair = world.pair(guesses[0], guesses[1])
        if world.check_prediction(instance, pair):
            out.write("Correct guess! The image was "
                      f"'{world.describe_image(instance.image)}'.\n")
        else:
            out.write("Wrong: the image was "
                      f"'{world.describe_image(instance.image)}'.\n")
        return 0

    out.write("You are the answerer; answer from the image below while the "
              "model asks and then guesses.\n")
    out.write(f"Image: {world.describe_image(instance.image)}\n")
    out.write(f"Model task: {world.describe_task(task)} (hidden from you in "
              "a real game).\n")
    out.write(f"Answer vocabulary: 0..{seats.a_vocab - 1}; "
              f"{n_rounds} rounds.\n")
    for t in range(n_rounds):
        q_tok = seats.machine_question()
        out.write(f"round {t}: model asks {q_tok} "
                  f"({q_token_label(q_tok)})\n")
        a_tok = _prompt_token(inp, out, f"round {t} answer", seats.a_vocab)
        if a_tok is None:
            return 0
        seats.observe(q_tok, a_tok)
    pair = seats.machine_guess()
    out.write(f"Model guesses: {_pair_text(world, pair)}\n")
    if world.check_prediction(instance, pair):
        out.write("Correct guess! The model identified the image "
                  "attributes.\n")
    else:
        out.write("Wrong: the image was "
                  f"'{world.describe_image(instance.image)}'.\n")
    return 0
