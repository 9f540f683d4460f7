"""Hand-coded optimal protocol: scripted dialogs, tables, and agents.

The canonical protocol is the identity mapping: question symbol k asks for
attribute k, and the answer token is that attribute's value index. A
questioner following it asks the task's first attribute, then the second,
then the remaining one, cycling if the dialog is longer. Two rounds already
pin down the pair; three pin down the whole image.

ScriptedProtocol generalizes the mapping (any bijection of symbols to
attributes, any per-attribute value permutation) so alternative groundings
can be expressed and fed to the protocol analyzer.

The scripted dialogs double as the supervised corpus source and as the
generator of question-table / answer-table entries that play the game
perfectly, which gives the trainers and the analyzer a known-good fixture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dialog import (
    A_SIDE,
    EpisodeRecord,
    Q_SIDE,
    Round,
    round_reward,
)
from .tabular import QTable, TabularGame, mc_update
from .world import Instance, TaskSpec, World


@dataclass(frozen=True)
class ScriptedProtocol:
    """A fixed grounding: which attribute each question symbol queries, and
    which answer token encodes each value of that attribute."""

    symbol_to_attribute: tuple[int, ...] = (0, 1, 2)
    value_to_answer: tuple[tuple[int, ...], ...] = (
        (0, 1, 2, 3), (0, 1, 2, 3), (0, 1, 2, 3),
    )

    def __post_init__(self):
        n = len(self.symbol_to_attribute)
        if sorted(self.symbol_to_attribute) != list(range(n)):
            raise ValueError("symbol_to_attribute must be a bijection")
        for row in self.value_to_answer:
            if sorted(row) != list(range(len(row))):
                raise ValueError("value_to_answer rows must be permutations")

    def attribute_for(self, symbol: int) -> int:
        return self.symbol_to_attribute[symbol]

    def symbol_for(self, attribute: int) -> int:
        return self.symbol_to_attribute.index(attribute)

    def answer_token(self, attribute: int, value: int) -> int:
        return self.value_to_answer[attribute][value]

    def value_from_answer(self, attribute: int, token: int) -> int:
        return self.value_to_answer[attribute].index(token)


IDENTITY_PROTOCOL = ScriptedProtocol()


def question_schedule(task: TaskSpec, n_rounds: int,
                      n_attributes: int = 3) -> tuple[int, ...]:
    """Attribute to ask per round: the task's first, its second, then the
    remaining attributes, after which the cycle direction and phase depend
    on the task id. The task dependence keeps the round index alone from
    determining the question, so a listener cannot answer by position.
    """
    base = [task.first, task.second]
    base += [k for k in range(n_attributes) if k not in base]
    sched = list(base[:n_rounds])
    direction = 1 + task.id % (n_attributes - 1)
    for t in range(len(base), n_rounds):
        sched.append((task.id + (t - len(base)) * direction) % n_attributes)
    return tuple(sched)


def scripted_dialog(instance: Instance, n_rounds: int,
                    protocol: ScriptedProtocol = IDENTITY_PROTOCOL,
                    n_attributes: int = 3) -> tuple[Round, ...]:
    """The protocol's dialog for one instance."""
    rounds = []
    for attr in question_schedule(instance.task, n_rounds, n_attributes):
        q_tok = protocol.symbol_for(attr)
        a_tok = protocol.answer_token(attr, instance.image.values[attr])
        rounds.append(Round(question=(q_tok,), answer=(a_tok,)))
    return tuple(rounds)


def oracle_prediction_vector(world: World, known: dict[int, int]) -> np.ndarray:
    """Perfect-regressor output given the attribute values learned so far:
    one-hot on known attributes, uniform over values elsewhere."""
    vec = np.full(world.target_dim, 1.0 / world.n_values)
    for attr, value in known.items():
        lo = attr * world.n_values
        vec[lo:lo + world.n_values] = 0.0
        vec[lo + value] = 1.0
    return vec


def scripted_predictions(world: World, instance: Instance,
                         rounds: tuple[Round, ...],
                         protocol: ScriptedProtocol = IDENTITY_PROTOCOL) -> list[np.ndarray]:
    """Per-round perfect-regressor predictions (index 0 = before any round),
    accumulating each answered attribute."""
    known: dict[int, int] = {}
    preds = [oracle_prediction_vector(world, known)]
    for rnd in rounds:
        attr = protocol.attribute_for(rnd.question[0])
        known[attr] = protocol.value_from_answer(attr, rnd.answer[0])
        preds.append(oracle_prediction_vector(world, known))
    return preds


class ScriptedAgents:
    """Protocol-following players with a perfect regressor; same greedy
    episode interface as the learned agents."""

    def __init__(self, world: World, n_rounds: int = 10,
                 protocol: ScriptedProtocol = IDENTITY_PROTOCOL):
        self.world = world
        self.n_rounds = n_rounds
        self.protocol = protocol

    def greedy_episode(self, instance: Instance) -> EpisodeRecord:
        world = self.world
        rounds = scripted_dialog(instance, self.n_rounds, self.protocol,
                                 world.n_attributes)
        preds = scripted_predictions(world, instance, rounds, self.protocol)
        y = world.target_vector(instance.image)
        rewards = tuple(
            round_reward(y, preds[t], preds[t + 1]) for t in range(len(rounds))
        )
        task = instance.task
        guess = world.pair(
            world.value(task.first, instance.image.values[task.first]),
            world.value(task.second, instance.image.values[task.second]),
        )
        return EpisodeRecord(
            instance=instance,
            rounds=rounds,
            predictions=tuple(preds),
            rewards=rewards,
            final_guess=guess,
        )


def oracle_tables(game: TabularGame,
                  protocol: ScriptedProtocol = IDENTITY_PROTOCOL) -> tuple[QTable, QTable]:
    """Question/answer tables that play the scripted protocol perfectly.

    Built by crediting a +1 return to every (state, action) the protocol
    visits; unvisited actions stay at an init strictly below +1, so greedy
    play reproduces the protocol exactly and earns mean reward 1.0.
    """
    q_table = QTable(init_value=0.0)
    a_table = QTable(init_value=0.0)
    world = game.world
    for inst in world.enumerate_instances():
        rounds = scripted_dialog(inst, game.n_rounds, protocol,
                                 world.n_attributes)
        rec = EpisodeRecord(
            instance=inst,
            rounds=rounds,
            predictions=(),
            rewards=(1.0,),
            final_guess=world.pair_from_index(world.correct_pair_index(inst)),
        )
        mc_update(game, q_table, rec, Q_SIDE)
        mc_update(game, a_table, rec, A_SIDE)
    return q_table, a_table
