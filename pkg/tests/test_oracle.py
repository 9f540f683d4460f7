"""Scripted optimal protocol: the known-good fixture everything else is
measured against. The retrieval numbers asserted here were derived by hand
from the tie rule (comments show the counting)."""

import numpy as np
import pytest

from edl.evaluation import protocol_report, retrieval_curve, task_accuracy
from edl.oracle import (
    IDENTITY_PROTOCOL,
    ScriptedAgents,
    ScriptedProtocol,
    oracle_prediction_vector,
    oracle_tables,
    question_schedule,
    scripted_dialog,
    scripted_predictions,
)
from edl.tabular import TabularGame, answer_map_is_injective, greedy_mean_reward
from edl.world import World


@pytest.fixture(scope="module")
def world():
    return World()


def test_protocol_validation():
    with pytest.raises(ValueError):
        ScriptedProtocol(symbol_to_attribute=(0, 0, 2))
    with pytest.raises(ValueError):
        ScriptedProtocol(value_to_answer=((0, 1, 2, 2), (0, 1, 2, 3), (0, 1, 2, 3)))
    p = ScriptedProtocol(symbol_to_attribute=(2, 0, 1),
                         value_to_answer=((1, 0, 3, 2), (0, 1, 2, 3), (3, 2, 1, 0)))
    assert p.attribute_for(0) == 2
    assert p.symbol_for(2) == 0
    assert p.answer_token(0, 1) == 0
    assert p.value_from_answer(0, 0) == 1


def test_question_schedule_starts_with_task_and_covers(world):
    for task in world.tasks:
        sched = question_schedule(task, 6)
        assert sched[0] == task.first
        assert sched[1] == task.second
        assert set(sched[:3]) == {0, 1, 2}
        assert all(0 <= k < 3 for k in sched)


def test_question_schedule_varies_by_task(world):
    # the round index alone must not determine the question, otherwise the
    # answerer could reply by position without reading the symbol
    for t in range(6):
        per_task = {question_schedule(world.task(tid), 6)[t] for tid in range(6)}
        assert len(per_task) > 1


def test_scripted_dialog_answers_queried_attribute(world):
    for inst in world.enumerate_instances():
        rounds = scripted_dialog(inst, 3)
        for rnd in rounds:
            attr = rnd.question[0]  # identity grounding
            assert rnd.answer[0] == inst.image.values[attr]


def test_scripted_agents_perfect_accuracy(world):
    agents = ScriptedAgents(world, n_rounds=2)
    assert task_accuracy(agents, world.enumerate_instances()) == 1.0


def test_scripted_prediction_accumulates_known_attributes(world):
    inst = world.enumerate_instances()[100]
    rounds = scripted_dialog(inst, 2)
    preds = scripted_predictions(world, inst, rounds)
    assert len(preds) == 3
    assert np.allclose(preds[0], np.full(12, 0.25))
    # after the final round both task attributes are pinned exactly
    y = world.target_vector(inst.image)
    for attr in (inst.task.first, inst.task.second):
        lo = 4 * attr
        assert np.array_equal(preds[-1][lo:lo + 4], y[lo:lo + 4])


def test_oracle_retrieval_curve_exact(world):
    # Hand-derived from the half-credit tie rule over the 64-image pool.
    # Round 0: uniform prediction, all 64 targets tie -> percentile 50.
    # Round 1: one attribute known. Squared distance is 0.75 per unknown
    #   attribute and 0 or 2 on the known one, so the 16 matching images
    #   tie with the truth and 48 sit strictly farther:
    #   rank = 1 + 15/2 = 8.5 -> 100*(64-8.5)/63.
    # Round 2: both task attributes known, 4 ties, 60 farther:
    #   rank = 1 + 3/2 = 2.5 -> 100*(64-2.5)/63.
    curve = retrieval_curve(ScriptedAgents(world, n_rounds=2),
                            world.enumerate_instances(),
                            list(world.enumerate_images()))
    assert len(curve.mean) == 3
    assert curve.mean[0] == pytest.approx(50.0, abs=1e-12)
    assert curve.mean[1] == pytest.approx(100 * (64 - 8.5) / 63, abs=1e-12)
    assert curve.mean[2] == pytest.approx(100 * (64 - 2.5) / 63, abs=1e-12)
    # the protocol treats every instance identically, so no spread beyond
    # accumulation dust
    assert all(se <= 1e-12 for se in curve.std_error)


def test_oracle_retrieval_hits_ceiling_with_three_rounds(world):
    curve = retrieval_curve(ScriptedAgents(world, n_rounds=3),
                            world.enumerate_instances(),
                            list(world.enumerate_images()))
    assert curve.mean[-1] == 100.0


def test_oracle_prediction_vector_shape(world):
    v = oracle_prediction_vector(world, {1: 2})
    assert np.array_equal(v[4:8], [0, 0, 1, 0])
    assert np.allclose(v[:4], 0.25)
    assert np.allclose(v[8:], 0.25)


def test_oracle_tables_play_perfectly(world):
    game = TabularGame(world)
    q_table, a_table = oracle_tables(game)
    assert greedy_mean_reward(game, q_table, a_table) == 1.0
    assert answer_map_is_injective(game, q_table, a_table)


def test_oracle_tables_protocol_is_factorized(world):
    game = TabularGame(world)
    from edl.evaluation import TabularAgents

    report = protocol_report(TabularAgents(game, *oracle_tables(game)),
                             world.enumerate_instances())
    assert report.factorized is True
    assert report.symbol_attribute == {0: 0, 1: 1, 2: 2}
    for sym in report.emitted_symbols:
        assert max(report.mi_bits[(sym, attr)] for attr in range(3)) == 2.0


def test_permuted_protocol_also_perfect(world):
    # a grounding where symbol 0 queries the color attribute and answer
    # tokens are shuffled per attribute is just as valid as the identity
    proto = ScriptedProtocol(symbol_to_attribute=(1, 0, 2),
                             value_to_answer=((2, 3, 0, 1), (1, 2, 3, 0), (0, 1, 2, 3)))
    agents = ScriptedAgents(world, n_rounds=2, protocol=proto)
    assert task_accuracy(agents, world.enumerate_instances()) == 1.0
    game = TabularGame(world)
    q_table, a_table = oracle_tables(game, proto)
    assert greedy_mean_reward(game, q_table, a_table) == 1.0
