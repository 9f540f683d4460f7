"""Episode bookkeeping and the squared-distance reward.

The reward is a potential difference, so per-episode rewards telescope to
first-minus-last distance no matter what the policies do; several tests
hammer on that identity because the policy-gradient update assumes it.
"""

import numpy as np
import pytest

from edl.dialog import (
    AState,
    EpisodeRecord,
    QState,
    Round,
    advance_a_state,
    advance_q_state,
    distance,
    episode_return,
    record_from_json,
    record_to_json,
    round_reward,
    verify_telescoping,
    with_pending_question,
)
from edl.rng import SplitMix64
from edl.world import Instance, World


@pytest.fixture(scope="module")
def world():
    return World()


def test_distance_basics():
    a = np.array([1.0, 0.0, 2.0])
    b = np.array([0.0, 0.0, 0.0])
    assert distance(a, b) == 5.0  # 1 + 0 + 4
    assert distance(a, a) == 0.0
    assert distance(b, a) == distance(a, b)
    with pytest.raises(ValueError):
        distance(a, np.zeros(4))


def test_distance_nonnegative_zero_iff_equal():
    g = SplitMix64(5)
    for _ in range(50):
        a = g.uniform_array(-2, 2, 12)
        b = g.uniform_array(-2, 2, 12)
        assert distance(a, b) > 0.0
        assert distance(a, a.copy()) == 0.0


def test_round_reward_sign_and_antisymmetry():
    y = np.array([1.0, 0.0])
    far = np.array([3.0, 0.0])
    near = np.array([1.5, 0.0])
    assert round_reward(y, far, near) == pytest.approx(4.0 - 0.25)
    # swapping previous and current estimates flips the sign exactly
    assert round_reward(y, far, near) == -round_reward(y, near, far)
    assert round_reward(y, near, near) == 0.0


def test_rewards_telescope_for_arbitrary_estimates(world):
    g = SplitMix64(11)
    y = world.target_vector(world.image(17))
    for _ in range(200):
        preds = [g.uniform_array(-1, 2, 12) for _ in range(4)]
        rewards = [round_reward(y, preds[t], preds[t + 1]) for t in range(3)]
        total = episode_return(rewards)
        expected = distance(preds[0], y) - distance(preds[-1], y)
        assert abs(total - expected) <= 1e-9


def test_verify_telescoping_on_record(world):
    inst = Instance(image=world.image(17), task=world.task(2))
    y = world.target_vector(inst.image)
    preds = [np.full(12, 0.25), np.zeros(12), y.astype(float)]
    rewards = [round_reward(y, preds[0], preds[1]),
               round_reward(y, preds[1], preds[2])]
    rec = EpisodeRecord(instance=inst, rounds=[Round((0,), (1,))] * 2,
                        predictions=preds, rewards=rewards)
    assert verify_telescoping(rec, world)
    rec.rewards = [rewards[0] + 1e-6, rewards[1]]
    assert not verify_telescoping(rec, world)
    with pytest.raises(ValueError):
        verify_telescoping(
            EpisodeRecord(instance=inst, rewards=[1.0]), world)


def test_state_advancement_is_pure_and_bounded():
    q0 = QState(prompt=3)
    rnd = Round(question=(1,), answer=(2,))
    q1 = advance_q_state(q0, rnd, max_rounds=2)
    q1_again = advance_q_state(q0, rnd, max_rounds=2)
    assert q1 == q1_again
    assert q0.history == ()  # original untouched
    q2 = advance_q_state(q1, rnd, max_rounds=2)
    with pytest.raises(ValueError):
        advance_q_state(q2, rnd, max_rounds=2)


def test_a_state_pending_question_lifecycle(world):
    a0 = AState(image=world.image(5))
    pending = with_pending_question(a0, (2,))
    assert pending.pending_question == (2,)
    assert a0.pending_question is None
    done = advance_a_state(pending, Round((2,), (0,)), max_rounds=2)
    assert done.pending_question is None
    assert done.history == (Round((2,), (0,)),)


def test_record_json_roundtrip(world):
    inst = Instance(image=world.image(9), task=world.task(4))
    rec = EpisodeRecord(
        instance=inst,
        rounds=[Round((0,), (3,)), Round((2,), (1,))],
        predictions=[np.full(12, 0.25), np.zeros(12), world.target_vector(inst.image)],
        rewards=[0.5, 0.25],
        final_guess=world.pair_from_index(37),
    )
    line = record_to_json(rec)
    back = record_from_json(line, world)
    assert back.instance.image.id == 9
    assert back.instance.task.id == 4
    assert back.rounds == rec.rounds
    assert back.final_guess.index == 37
    assert all(np.array_equal(p, q) for p, q in zip(back.predictions, rec.predictions))
    # one JSON object per line, reparseable in isolation
    assert "\n" not in line
    assert record_to_json(back) == line


def test_record_json_handles_image_guess_and_none(world):
    inst = Instance(image=world.image(0), task=world.task(0))
    rec = EpisodeRecord(instance=inst, final_guess=42)
    assert record_from_json(record_to_json(rec), world).final_guess == 42
    rec2 = EpisodeRecord(instance=inst, final_guess=None)
    assert record_from_json(record_to_json(rec2), world).final_guess is None
