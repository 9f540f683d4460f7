"""Tabular learner: running-mean tables, epsilon-greedy selection, episode
rollouts with terminal +1/-1, Monte Carlo crediting, and the alternating
update schedule with behavior snapshots."""

import pytest

from edl.dialog import A_SIDE, Q_SIDE, Round
from edl.rng import SplitMix64
from edl.tabular import (
    AlternatingSchedule,
    EpsGreedyConfig,
    QTable,
    TabularGame,
    greedy_mean_reward,
    mc_update,
    rollout_tabular,
    select_action,
    train_alternating,
)
from edl.world import Instance, World


@pytest.fixture(scope="module")
def world():
    return World()


@pytest.fixture(scope="module")
def game(world):
    return TabularGame(world)


# -- table -------------------------------------------------------------------


def test_running_mean_hand_trace():
    t = QTable()
    t.update(5, 1, 1.0, 3)
    assert t.q_estimate(5, 1) == 1.0
    t.update(5, 1, -1.0, 3)
    assert t.q_estimate(5, 1) == 0.0
    t.update(5, 1, 1.0, 3)
    assert t.q_estimate(5, 1) == 1 / 3  # (1 - 1 + 1) / 3
    assert t.visit_count(5, 1) == 3
    assert t.visit_count(5, 0) == 0
    assert t.q_estimate(5, 0) == 0.0  # untouched entry reads init


def test_running_mean_matches_recomputation():
    # the invariant: every estimate equals the plain mean of the returns
    # credited to that entry
    t = QTable(init_value=0.0)
    g = SplitMix64(3)
    credited = {}
    for _ in range(3000):
        s = g.randrange(10)
        a = g.randrange(4)
        ret = 1.0 if g.random() < 0.37 else -1.0
        t.update(s, a, ret, 4)
        credited.setdefault((s, a), []).append(ret)
    for (s, a), rets in credited.items():
        assert t.q_estimate(s, a) == pytest.approx(sum(rets) / len(rets), abs=1e-10)
        assert t.visit_count(s, a) == len(rets)


def test_nonzero_init_value():
    t = QTable(init_value=-0.5)
    assert t.q_estimate(0, 0) == -0.5
    t.update(0, 2, 1.0, 4)
    # the visited entry becomes a pure mean of returns, init plays no part
    assert t.q_estimate(0, 2) == 1.0
    assert t.q_estimate(0, 1) == -0.5


def test_snapshot_is_independent():
    t = QTable()
    t.update(1, 0, 1.0, 2)
    snap = t.snapshot()
    t.update(1, 0, -1.0, 2)
    t.update(2, 1, 1.0, 2)
    assert snap.q_estimate(1, 0) == 1.0
    assert snap.n_states == 1
    assert t.q_estimate(1, 0) == 0.0


def test_states_and_materialize():
    t = QTable()
    t.update(7, 0, 1.0, 3)
    t.materialize(4, 5)
    t.materialize(7, 99)  # no-op on an existing row
    assert t.states() == [4, 7]
    assert len(t.row(7)[0]) == 3
    assert len(t.row(4)[0]) == 5
    assert t.n_visited_entries == 1
    assert list(t.visited_items()) == [(7, 0, 1.0, 1)]


# -- action selection --------------------------------------------------------


def test_greedy_ties_break_to_lowest_index():
    t = QTable()
    for a in (0, 1, 2):
        t.update(0, a, 1.0, 3)
    assert select_action(t, 0, 3, EpsGreedyConfig(), "greedy") == 0
    t.update(0, 2, 1.0, 3)  # still all equal at 1.0
    assert select_action(t, 0, 3, EpsGreedyConfig(), "greedy") == 0
    t.update(0, 1, 1.0, 3)
    t.update(0, 1, 1.0, 3)  # keeps the tie, means all 1.0
    assert select_action(t, 0, 3, EpsGreedyConfig(), "greedy") == 0


def test_greedy_on_unvisited_state_is_action_zero():
    assert select_action(QTable(), 99, 4, EpsGreedyConfig(), "greedy") == 0


def test_select_action_input_validation():
    with pytest.raises(ValueError):
        select_action(QTable(), 0, 0, EpsGreedyConfig(), "greedy")
    with pytest.raises(ValueError):
        select_action(QTable(), 0, 3, EpsGreedyConfig(), "softmax", SplitMix64(0))
    with pytest.raises(ValueError):
        EpsGreedyConfig(greedy_prob=0.0)
    with pytest.raises(ValueError):
        EpsGreedyConfig(greedy_prob=1.2)


def test_explore_frequencies_small_sample():
    # argmax in the middle so both non-greedy branches get exercised
    t = QTable()
    t.update(0, 1, 1.0, 3)
    g = SplitMix64(17)
    cfg = EpsGreedyConfig(greedy_prob=0.6)
    n = 40_000
    counts = [0, 0, 0]
    for _ in range(n):
        counts[select_action(t, 0, 3, cfg, "explore", g)] += 1
    freqs = [c / n for c in counts]
    assert freqs[1] == pytest.approx(0.6, abs=0.01)
    assert freqs[0] == pytest.approx(0.2, abs=0.01)
    assert freqs[2] == pytest.approx(0.2, abs=0.01)


def test_explore_single_action_needs_no_rng():
    assert select_action(QTable(), 0, 1, EpsGreedyConfig(), "explore") == 0


# -- game encoding and rollouts ----------------------------------------------


def test_state_key_hand_trace(game, world):
    # two rounds, vocab 3x4, round code = 3*4 = 12
    inst = Instance(image=world.image(10), task=world.task(2))
    rounds = [Round((1,), (3,)), Round((0,), (2,))]
    qk = game.q_state_keys(inst, rounds)
    # round 0: offset 0, code = task id
    assert qk[0] == 2
    # round 1: offset 6 (task count), code = 2*12 + 1*4 + 3 = 31
    assert qk[1] == 6 + 31
    # guess state: offset 6 + 6*12 = 78, code = 31*12 + 0*4 + 2 = 374
    assert qk[2] == 78 + 374
    ak = game.a_state_keys(inst, rounds)
    # round 0: offset 0, key = image id * 3 + question = 10*3 + 1
    assert ak[0] == 31
    # round 1: offset 64*3 = 192, code = 10*12 + 7 = 127, key = 127*3 + 0
    assert ak[1] == 192 + 127 * 3


def test_state_keys_never_collide_across_rounds(game, world):
    # offsets partition the key space by round, so the same rolling code at
    # different depths maps to different states
    seen_q, seen_a = set(), set()
    g = SplitMix64(1)
    for _ in range(300):
        inst = world.enumerate_instances()[g.randrange(384)]
        rec = rollout_tabular(game, inst, QTable(), QTable(),
                              EpsGreedyConfig(), "explore", SplitMix64(g.next_u64()))
        qk = game.q_state_keys(inst, rec.rounds)
        ak = game.a_state_keys(inst, rec.rounds)
        assert qk[0] < 6 <= qk[1] < 78 <= qk[2]
        assert ak[0] < 192 <= ak[1]
        seen_q.update(qk)
        seen_a.update(ak)
    assert len(seen_q) > 10 and len(seen_a) > 10


def test_rollout_terminal_reward_only(game, world):
    inst = world.enumerate_instances()[0]
    rec = rollout_tabular(game, inst, QTable(), QTable(),
                          EpsGreedyConfig(), "explore", SplitMix64(5))
    assert rec.predictions == []
    assert len(rec.rounds) == 2
    assert rec.rewards in ([1.0], [-1.0])
    correct = game.correct_pair_index(inst)
    expected = 1.0 if rec.final_guess.index == correct else -1.0
    assert rec.rewards == [expected]


def test_rollout_deterministic_given_rng_seed(game, world):
    inst = world.enumerate_instances()[7]
    r1 = rollout_tabular(game, inst, QTable(), QTable(),
                         EpsGreedyConfig(), "explore", SplitMix64(99))
    r2 = rollout_tabular(game, inst, QTable(), QTable(),
                         EpsGreedyConfig(), "explore", SplitMix64(99))
    assert r1.rounds == r2.rounds
    assert r1.final_guess.index == r2.final_guess.index


def test_greedy_rollout_is_pure(game, world):
    from edl.oracle import oracle_tables

    q_table, a_table = oracle_tables(game)
    inst = world.enumerate_instances()[123]
    recs = [rollout_tabular(game, inst, q_table, a_table, EpsGreedyConfig(), "greedy")
            for _ in range(3)]
    assert all(r.rounds == recs[0].rounds for r in recs)
    assert all(r.rewards == [1.0] for r in recs)


def test_mc_update_credits_every_decision(game, world):
    inst = Instance(image=world.image(10), task=world.task(2))
    rounds = [Round((1,), (3,)), Round((0,), (2,))]
    from edl.dialog import EpisodeRecord

    rec = EpisodeRecord(instance=inst, rounds=rounds, rewards=[1.0],
                        final_guess=world.pair_from_index(50))
    q_table, a_table = QTable(), QTable()
    mc_update(game, q_table, rec, Q_SIDE)
    mc_update(game, a_table, rec, A_SIDE)
    qk = game.q_state_keys(inst, rounds)
    ak = game.a_state_keys(inst, rounds)
    # questioner: one credit per asked question plus the final guess
    assert q_table.q_estimate(qk[0], 1) == 1.0
    assert q_table.q_estimate(qk[1], 0) == 1.0
    assert q_table.q_estimate(qk[2], 50) == 1.0
    assert len(q_table.row(qk[2])[0]) == world.n_pairs
    assert q_table.n_visited_entries == 3
    # answerer: one credit per reply, no guess state
    assert a_table.q_estimate(ak[0], 3) == 1.0
    assert a_table.q_estimate(ak[1], 2) == 1.0
    assert a_table.n_visited_entries == 2
    with pytest.raises(ValueError):
        mc_update(game, q_table, rec, "X")


def test_alternating_schedule_sides():
    s = AlternatingSchedule(episodes_per_iteration=10, max_iterations=4)
    assert [s.side_for(i) for i in range(4)] == [Q_SIDE, A_SIDE, Q_SIDE, A_SIDE]
    with pytest.raises(ValueError):
        AlternatingSchedule(episodes_per_iteration=0)


def test_train_updates_only_scheduled_side(game):
    # during an iteration that updates one side, the other side's table
    # must come out bit-identical
    seen = []

    def spy(it, side, mean, q_table, a_table, curve):
        seen.append((it, side,
                     list(q_table.visited_items()),
                     list(a_table.visited_items())))

    train_alternating(game, AlternatingSchedule(episodes_per_iteration=50,
                                                max_iterations=4),
                      EpsGreedyConfig(rng_seed=0), on_iteration=spy)
    assert [s[1] for s in seen] == [Q_SIDE, A_SIDE, Q_SIDE, A_SIDE]
    # iteration 0 updated Q only: A still empty
    assert seen[0][3] == []
    assert seen[0][2] != []
    # iteration 1 updated A only: Q frozen at its previous contents
    assert seen[1][2] == seen[0][2]
    # iteration 2 updated Q only: A frozen
    assert seen[2][3] == seen[1][3]


def test_train_is_deterministic(game):
    kw = dict(schedule=AlternatingSchedule(episodes_per_iteration=80, max_iterations=3),
              cfg=EpsGreedyConfig(rng_seed=7))
    r1 = train_alternating(game, **kw)
    r2 = train_alternating(game, **kw)
    assert list(r1.q_table.visited_items()) == list(r2.q_table.visited_items())
    assert list(r1.a_table.visited_items()) == list(r2.a_table.visited_items())
    assert r1.reward_curve == r2.reward_curve


def test_reward_curve_tracks_greedy_mean(game):
    res = train_alternating(
        game, AlternatingSchedule(episodes_per_iteration=60, max_iterations=2),
        EpsGreedyConfig(rng_seed=1))
    # curve: initial point plus one per iteration, each matching a fresh
    # greedy evaluation of the tables at that moment
    assert len(res.reward_curve) == 3
    assert res.reward_curve[-1] == greedy_mean_reward(game, res.q_table, res.a_table)
    assert all(-1.0 <= r <= 1.0 for r in res.reward_curve)
