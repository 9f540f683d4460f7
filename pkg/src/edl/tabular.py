"""Tabular Monte-Carlo Q-learning for the symbolic guessing game.

Both agents keep a table of running-mean action values over exact dialog
states. An episode is two single-symbol rounds followed by the questioner
guessing one of the 144 attribute-value pairs; the only reward is +1/-1 at
the end and every state-action the updated side took is credited with it.

Training alternates: one side's table is updated for a block of episodes
while the other is frozen, then they swap. Action selection during training
keeps probability `greedy_prob` on the current argmax and splits the rest
uniformly over the other actions; evaluation is pure argmax (ties resolve
to the lowest index).

State keys are compact integers. With the default sizes the questioner has
6 round-1 states, 72 round-2 states and 6*12*12 = 864 guessing states; the
answerer has 64*3 = 192 first-answer and 64*12*3 = 2304 second-answer
states. The answerer's key contains the image and dialog only: the task is
never part of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .dialog import A_SIDE, EpisodeRecord, Q_SIDE, Round
from .rng import SplitMix64, derive_seed
from .world import Instance, World


@dataclass(frozen=True)
class EpsGreedyConfig:
    greedy_prob: float = 0.6
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.greedy_prob <= 1.0):
            raise ValueError(f"greedy_prob must be in (0, 1], got {self.greedy_prob}")


@dataclass(frozen=True)
class AlternatingSchedule:
    episodes_per_iteration: int = 10_000
    max_iterations: int = 100
    first_updated: str = Q_SIDE

    def __post_init__(self):
        if self.episodes_per_iteration < 1 or self.max_iterations < 1:
            raise ValueError("schedule counts must be positive")
        if self.first_updated not in (Q_SIDE, A_SIDE):
            raise ValueError(f"first_updated must be Q or A, got {self.first_updated}")

    def side_for(self, iteration: int) -> str:
        first = self.first_updated
        other = A_SIDE if first == Q_SIDE else Q_SIDE
        return first if iteration % 2 == 0 else other


class QTable:
    """Running-mean action values keyed by (state, action).

    Rows materialize on first update; unvisited entries read as the init
    value with count 0, so merely evaluating a table never changes it.
    """

    __slots__ = ("init_value", "_rows")

    def __init__(self, init_value: float = 0.0):
        self.init_value = init_value
        self._rows: dict[int, tuple[list[float], list[int]]] = {}

    def row(self, state: int):
        return self._rows.get(state)

    def q_estimate(self, state: int, action: int) -> float:
        row = self._rows.get(state)
        if row is None or action >= len(row[0]):
            return self.init_value
        return row[0][action]

    def visit_count(self, state: int, action: int) -> int:
        row = self._rows.get(state)
        if row is None or action >= len(row[1]):
            return 0
        return row[1][action]

    def update(self, state: int, action: int, ret: float, n_actions: int) -> None:
        row = self._rows.get(state)
        if row is None:
            row = ([self.init_value] * n_actions, [0] * n_actions)
            self._rows[state] = row
        qs, counts = row
        c = counts[action] + 1
        counts[action] = c
        qs[action] += (ret - qs[action]) / c

    @property
    def n_states(self) -> int:
        return len(self._rows)

    @property
    def n_visited_entries(self) -> int:
        return sum(
            1 for _, counts in self._rows.values() for c in counts if c > 0
        )

    def visited_items(self):
        """(state, action, q, count) for every visited entry, sorted."""
        for state in sorted(self._rows):
            qs, counts = self._rows[state]
            for action, c in enumerate(counts):
                if c > 0:
                    yield state, action, qs[action], c

    def states(self) -> list[int]:
        """Materialized state keys, sorted."""
        return sorted(self._rows)

    def materialize(self, state: int, n_actions: int) -> None:
        """Create an untouched row of the given width if absent."""
        if state not in self._rows:
            self._rows[state] = (
                [self.init_value] * n_actions, [0] * n_actions)

    def snapshot(self) -> "QTable":
        """Independent copy; used to fix behavior while updates accumulate."""
        out = QTable(init_value=self.init_value)
        out._rows = {s: (list(qs), list(cs)) for s, (qs, cs) in self._rows.items()}
        return out


def _argmax_lowest(qs) -> int:
    best, best_q = 0, qs[0]
    for i in range(1, len(qs)):
        if qs[i] > best_q:
            best, best_q = i, qs[i]
    return best


def select_action(
    table: QTable,
    state: int,
    n_actions: int,
    cfg: EpsGreedyConfig,
    mode: str,
    rng: SplitMix64 | None = None,
) -> int:
    """Pick an action. mode "greedy" is deterministic argmax; mode "explore"
    keeps greedy_prob on the argmax and spreads the rest uniformly."""
    if n_actions <= 0:
        raise ValueError("state has no actions")
    row = table.row(state)
    greedy = 0 if row is None else _argmax_lowest(row[0][:n_actions])
    if mode == "greedy" or n_actions == 1:
        return greedy
    if mode != "explore":
        raise ValueError(f"unknown selection mode {mode!r}")
    u = rng.random()
    gp = cfg.greedy_prob
    if u < gp:
        return greedy
    j = int((u - gp) / (1.0 - gp) * (n_actions - 1))
    if j > n_actions - 2:
        j = n_actions - 2
    return j if j < greedy else j + 1


@dataclass
class TabularGame:
    """Key encodings and rollout mechanics for fixed world/vocab sizes."""

    world: World
    q_vocab: int = 3
    a_vocab: int = 4
    n_rounds: int = 2
    q_offsets: tuple[int, ...] = field(init=False)
    a_offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        rc = self.q_vocab * self.a_vocab
        n_tasks, n_images = self.world.n_tasks, self.world.n_images
        q_off, a_off = [0], [0]
        width = n_tasks
        for _ in range(self.n_rounds):
            q_off.append(q_off[-1] + width)
            width *= rc
        q_off.append(q_off[-1] + width)  # unused sentinel
        self.q_offsets = tuple(q_off)
        width = n_images * self.q_vocab
        for _ in range(self.n_rounds - 1):
            a_off.append(a_off[-1] + width)
            width *= rc
        self.a_offsets = tuple(a_off)
        # correct guess per (image, task), flat by image-major instance order
        self._correct = [
            self.world.correct_pair_index(inst)
            for inst in self.world.enumerate_instances()
        ]

    def correct_pair_index(self, instance: Instance) -> int:
        return self._correct[
            instance.image.id * self.world.n_tasks + instance.task.id
        ]

    def q_state_keys(self, instance: Instance, rounds) -> list[int]:
        """Questioner state key before each round plus the guessing state."""
        rc = self.q_vocab * self.a_vocab
        code = instance.task.id
        keys = []
        for r, rnd in enumerate(rounds):
            keys.append(self.q_offsets[r] + code)
            code = code * rc + rnd.question[0] * self.a_vocab + rnd.answer[0]
        keys.append(self.q_offsets[len(rounds)] + code)
        return keys

    def a_state_keys(self, instance: Instance, rounds) -> list[int]:
        """Answerer state key at each pending question."""
        rc = self.q_vocab * self.a_vocab
        code = instance.image.id
        keys = []
        for r, rnd in enumerate(rounds):
            keys.append(self.a_offsets[r] + code * self.q_vocab + rnd.question[0])
            code = code * rc + rnd.question[0] * self.a_vocab + rnd.answer[0]
        return keys


def rollout_tabular(
    game: TabularGame,
    instance: Instance,
    q_table: QTable,
    a_table: QTable,
    cfg: EpsGreedyConfig,
    mode: str,
    rng: SplitMix64 | None = None,
) -> EpisodeRecord:
    """Play one full episode; the terminal +1/-1 is the only reward."""
    world = game.world
    q_vocab, a_vocab = game.q_vocab, game.a_vocab
    rc = q_vocab * a_vocab
    qcode = instance.task.id
    acode = instance.image.id
    rounds: list[Round] = []
    for r in range(game.n_rounds):
        q = select_action(
            q_table, game.q_offsets[r] + qcode, q_vocab, cfg, mode, rng
        )
        a = select_action(
            a_table,
            game.a_offsets[r] + acode * q_vocab + q,
            a_vocab,
            cfg,
            mode,
            rng,
        )
        rounds.append(Round(question=(q,), answer=(a,)))
        step = q * a_vocab + a
        qcode = qcode * rc + step
        acode = acode * rc + step
    guess = select_action(
        q_table,
        game.q_offsets[game.n_rounds] + qcode,
        world.n_pairs,
        cfg,
        mode,
        rng,
    )
    reward = 1.0 if guess == game.correct_pair_index(instance) else -1.0
    return EpisodeRecord(
        instance=instance,
        rounds=rounds,
        predictions=[],
        rewards=[reward],
        final_guess=world.pair_from_index(guess),
    )


def mc_update(game: TabularGame, table: QTable, episode: EpisodeRecord, side: str) -> QTable:
    """Credit the episode's terminal return to every action `side` took."""
    ret = episode.rewards[-1]
    if side == Q_SIDE:
        keys = game.q_state_keys(episode.instance, episode.rounds)
        for r, rnd in enumerate(episode.rounds):
            table.update(keys[r], rnd.question[0], ret, game.q_vocab)
        table.update(keys[-1], episode.final_guess.index, ret, game.world.n_pairs)
    elif side == A_SIDE:
        keys = game.a_state_keys(episode.instance, episode.rounds)
        for r, rnd in enumerate(episode.rounds):
            table.update(keys[r], rnd.answer[0], ret, game.a_vocab)
    else:
        raise ValueError(f"unknown side {side!r}")
    return table


def greedy_mean_reward(game: TabularGame, q_table: QTable, a_table: QTable) -> float:
    """Mean terminal reward of deterministic play over every instance."""
    cfg = EpsGreedyConfig()
    total = 0.0
    instances = game.world.enumerate_instances()
    for inst in instances:
        rec = rollout_tabular(game, inst, q_table, a_table, cfg, "greedy")
        total += rec.rewards[-1]
    return total / len(instances)


@dataclass
class TabularResult:
    q_table: QTable
    a_table: QTable
    reward_curve: list[float]
    iterations_run: int


def train_alternating(
    game: TabularGame,
    schedule: AlternatingSchedule,
    cfg: EpsGreedyConfig,
    q_init: float = 0.0,
    q_table: QTable | None = None,
    a_table: QTable | None = None,
    start_iteration: int = 0,
    reward_curve: list[float] | None = None,
    on_iteration=None,
) -> TabularResult:
    """Alternate table updates until greedy play is perfect or the iteration
    budget runs out.

    Behavior within an iteration is read from the tables as they stood when
    the iteration began; updates land on the live table and become visible
    at the next iteration. Episodes therefore depend only on (rng_seed,
    iteration, episode index) and can be generated on any number of workers
    with updates applied in episode order, giving identical results."""
    if q_table is None:
        q_table = QTable(init_value=q_init)
    if a_table is None:
        a_table = QTable(init_value=q_init)
    instances = game.world.enumerate_instances()
    n_inst = len(instances)
    if reward_curve is None:
        reward_curve = [greedy_mean_reward(game, q_table, a_table)]
    it = start_iteration - 1
    for it in range(start_iteration, schedule.max_iterations):
        side = schedule.side_for(it)
        table = q_table if side == Q_SIDE else a_table
        behave_q = q_table.snapshot() if side == Q_SIDE else q_table
        behave_a = a_table.snapshot() if side == A_SIDE else a_table
        for ep in range(schedule.episodes_per_iteration):
            rng = SplitMix64(derive_seed(cfg.rng_seed, "episode", it, ep))
            inst = instances[rng.randrange(n_inst)]
            rec = rollout_tabular(game, inst, behave_q, behave_a, cfg, "explore", rng)
            mc_update(game, table, rec, side)
        mean = greedy_mean_reward(game, q_table, a_table)
        reward_curve.append(mean)
        if on_iteration is not None:
            on_iteration(it, side, mean, q_table, a_table, reward_curve)
        if mean >= 1.0:
            break
    return TabularResult(
        q_table=q_table,
        a_table=a_table,
        reward_curve=reward_curve,
        iterations_run=it + 1,
    )


def answer_sequence_map(
    game: TabularGame, q_table: QTable, a_table: QTable
) -> dict[int, dict[tuple[int, ...], set[tuple[int, ...]]]]:
    """For each task: which answer sequences greedy play produces for each
    combination of the task's two attribute values. Perfect play needs this
    map to pair the 16 combinations with 16 distinct sequences."""
    cfg = EpsGreedyConfig()
    out: dict[int, dict[tuple[int, ...], set[tuple[int, ...]]]] = {}
    for inst in game.world.enumerate_instances():
        rec = rollout_tabular(game, inst, q_table, a_table, cfg, "greedy")
        combo = (
            inst.image.values[inst.task.first],
            inst.image.values[inst.task.second],
        )
        seq = tuple(r.answer[0] for r in rec.rounds)
        out.setdefault(inst.task.id, {}).setdefault(combo, set()).add(seq)
    return out


def answer_map_is_injective(game: TabularGame, q_table: QTable, a_table: QTable) -> bool:
    """True iff every task maps value combinations to answer sequences
    one-to-one (each combination one sequence, no sequence shared)."""
    for combos in answer_sequence_map(game, q_table, a_table).values():
        seen: set[tuple[int, ...]] = set()
        for seqs in combos.values():
            if len(seqs) != 1:
                return False
            seq = next(iter(seqs))
            if seq in seen:
                return False
            seen.add(seq)
    return True
