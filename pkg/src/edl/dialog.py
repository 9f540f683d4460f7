"""Dialog state, rewards, and episode records.

One episode: the questioner holds a task, the answerer holds an image, they
exchange one question/answer round at a time for a fixed number of rounds,
and the questioner guesses. States are immutable; advancing a dialog returns
a new state, so rollouts can share prefixes freely.

Rewards use the squared Euclidean distance between the questioner's running
estimate and the image's target vector: the round reward is the decrease in
squared distance, so per-episode rewards telescope to
dist(first estimate) - dist(last estimate) exactly.

In tabular play there are no vector estimates; an episode carries an empty
predictions list and a single terminal reward of +1 or -1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .world import Instance, PredictionPair, SynthImage, World

Q_SIDE = "Q"
A_SIDE = "A"

# display tokens for the default vocabularies
Q_TOKEN_LABELS = ("X", "Y", "Z")
A_TOKEN_LABELS = ("1", "2", "3", "4")


def q_token_label(token: int) -> str:
    return Q_TOKEN_LABELS[token] if token < len(Q_TOKEN_LABELS) else f"Q{token}"


def a_token_label(token: int) -> str:
    return A_TOKEN_LABELS[token] if token < len(A_TOKEN_LABELS) else str(token + 1)


@dataclass(frozen=True)
class Symbol:
    """A single vocabulary token tagged with the side that emits it."""

    side: str
    token: int

    def label(self) -> str:
        return q_token_label(self.token) if self.side == Q_SIDE else a_token_label(self.token)


@dataclass(frozen=True)
class Round:
    """One completed exchange; token sequences, length 1 throughout this package."""

    question: tuple[int, ...]
    answer: tuple[int, ...]


@dataclass(frozen=True)
class QState:
    """What the questioner knows: its task (by id) and the dialog so far."""

    prompt: int
    history: tuple[Round, ...] = ()


@dataclass(frozen=True)
class AState:
    """What the answerer knows: the image, the dialog so far, and an
    unanswered question if one is pending. The task is never visible here."""

    image: SynthImage
    history: tuple[Round, ...] = ()
    pending_question: tuple[int, ...] | None = None


def advance_q_state(state: QState, completed: Round, max_rounds: int) -> QState:
    if len(state.history) >= max_rounds:
        raise ValueError(f"dialog already has {max_rounds} rounds")
    return QState(prompt=state.prompt, history=state.history + (completed,))


def advance_a_state(state: AState, completed: Round, max_rounds: int) -> AState:
    if len(state.history) >= max_rounds:
        raise ValueError(f"dialog already has {max_rounds} rounds")
    return AState(
        image=state.image,
        history=state.history + (completed,),
        pending_question=None,
    )


def with_pending_question(state: AState, question: tuple[int, ...]) -> AState:
    return AState(
        image=state.image, history=state.history, pending_question=question
    )


# -- rewards ----------------------------------------------------------------


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.dot(d, d))


def round_reward(y_true: np.ndarray, y_prev: np.ndarray, y_curr: np.ndarray) -> float:
    """How much the current estimate improved on the previous one."""
    return distance(y_prev, y_true) - distance(y_curr, y_true)


def episode_return(rewards) -> float:
    return float(sum(rewards))


@dataclass
class EpisodeRecord:
    """Everything one episode produced.

    predictions holds the questioner's estimate after each round including
    the pre-dialog estimate (len rounds + 1); empty in tabular mode, where
    rewards is the single terminal +1/-1. final_guess is a PredictionPair in
    tabular mode and a retrieved image id in vector mode.
    """

    instance: Instance
    rounds: list[Round] = field(default_factory=list)
    predictions: list[np.ndarray] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    final_guess: PredictionPair | int | None = None


def verify_telescoping(record: EpisodeRecord, world: World, tol: float = 1e-9) -> bool:
    """Check sum(rewards) == dist(first estimate) - dist(last estimate)."""
    if not record.predictions:
        raise ValueError("record has no predictions (tabular episode?)")
    if len(record.rewards) != len(record.predictions) - 1:
        raise ValueError(
            f"{len(record.rewards)} rewards for {len(record.predictions)} predictions"
        )
    y = world.target_vector(record.instance.image)
    total = episode_return(record.rewards)
    expected = distance(record.predictions[0], y) - distance(record.predictions[-1], y)
    return abs(total - expected) <= tol


# -- serialization ----------------------------------------------------------


def record_to_json(record: EpisodeRecord) -> str:
    """One episode as a single JSON line."""
    guess = record.final_guess
    if isinstance(guess, PredictionPair):
        guess_obj = {"pair_index": guess.index}
    elif guess is None:
        guess_obj = None
    else:
        guess_obj = {"image_id": int(guess)}
    obj = {
        "image_id": record.instance.image.id,
        "task_id": record.instance.task.id,
        "rounds": [
            {"q": list(r.question), "a": list(r.answer)} for r in record.rounds
        ],
        "predictions": [[float(v) for v in p] for p in record.predictions],
        "rewards": [float(r) for r in record.rewards],
        "final_guess": guess_obj,
    }
    return json.dumps(obj, sort_keys=True)


def record_from_json(line: str, world: World) -> EpisodeRecord:
    obj = json.loads(line)
    instance = Instance(
        image=world.image(obj["image_id"]), task=world.task(obj["task_id"])
    )
    guess_obj = obj.get("final_guess")
    if guess_obj is None:
        guess = None
    elif "pair_index" in guess_obj:
        guess = world.pair_from_index(guess_obj["pair_index"])
    else:
        guess = int(guess_obj["image_id"])
    return EpisodeRecord(
        instance=instance,
        rounds=[
            Round(question=tuple(r["q"]), answer=tuple(r["a"]))
            for r in obj["rounds"]
        ],
        predictions=[np.array(p, dtype=float) for p in obj["predictions"]],
        rewards=[float(r) for r in obj["rewards"]],
        final_guess=guess,
    )
