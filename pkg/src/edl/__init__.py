"""Two-agent image-guessing dialog: emergent-communication training engine.

A questioner that sees only a task prompt and an answerer that sees only a
synthetic image exchange one-symbol messages for a fixed number of rounds,
after which the questioner reports the task's two attribute values. The
package trains this pair two ways — tabular Monte-Carlo Q-learning and
policy gradients over small hand-rolled recurrent nets — and ships the
evaluation, protocol-analysis, persistence, and CLI layers around them.
"""

from .config import ConfigError, ExperimentConfig, load_config
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .dialog import EpisodeRecord, Round
from .evaluation import (
    NeuralAgents,
    TabularAgents,
    percentile_rank,
    protocol_report,
    retrieval_curve,
    task_accuracy,
)
from .nets import ABotNet, DialogRunner, QBotNet
from .oracle import oracle_tables, question_schedule
from .rng import SplitMix64, derive_seed
from .tabular import (
    AlternatingSchedule,
    EpsGreedyConfig,
    QTable,
    TabularGame,
    rollout_tabular,
    train_alternating,
)
from .training import (
    AblationFlags,
    AdamState,
    TrainSettings,
    generate_oracle_corpus,
    rollout_neural,
    train_neural,
)
from .world import Instance, SynthImage, TaskSpec, World

__version__ = "0.1.0"

__all__ = [
    "ABotNet",
    "AblationFlags",
    "AdamState",
    "AlternatingSchedule",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "DialogRunner",
    "EpisodeRecord",
    "EpsGreedyConfig",
    "ExperimentConfig",
    "Instance",
    "NeuralAgents",
    "QBotNet",
    "QTable",
    "Round",
    "SplitMix64",
    "SynthImage",
    "TabularAgents",
    "TabularGame",
    "TaskSpec",
    "TrainSettings",
    "World",
    "derive_seed",
    "generate_oracle_corpus",
    "load_checkpoint",
    "load_config",
    "oracle_tables",
    "percentile_rank",
    "protocol_report",
    "question_schedule",
    "retrieval_curve",
    "rollout_neural",
    "rollout_tabular",
    "save_checkpoint",
    "task_accuracy",
    "train_alternating",
    "train_neural",
]
