"""Experiment configuration: a flat key=value text format.

One `key = value` pair per line; `#` starts a comment; blank lines are
ignored. Every key has a documented default, a type, and a range; unknown
keys and out-of-range values are rejected with the offending key named.
CLI flags override file keys, which override defaults.

Keys that accept the sentinel "auto" resolve when the config is resolved:
rounds becomes 2 in tabular mode and 10 in neural mode, q_vocab becomes
the attribute count, a_vocab the value count, k_start becomes rounds - 1,
and out_dir becomes runs/<mode>-seed<seed>.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace


class ConfigError(ValueError):
    """Raised for unknown keys, bad syntax, or out-of-range values."""


_AUTO = "auto"


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "tabular"
    seed: int = 0
    out_dir: str = _AUTO
    # world sizes
    n_attributes: int = 3
    n_values: int = 4
    # vocab / episode shape ("auto" tracks the world or the mode)
    q_vocab: int | str = _AUTO
    a_vocab: int | str = _AUTO
    rounds: int | str = _AUTO
    # tabular settings
    episodes_per_iteration: int = 10_000
    max_iterations: int = 100
    greedy_prob: float = 0.6
    q_init: float = 0.0
    # neural settings
    sl_epochs: int = 15
    rl_epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    corpus_fraction: float = 1.0
    protocol_seed: int = 0
    k_start: int | str = _AUTO
    anneal_every: int = 1
    # ablations
    freeze_q: bool = False
    freeze_a: bool = False
    freeze_f: bool = False
    multi_task: bool = False
    sl_weight: float = 1.0
    rl_weight: float = 10.0

    def __post_init__(self):
        _validate(self)

    def resolved(self) -> "ExperimentConfig":
        """Materialize every "auto" into a concrete value."""
        rounds = self.rounds
        if rounds == _AUTO:
            rounds = 2 if self.mode == "tabular" else 10
        updates = dict(
            rounds=rounds,
            q_vocab=self.n_attributes if self.q_vocab == _AUTO else self.q_vocab,
            a_vocab=self.n_values if self.a_vocab == _AUTO else self.a_vocab,
            k_start=rounds - 1 if self.k_start == _AUTO else self.k_start,
        )
        if self.out_dir == _AUTO:
            updates["out_dir"] = f"runs/{self.mode}-seed{self.seed}"
        out = replace(self, **updates)
        if out.k_start > out.rounds:
            raise ConfigError(
                f"k_start: must be <= rounds ({out.rounds}), got {out.k_start}")
        return out

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        lines = [f"# resolved configuration ({self.mode} mode)"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


_BOOL_KEYS = frozenset({"freeze_q", "freeze_a", "freeze_f", "multi_task"})
_FLOAT_KEYS = frozenset(
    {"greedy_prob", "q_init", "lr", "corpus_fraction", "sl_weight", "rl_weight"})
_STR_KEYS = frozenset({"mode", "out_dir"})
_AUTO_KEYS = frozenset({"q_vocab", "a_vocab", "rounds", "k_start", "out_dir"})
_KNOWN_KEYS = frozenset(f.name for f in fields(ExperimentConfig))

# inclusive numeric bounds; None means unbounded on that side
_RANGES: dict[str, tuple[float | None, float | None]] = {
    "seed": (0, None),
    "n_attributes": (2, 4),
    "n_values": (2, 8),
    "q_vocab": (2, None),
    "a_vocab": (2, None),
    "rounds": (1, 64),
    "episodes_per_iteration": (1, None),
    "max_iterations": (1, None),
    "greedy_prob": (None, 1.0),
    "sl_epochs": (0, None),
    "rl_epochs": (0, None),
    "batch_size": (1, None),
    "lr": (None, None),
    "corpus_fraction": (None, 1.0),
    "protocol_seed": (0, None),
    "k_start": (0, None),
    "anneal_every": (1, None),
    "sl_weight": (0.0, None),
    "rl_weight": (0.0, None),
}


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.mode not in ("tabular", "neural"):
        raise ConfigError(f"mode: expected tabular or neural, got {cfg.mode!r}")
    for key, (lo, hi) in _RANGES.items():
        v = getattr(cfg, key)
        if v == _AUTO and key in _AUTO_KEYS:
            continue
        if lo is not None and v < lo:
            raise ConfigError(f"{key}: must be >= {lo}, got {v}")
        if hi is not None and v > hi:
            raise ConfigError(f"{key}: must be <= {hi}, got {v}")
    if cfg.greedy_prob <= 0.0:
        raise ConfigError(f"greedy_prob: must be in (0, 1], got {cfg.greedy_prob}")
    if cfg.lr <= 0.0:
        raise ConfigError(f"lr: must be positive, got {cfg.lr}")
    if cfg.corpus_fraction <= 0.0:
        raise ConfigError(
            f"corpus_fraction: must be in (0, 1], got {cfg.corpus_fraction}")
    if cfg.freeze_q and cfg.freeze_a and cfg.freeze_f:
        raise ConfigError("freeze_q/freeze_a/freeze_f: at most two may be set")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key not in _KNOWN_KEYS:
        raise ConfigError(f"{key}: unknown key")
    if key in _STR_KEYS:
        return raw
    if key in _AUTO_KEYS and raw == _AUTO:
        return _AUTO
    if key in _BOOL_KEYS:
        if raw in ("true", "false"):
            return raw == "true"
        raise ConfigError(f"{key}: expected true or false, got {raw!r}")
    try:
        if key in _FLOAT_KEYS:
            return float(raw)
        return int(raw)
    except ValueError:
        kind = "real" if key in _FLOAT_KEYS else "integer"
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None


def parse_assignments(pairs: dict[str, str],
                      base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply raw key=value strings on top of a base config."""
    base = base or ExperimentConfig()
    updates = {k: _parse_value(k, v) for k, v in pairs.items()}
    return replace(base, **updates)


def parse_text(text: str, base: ExperimentConfig | None = None,
               source: str = "<config>") -> ExperimentConfig:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key}")
        pairs[key] = raw
    return parse_assignments(pairs, base)


def load_config(path: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_text(fh.read(), base, source=path)
