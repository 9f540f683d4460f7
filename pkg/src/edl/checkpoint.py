"""Checkpoint persistence.

Layout: 4-byte magic "EDLC", u32 format version, u32 header length, then a
UTF-8 JSON header (sorted keys), then the raw bytes of each array in the
header's order, little-endian float64 throughout. Integer payloads (visit
counts, step counters) ride in float64 arrays; they are exact up to 2^53,
far beyond any reachable count here.

The header is self-describing: mode, epoch/iteration counter, the resolved
config snapshot, the RNG stream roots, and one {name, size} entry per
array. Q-tables serialize as visited entries only (state, action, value,
count in sorted state order), so a save -> load -> save cycle is
byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .nets import ABotNet, QBotNet
from .tabular import QTable

MAGIC = b"EDLC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Corrupt file, wrong version, or missing payload."""


class Checkpoint:
    """In-memory checkpoint: a header dict plus named float64 arrays."""

    def __init__(self, header: dict, arrays: dict[str, np.ndarray]):
        self.header = header
        self.arrays = arrays

    @property
    def mode(self) -> str:
        return self.header["mode"]

    @property
    def step(self) -> int:
        """Completed epochs (neural) or iterations (tabular)."""
        return self.header["step"]

    @property
    def config(self) -> dict:
        return self.header["config"]


def _array_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    names = sorted(ckpt.arrays)
    header = dict(ckpt.header)
    header["arrays"] = [
        {"name": n, "size": int(ckpt.arrays[n].size)} for n in names
    ]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(_array_bytes(ckpt.arrays[n]))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(data) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    arrays: dict[str, np.ndarray] = {}
    off = 12 + hlen
    for entry in header.get("arrays", []):
        n_bytes = entry["size"] * 8
        if off + n_bytes > len(data):
            raise CheckpointError(
                f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            data[off:off + n_bytes], dtype="<f8").copy()
        off += n_bytes
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return Checkpoint(header, arrays)


# -- tabular payload ---------------------------------------------------------

def _table_arrays(prefix: str, table: QTable) -> dict[str, np.ndarray]:
    states = table.states()
    # Row widths matter: greedy argmax ranges over the materialized row, so
    # an unvisited tail entry at the init value can win ties. Restore rows
    # at their exact original width, then overwrite the visited cells.
    widths = [len(table.row(s)[0]) for s in states]
    items = list(table.visited_items())
    cols = list(zip(*items)) if items else ([], [], [], [])
    return {
        f"{prefix}.rows": np.array(states, dtype="<f8"),
        f"{prefix}.width": np.array(widths, dtype="<f8"),
        f"{prefix}.state": np.array(cols[0], dtype="<f8"),
        f"{prefix}.action": np.array(cols[1], dtype="<f8"),
        f"{prefix}.value": np.array(cols[2], dtype="<f8"),
        f"{prefix}.count": np.array(cols[3], dtype="<f8"),
    }


def _table_from_arrays(prefix: str, arrays: dict[str, np.ndarray],
                       init_value: float) -> QTable:
    try:
        rows = arrays[f"{prefix}.rows"]
        widths = arrays[f"{prefix}.width"]
        states = arrays[f"{prefix}.state"]
        actions = arrays[f"{prefix}.action"]
        values = arrays[f"{prefix}.value"]
        counts = arrays[f"{prefix}.count"]
    except KeyError as exc:
        raise CheckpointError(f"missing table array {exc.args[0]}") from None
    table = QTable(init_value=init_value)
    for s, w in zip(rows, widths):
        table.materialize(int(s), int(w))
    for s, a, v, c in zip(states, actions, values, counts):
        row = table.row(int(s))
        if row is None or int(a) >= len(row[0]):
            raise CheckpointError(
                f"table entry ({int(s)}, {int(a)}) outside row bounds")
        row[0][int(a)] = float(v)
        row[1][int(a)] = int(c)
    return table


def tabular_checkpoint(config: dict, step: int, q_table: QTable,
                       a_table: QTable,
                       reward_curve: list[float]) -> Checkpoint:
    header = {
        "mode": "tabular",
        "step": step,
        "config": config,
        "rng_state": {"episode_root": config["seed"]},
        "q_init": q_table.init_value,
    }
    arrays = {"reward_curve": np.array(reward_curve, dtype="<f8")}
    arrays.update(_table_arrays("q_table", q_table))
    arrays.update(_table_arrays("a_table", a_table))
    return Checkpoint(header, arrays)


def unpack_tables(ckpt: Checkpoint) -> tuple[QTable, QTable, list[float]]:
    if ckpt.mode != "tabular":
        raise CheckpointError(f"expected tabular checkpoint, got {ckpt.mode}")
    init = ckpt.header.get("q_init", 0.0)
    q_table = _table_from_arrays("q_table", ckpt.arrays, init)
    a_table = _table_from_arrays("a_table", ckpt.arrays, init)
    curve = ckpt.arrays.get("reward_curve", np.zeros(0)).tolist()
    return q_table, a_table, curve


# -- neural payload ----------------------------------------------------------

def neural_checkpoint(config: dict, step: int, q_net: QBotNet, a_net: ABotNet,
                      adam, extra: dict | None = None) -> Checkpoint:
    header = {
        "mode": "neural",
        "step": step,
        "config": config,
        "rng_state": {"stream_root": config["seed"]},
        "adam": {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                 "epsilon": adam.epsilon, "clamp_bound": adam.clamp_bound},
        "blocks": {},
    }
    if extra:
        header.update(extra)
    arrays: dict[str, np.ndarray] = {}
    for net in (q_net, a_net):
        for blk in net.blocks():
            header["blocks"][blk.name] = {
                "shape": list(blk.values.shape),
                "adam_t": adam.t.get(blk.name, 0),
            }
            arrays[blk.name] = blk.values.ravel()
            arrays[f"{blk.name}.m"] = adam.m.get(
                blk.name, np.zeros(blk.values.size)).ravel()
            arrays[f"{blk.name}.v"] = adam.v.get(
                blk.name, np.zeros(blk.values.size)).ravel()
    return Checkpoint(header, arrays)


def unpack_nets(ckpt: Checkpoint):
    """Rebuild (q_net, a_net, adam) from a neural checkpoint."""
    from .training import AdamState

    if ckpt.mode != "neural":
        raise CheckpointError(f"expected neural checkpoint, got {ckpt.mode}")
    cfg = ckpt.config
    n_att = cfg.get("n_attributes", 3)
    q_net = QBotNet(0, n_tasks=cfg.get("n_tasks", n_att * (n_att - 1)))
    a_net = ABotNet(0)
    info = ckpt.header["adam"]
    adam = AdamState(lr=info["lr"], beta1=info["beta1"], beta2=info["beta2"],
                     epsilon=info["epsilon"], clamp_bound=info["clamp_bound"])
    blocks = ckpt.header["blocks"]
    for net in (q_net, a_net):
        for blk in net.blocks():
            if blk.name not in blocks:
                raise CheckpointError(f"missing block {blk.name!r}")
            meta = blocks[blk.name]
            if list(blk.values.shape) != meta["shape"]:
                raise CheckpointError(
                    f"block {blk.name!r}: shape {meta['shape']} does not "
                    f"match expected {list(blk.values.shape)}")
            blk.values[...] = ckpt.arrays[blk.name].reshape(blk.values.shape)
            t = meta.get("adam_t", 0)
            if t:
                adam.t[blk.name] = t
                adam.m[blk.name] = ckpt.arrays[f"{blk.name}.m"].reshape(
                    blk.values.shape).copy()
                adam.v[blk.name] = ckpt.arrays[f"{blk.name}.v"].reshape(
                    blk.values.shape).copy()
    return q_net, a_net, adam
