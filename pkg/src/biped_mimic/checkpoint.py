"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic   b"BMCK"
    u32     format version
    u32     number of records
    records, each:
        u16     name length, then the UTF-8 name
        u8      kind: 0 float64 array, 1 int64 array, 2 UTF-8 text
        u8      ndim, then ndim x u64 shape      (arrays only)
        u64     payload length in bytes, then the payload

Float arrays are stored as little-endian float64 in row-major order, so a
save/load round trip is bit-exact. Records hold the actor and critic layer
sizes and weights, the normalizer, both Adam states, the iteration counter,
the exploration variance, the resolved config text and the reference CSV.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .neural import MLP, AdamState, Normalizer
from .ppo import Agent

MAGIC = b"BMCK"
VERSION = 1
_F64, _I64, _TEXT = 0, 1, 2


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TopologyMismatch(CheckpointError):
    pass


@dataclass
class Checkpoint:
    agent: Agent
    actor_opt: AdamState | None
    critic_opt: AdamState | None
    iteration: int
    config_text: str
    reference_csv: str

    @property
    def topology(self) -> tuple:
        return (tuple(self.agent.actor.sizes), tuple(self.agent.critic.sizes))


def _pack_records(records: list[tuple[str, object]]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, value in records:
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb)
        if isinstance(value, str):
            payload = value.encode()
            out.append(struct.pack("<B", _TEXT))
        else:
            arr = np.asarray(value)
            if arr.dtype.kind in "iu":
                kind, arr = _I64, arr.astype("<i8")
            else:
                kind, arr = _F64, arr.astype("<f8")
            out.append(struct.pack("<BB", kind, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            payload = arr.tobytes(order="C")
        out.append(struct.pack("<Q", len(payload)) + payload)
    return b"".join(out)


def _unpack_records(data: bytes) -> dict:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {VERSION}")
    pos = 12
    out = {}
    try:
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + ln].decode()
            pos += ln
            (kind,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = ()
            if kind != _TEXT:
                (ndim,) = struct.unpack_from("<B", data, pos)
                pos += 1
                shape = struct.unpack_from(f"<{ndim}Q", data, pos)
                pos += 8 * ndim
            (size,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            payload = data[pos:pos + size]
            if len(payload) != size:
                raise CheckpointError("truncated checkpoint")
            pos += size
            if kind == _TEXT:
                out[name] = payload.decode()
            elif kind in (_F64, _I64):
                dtype = "<f8" if kind == _F64 else "<i8"
                out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(
                    np.float64 if kind == _F64 else np.int64)
            else:
                raise CheckpointError(f"unknown record kind {kind}")
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return out


def _net_records(prefix: str, net: MLP):
    recs = [(f"{prefix}.output", net.output), (f"{prefix}.sizes", np.array(net.sizes, dtype=np.int64))]
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        recs += [(f"{prefix}.W{k}", w), (f"{prefix}.b{k}", b)]
    return recs


def _opt_records(prefix: str, opt: AdamState | None):
    if opt is None:
        return []
    recs = [(f"{prefix}.hyper", np.array([opt.lr, opt.beta1, opt.beta2, opt.eps])),
            (f"{prefix}.t", np.array(opt.t, dtype=np.int64))]
    for k, (m, v) in enumerate(zip(opt.m, opt.v)):
        recs += [(f"{prefix}.m{k}", m), (f"{prefix}.v{k}", v)]
    return recs


def dumps(ckpt: Checkpoint) -> bytes:
    a = ckpt.agent
    recs = _net_records("actor", a.actor) + _net_records("critic", a.critic)
    recs += [
        ("normalizer.mean", a.normalizer.mean),
        ("normalizer.std", a.normalizer.std),
        ("normalizer.count", np.array(a.normalizer.count, dtype=np.int64)),
        ("policy.variance", np.array(a.variance)),
        ("iteration", np.array(ckpt.iteration, dtype=np.int64)),
        ("config", ckpt.config_text),
        ("reference", ckpt.reference_csv),
    ]
    recs += _opt_records("adam.actor", ckpt.actor_opt) + _opt_records("adam.critic", ckpt.critic_opt)
    return _pack_records(recs)


def _net(rec: dict, prefix: str) -> MLP:
    ws, bs = [], []
    k = 0
    while f"{prefix}.W{k}" in rec:
        ws.append(rec[f"{prefix}.W{k}"])
        bs.append(rec[f"{prefix}.b{k}"])
        k += 1
    if not ws:
        raise CheckpointError(f"checkpoint has no {prefix} network")
    net = MLP(ws, bs, rec[f"{prefix}.output"])
    if f"{prefix}.sizes" in rec and list(rec[f"{prefix}.sizes"]) != net.sizes:
        raise CheckpointError(f"{prefix} layer sizes disagree with the stored weights")
    return net


def _opt(rec: dict, prefix: str) -> AdamState | None:
    if f"{prefix}.hyper" not in rec:
        return None
    lr, b1, b2, eps = rec[f"{prefix}.hyper"]
    m, v = [], []
    k = 0
    while f"{prefix}.m{k}" in rec:
        m.append(rec[f"{prefix}.m{k}"].copy())
        v.append(rec[f"{prefix}.v{k}"].copy())
        k += 1
    return AdamState(float(lr), m, v, int(rec[f"{prefix}.t"]), float(b1), float(b2), float(eps))


def loads(data: bytes) -> Checkpoint:
    rec = _unpack_records(data)
    try:
        norm = Normalizer(rec["normalizer.mean"].copy(), rec["normalizer.std"].copy(),
                          int(rec["normalizer.count"]))
        agent = Agent(_net(rec, "actor"), _net(rec, "critic"), norm, float(rec["policy.variance"]))
        return Checkpoint(agent, _opt(rec, "adam.actor"), _opt(rec, "adam.critic"),
                          int(rec["iteration"]), rec["config"], rec["reference"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing record {exc}") from None


def save(ckpt: Checkpoint, path) -> str:
    """Write the checkpoint; returns its identity (sha256 of the file bytes)."""
    data = dumps(ckpt)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())


def identity(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def check_compatible(a: Checkpoint, b: Checkpoint):
    if a.topology != b.topology:
        raise TopologyMismatch(f"network topologies differ: {a.topology} vs {b.topology}")
