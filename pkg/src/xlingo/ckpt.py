"""Checkpoint serialization, encoder transplant, averaging, freeze checks.

Binary format (little-endian, bit-exact round trip):
    magic "XLCK" | u32 version=1 | u64 step | u32 n_meta
    per meta: u16 key len, key utf-8, u32 value len, value utf-8
    u32 n_tensors
    per tensor: u16 name len, name utf-8, u8 dtype (1 = f64), u8 rank,
                rank x u32 dims, row-major f64 payload

Writes go to a temp file then an atomic rename, so readers never observe
a partial checkpoint.
"""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"XLCK"
VERSION = 1
DTYPE_F64 = 1

_STEP_RE = re.compile(r"^ckpt-(\d+)\.xlck$")


@dataclass
class Checkpoint:
    """Immutable named-tensor map with a step counter and string metadata."""

    step: int
    metadata: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.tensors)


def snapshot(params, step: int, metadata: dict[str, str] | None = None) -> Checkpoint:
    """Checkpoint from a name->Tensor registry (values are copied)."""
    tensors = {n: p.data.copy() for n, p in params.items()}
    return Checkpoint(step=step, metadata=dict(metadata or {}), tensors=tensors)


def save(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    if ckpt.step < 0:
        raise CheckpointError("step must be >= 0")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<IQ", VERSION, ckpt.step)
    blob += struct.pack("<I", len(ckpt.metadata))
    for k, v in ckpt.metadata.items():
        kb = k.encode("utf-8")
        vb = v.encode("utf-8")
        blob += struct.pack("<H", len(kb)) + kb
        blob += struct.pack("<I", len(vb)) + vb
    blob += struct.pack("<I", len(ckpt.tensors))
    for name, arr in ckpt.tensors.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<BB", DTYPE_F64, arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(blob))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: {self.path}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint: {err}") from err
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"bad magic, not a checkpoint: {path}")
    (version, step) = r.unpack("<IQ")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}: {path}")
    (n_meta,) = r.unpack("<I")
    metadata: dict[str, str] = {}
    for _ in range(n_meta):
        (klen,) = r.unpack("<H")
        key = r.take(klen).decode("utf-8")
        (vlen,) = r.unpack("<I")
        metadata[key] = r.take(vlen).decode("utf-8")
    (n_tensors,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (dtype, rank) = r.unpack("<BB")
        if dtype != DTYPE_F64:
            raise CheckpointError(f"unknown tensor dtype {dtype} in {path}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(dims)) if dims else 1
        payload = r.take(8 * count)
        arr = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name} in {path}")
        tensors[name] = arr
    if r.pos != len(data):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")
    return Checkpoint(step=step, metadata=metadata, tensors=tensors)


@dataclass
class FreezeMask:
    """Parameter-name prefixes excluded from optimization."""

    prefixes: tuple[str, ...]

    def covers(self, name: str) -> bool:
        return name.startswith(self.prefixes)

    def validate(self, names) -> None:
        names = list(names)
        for p in self.prefixes:
            if not any(n.startswith(p) for n in names):
                raise CheckpointError(f"freeze prefix matches nothing: {p}")


@dataclass
class TransplantReport:
    loaded: list[str]
    skipped: list[str]
    missing: list[str]


# never transplanted: target-language-specific parts of the NMT model
_POLICY_EXCLUDE = ("decoder.",)


def transplant(source: Checkpoint, params, name_map: dict[str, str] | None = None
               ) -> TransplantReport:
    """Overwrite mapped target parameters with source tensors.

    name_map maps source name -> target name and defaults to the identity
    over all source tensors. Decoder/attention tensors are skipped by
    policy. A shape mismatch on any mapped name aborts before anything is
    written (no partial load).
    """
    if name_map is None:
        name_map = {n: n for n in source.tensors}
    loaded: list[str] = []
    skipped: list[str] = []
    missing: list[str] = []
    plan: list[tuple[str, str]] = []
    for src_name, dst_name in name_map.items():
        if src_name.startswith(_POLICY_EXCLUDE):
            skipped.append(src_name)
            continue
        if src_name not in source.tensors:
            missing.append(src_name)
            continue
        if dst_name not in params:
            missing.append(dst_name)
            continue
        if source.tensors[src_name].shape != params[dst_name].data.shape:
            raise CheckpointError(
                f"shape mismatch transplanting {src_name} -> {dst_name}: "
                f"{source.tensors[src_name].shape} vs {params[dst_name].data.shape}"
            )
        plan.append((src_name, dst_name))
    for src_name, dst_name in plan:
        params[dst_name].data = source.tensors[src_name].copy()
        loaded.append(dst_name)
    return TransplantReport(loaded=loaded, skipped=skipped, missing=missing)


def average(checkpoints: list[Checkpoint]) -> Checkpoint:
    """Uniform elementwise mean of identically shaped checkpoints."""
    if not checkpoints:
        raise CheckpointError("cannot average zero checkpoints")
    names = checkpoints[0].names()
    for c in checkpoints[1:]:
        if c.names() != names:
            raise CheckpointError("checkpoint name sets differ")
        for n in names:
            if c.tensors[n].shape != checkpoints[0].tensors[n].shape:
                raise CheckpointError(f"shape mismatch averaging tensor {n}")
    out: dict[str, np.ndarray] = {}
    for n in names:
        acc = checkpoints[0].tensors[n].astype(np.float64).copy()
        for c in checkpoints[1:]:
            acc += c.tensors[n]
        out[n] = acc / len(checkpoints)
    steps = sorted(c.step for c in checkpoints)
    meta = dict(checkpoints[-1].metadata)
    meta["smoothing_steps"] = ",".join(str(s) for s in steps)
    meta["smoothing_range"] = f"{steps[0]}-{steps[-1]}"
    return Checkpoint(step=max(steps), metadata=meta, tensors=out)


def ckpt_path(directory, step: int) -> Path:
    return Path(directory) / f"ckpt-{step}.xlck"


def list_checkpoints(directory) -> list[tuple[int, Path]]:
    out = []
    for p in Path(directory).iterdir():
        m = _STEP_RE.match(p.name)
        if m:
            out.append((int(m.group(1)), p))
    return sorted(out)


def window_select(directory, smoothing_range_steps: int, end_step: int
                  ) -> list[Path]:
    """Checkpoint files with step in (end_step - range, end_step], ascending."""
    chosen = [
        p for step, p in list_checkpoints(directory)
        if end_step - smoothing_range_steps < step <= end_step
    ]
    if not chosen:
        raise CheckpointError(
            f"no checkpoints in ({end_step - smoothing_range_steps}, {end_step}]"
        )
    return chosen


def verify_frozen(before: Checkpoint, after: Checkpoint, mask: FreezeMask) -> bool:
    """True iff every masked tensor is bitwise identical (not a tolerance)."""
    if before.names() != after.names():
        raise CheckpointError("checkpoint name sets differ")
    for n in before.names():
        if mask.covers(n):
            a, b = before.tensors[n], after.tensors[n]
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
    return True
