"""Binary checkpoints.

Layout::

    b"M3RECKPT"
    u32 manifest length, manifest (utf-8 key=value lines)
    per parameter: u16 name length, name, u32 rows, u32 cols,
                   u64 byte length, rows*cols little-endian float64
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .multitask import M3RecModel, TaskSpec, init_model

MAGIC = b"M3RECKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _manifest(model: M3RecModel) -> str:
    tasks = ",".join(f"{t.task_id}:{t.vocab_kind}:{t.role}:{t.weight!r}:{t.level}" for t in model.tasks)
    fields = {
        "format_version": FORMAT_VERSION,
        "d": model.d,
        "n_layers": model.n_layers,
        "max_len": model.max_len,
        "seed": model.seed,
        "vocab_item": model.vocab_sizes["item"],
        "vocab_category": model.vocab_sizes["category"],
        "vocab_user": model.vocab_sizes["user"],
        "tasks": tasks,
        "n_params": len(model.parameters()),
    }
    return "".join(f"{k}={v}\n" for k, v in fields.items())


def to_bytes(model: M3RecModel) -> bytes:
    man = _manifest(model).encode()
    parts = [MAGIC, struct.pack("<I", len(man)), man]
    for p in model.parameters():
        name = p.name.encode()
        data = np.ascontiguousarray(p.value, dtype="<f8").tobytes()
        rows, cols = p.value.shape
        parts += [struct.pack("<H", len(name)), name, struct.pack("<IIQ", rows, cols, len(data)), data]
    return b"".join(parts)


def save_checkpoint(model: M3RecModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def from_bytes(buf: bytes) -> M3RecModel:
    if not buf.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (mlen,) = read("<I")
    if pos + mlen > len(buf):
        raise CheckpointError("truncated checkpoint manifest")
    try:
        man = dict(line.split("=", 1) for line in buf[pos:pos + mlen].decode().splitlines() if line)
        pos += mlen
        if int(man.get("format_version", -1)) != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format {man.get('format_version')}")
        tasks = []
        for entry in man["tasks"].split(","):
            tid, kind, role, weight, level = entry.split(":")
            tasks.append(TaskSpec(tid, kind, role, float(weight), level))
        sizes = {k: int(man[f"vocab_{k}"]) for k in ("item", "category", "user")}
        model = init_model(
            sizes, int(man["d"]), tasks, seed=int(man["seed"]),
            n_layers=int(man["n_layers"]), max_len=int(man["max_len"]),
        )
        n_params = int(man["n_params"])
    except CheckpointError:
        raise
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"bad checkpoint manifest ({exc})") from None
    params = model.named_parameters()
    seen = set()
    for _ in range(n_params):
        (nlen,) = read("<H")
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        rows, cols, nbytes = read("<IIQ")
        if name not in params:
            raise CheckpointError(f"unexpected parameter {name!r}")
        p = params[name]
        if (rows, cols) != p.value.shape or nbytes != rows * cols * 8:
            raise CheckpointError(f"parameter {name!r} has shape {(rows, cols)}, expected {p.value.shape}")
        if pos + nbytes > len(buf):
            raise CheckpointError("truncated checkpoint")
        p.value[...] = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols)
        pos += nbytes
        seen.add(name)
    if seen != set(params):
        raise CheckpointError(f"missing parameters {sorted(set(params) - seen)}")
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last parameter")
    return model


def load_checkpoint(path) -> M3RecModel:
    return from_bytes(Path(path).read_bytes())
