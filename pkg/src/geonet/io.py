"""On-disk formats: GEOW checkpoints, trace CSVs and key=value run configs.

GEOW layout (all integers little-endian)::

    b"GEOW"  u16 version=1
    u32 number of layer sizes L+1, then L+1 u32 sizes
    L u8 activation codes (0 relu, 1 tanh, 2 identity)
    n float64 weights
"""
from __future__ import annotations

import csv
import math
import re
import struct
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .nn import ACTIVATION_CODES, ACTIVATIONS, ArchSpec

MAGIC = b"GEOW"
VERSION = 1
BASE_COLUMNS = ("step", "loss", "accuracy", "dist_to_target", "quad_form", "step_norm")


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncated(CheckpointError):
    pass


class ArchMismatch(CheckpointError):
    pass


def encode_checkpoint(arch: ArchSpec, w) -> bytes:
    w = arch.check_weights(w)
    if not np.all(np.isfinite(w)):
        raise ValueError("refusing to save non-finite weights")
    head = MAGIC + struct.pack("<H", VERSION)
    head += struct.pack("<I", len(arch.layer_dims))
    head += struct.pack(f"<{len(arch.layer_dims)}I", *arch.layer_dims)
    head += bytes(ACTIVATION_CODES[a] for a in arch.activations)
    return head + w.astype("<f8").tobytes()


def decode_checkpoint(buf: bytes, expect: Optional[ArchSpec] = None) -> tuple[ArchSpec, np.ndarray]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointMagicError("bad magic: not a GEOW checkpoint")
    if len(buf) < 10:
        raise CheckpointTruncated("truncated payload: header incomplete")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported GEOW version {version}")
    (n_dims,) = struct.unpack_from("<I", buf, 6)
    pos = 10
    if n_dims < 2 or len(buf) < pos + 4 * n_dims + (n_dims - 1):
        raise CheckpointTruncated("truncated payload: architecture descriptor incomplete")
    dims = struct.unpack_from(f"<{n_dims}I", buf, pos)
    pos += 4 * n_dims
    codes = buf[pos:pos + n_dims - 1]
    pos += n_dims - 1
    try:
        arch = ArchSpec(dims, tuple(ACTIVATIONS[c] for c in codes))
    except (IndexError, ValueError) as e:
        raise CheckpointError(f"corrupt architecture descriptor: {e}") from None
    need = 8 * arch.n_params
    if len(buf) - pos < need:
        raise CheckpointTruncated(
            f"truncated payload: {len(buf) - pos} of {need} weight bytes present")
    if len(buf) - pos > need:
        raise CheckpointError("trailing bytes after weight payload")
    if expect is not None and expect != arch:
        raise ArchMismatch(f"arch mismatch: checkpoint is {arch} {arch.activations}, "
                           f"run expects {expect} {expect.activations}")
    w = np.frombuffer(buf, dtype="<f8", count=arch.n_params, offset=pos).astype(np.float64)
    return arch, w


def save_checkpoint(path, arch: ArchSpec, w):
    Path(path).write_bytes(encode_checkpoint(arch, w))


def load_checkpoint(path, expect: Optional[ArchSpec] = None) -> tuple[ArchSpec, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes(), expect)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.10g}"


def _task_index(key):
    m = re.fullmatch(r"acc_task_(\d+)", key)
    return int(m.group(1)) if m else None


def trace_columns(records: Iterable[dict]) -> list:
    keys = []
    for r in records:
        for k in r:
            if k not in keys:
                keys.append(k)
    extra = [k for k in keys if k not in BASE_COLUMNS]
    tasks = sorted((k for k in extra if _task_index(k) is not None), key=_task_index)
    rest = sorted(k for k in extra if _task_index(k) is None and k != "sparsity")
    return list(BASE_COLUMNS) + tasks + (["sparsity"] if "sparsity" in extra else []) + rest


def write_trace_csv(trace, path):
    """One row per record; floats with 10 significant digits (round trip to 1e-9 relative)."""
    records = trace.records if hasattr(trace, "records") else list(trace)
    cols = trace_columns(records)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for r in records:
            wr.writerow([_fmt(r.get(c, math.nan)) for c in cols])


def read_trace_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(v) if k == "step" else float(v)) for k, v in r.items()})
    return out


def write_table_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


# -- key=value configs ----------------------------------------------------------

def format_config(values: dict) -> str:
    lines = []
    for k, v in values.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        elif v is None:
            v = ""
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> dict:
    """``key=value`` per line; ``#`` starts a comment; values stay strings."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_config(path, values: dict):
    Path(path).write_text(format_config(values))


def read_config(path) -> dict:
    return parse_config(Path(path).read_text())
