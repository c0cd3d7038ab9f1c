"""Single-file checkpoint container.

Layout::

    csri-checkpoint 1
    meta\t<json object>
    block\t<name>
    tensor\t<name>\t<dtype>\t<comma-separated shape>\t<offset>\t<nbytes>
    ...
    end
    <payload: little-endian float32 tensors, concatenated>

Offsets are relative to the first payload byte. Block and tensor names are
unique, so each parameter is stored exactly once.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = "csri-checkpoint 1"
DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def write_blocks(path: str | Path, meta: dict, blocks: dict[str, dict[str, np.ndarray]]) -> None:
    header = [MAGIC, "meta\t" + json.dumps(meta, sort_keys=True)]
    payload, offset = [], 0
    for block, tensors in blocks.items():
        header.append(f"block\t{block}")
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
            shape = ",".join(str(d) for d in np.shape(arr))
            header.append(f"tensor\t{name}\tfloat32\t{shape}\t{offset}\t{len(data)}")
            payload.append(data)
            offset += len(data)
    header.append("end")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for chunk in payload:
            fh.write(chunk)


def read_blocks(path: str | Path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    raw = Path(path).read_bytes()
    pos, lines = 0, []
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise CheckpointError(f"{path}: truncated header")
        line = raw[pos:nl].decode("utf-8")
        pos = nl + 1
        if line == "end":
            break
        lines.append(line)
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body = memoryview(raw)[pos:]
    meta, blocks, current = {}, {}, None
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if fields[0] == "meta":
            meta = json.loads(fields[1])
        elif fields[0] == "block":
            if fields[1] in blocks:
                raise CheckpointError(f"{path}:{lineno}: duplicate block {fields[1]!r}")
            current = blocks[fields[1]] = {}
        elif fields[0] == "tensor" and current is not None:
            name, _, shape, off, nbytes = fields[1:]
            if name in current:
                raise CheckpointError(f"{path}:{lineno}: duplicate tensor {name!r}")
            dims = tuple(int(d) for d in shape.split(",")) if shape else ()
            off, nbytes = int(off), int(nbytes)
            if off + nbytes > len(body):
                raise CheckpointError(f"{path}:{lineno}: payload out of range")
            current[name] = np.frombuffer(body[off:off + nbytes], dtype=DTYPE).reshape(dims).copy()
        else:
            raise CheckpointError(f"{path}:{lineno}: unexpected line {line[:40]!r}")
    return meta, blocks
