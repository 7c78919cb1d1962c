"""Text checkpoints: named weight matrices with round-trip-exact reals.

Layout: a ``CAFKT-CKPT v1`` header line, then for each block one line
``name rows cols`` followed by ``rows`` lines of space-separated decimal
reals. Reals are written with shortest round-trip formatting, so
save -> load -> save reproduces files byte for byte.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

MAGIC = "CAFKT-CKPT v1"


class CheckpointError(ValueError):
    """A checkpoint file is missing, truncated, or malformed."""


def save_checkpoint(path, blocks: dict[str, np.ndarray]) -> None:
    lines = [MAGIC]
    for name, matrix in blocks.items():
        m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        if " " in name or not name:
            raise ValueError(f"block name {name!r} must be non-empty, without spaces")
        if not np.all(np.isfinite(m)):
            raise ValueError(f"block {name!r} contains non-finite values")
        lines.append(f"{name} {m.shape[0]} {m.shape[1]}")
        for row in m:
            lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read checkpoint {path}: {err}") from None
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: missing '{MAGIC}' header")
    blocks: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if len(head) != 3:
            raise CheckpointError(f"{path}: bad block header at line {i + 1}")
        name = head[0]
        try:
            rows, cols = int(head[1]), int(head[2])
        except ValueError:
            raise CheckpointError(f"{path}: bad block sizes at line {i + 1}") from None
        matrix = np.zeros((rows, cols))
        for r in range(rows):
            line_no = i + 1 + r
            if line_no >= len(lines):
                raise CheckpointError(f"{path}: block {name!r} truncated")
            fields = lines[line_no].split()
            if len(fields) != cols:
                raise CheckpointError(
                    f"{path}: block {name!r} row {r} has {len(fields)} fields, wants {cols}"
                )
            try:
                matrix[r] = [float(tok) for tok in fields]
            except ValueError:
                raise CheckpointError(
                    f"{path}: block {name!r} row {r} has a non-numeric field"
                ) from None
        blocks[name] = matrix
        i += 1 + rows
    return blocks
