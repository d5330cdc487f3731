"""
Lossless text checkpoints for parameter vectors.

Grammar::

    line 1     {"format": "dkldiag-params", "version": 1, "blocks": [{"name": ..., "shape": [...]}, ...]}
    line 2..   one float64 per line as a ``float.hex()`` literal, blocks in header order,
               each block flattened in C order

Hex literals round-trip every 64-bit float exactly, including signed zeros.
"""

import logging
from pathlib import Path
from typing import List, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..autodiff import ParamBlock, ParamVector

logger = logging.getLogger(__name__)

__all__ = [
    "CheckpointError",
    "CheckpointHeader",
    "save_checkpoint",
    "load_checkpoint",
]

FORMAT_NAME = "dkldiag-params"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Raised on unreadable or malformed checkpoint files."""


class BlockEntry(BaseModel):
    name: str = Field(..., min_length=1)
    shape: List[int] = Field(default_factory=list)

    model_config = ConfigDict(extra="forbid")


class CheckpointHeader(BaseModel):
    """First line of a checkpoint file."""

    format: Literal["dkldiag-params"] = FORMAT_NAME
    version: Literal[1] = FORMAT_VERSION
    blocks: List[BlockEntry] = Field(default_factory=list)

    model_config = ConfigDict(extra="forbid")


def save_checkpoint(path: Union[str, Path], theta: ParamVector) -> Path:
    """Write ``theta`` to ``path``; parent directories are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = CheckpointHeader(blocks=[BlockEntry(name=b.name, shape=list(b.shape)) for b in theta.blocks])
    lines = [header.model_dump_json()]
    lines.extend(float(v).hex() for v in theta.values)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug(f"Wrote checkpoint with {len(theta)} values to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> ParamVector:
    """
    Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        CheckpointError: If the file is missing, the header is invalid or the value count
            does not match the header
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if not lines:
        raise CheckpointError(f"Checkpoint {path} is empty")
    try:
        header = CheckpointHeader.model_validate_json(lines[0])
    except ValidationError as e:
        raise CheckpointError(f"Invalid checkpoint header in {path}: {e}") from e

    values = []
    for lineno, text in enumerate(lines[1:], start=2):
        text = text.strip()
        if not text:
            continue
        try:
            values.append(float.fromhex(text))
        except ValueError as e:
            raise CheckpointError(f"{path}:{lineno}: not a hex float literal: {text!r}") from e

    blocks = []
    offset = 0
    for entry in header.blocks:
        block = ParamBlock(entry.name, offset, tuple(entry.shape))
        blocks.append(block)
        offset += block.size
    if offset != len(values):
        raise CheckpointError(f"Header of {path} describes {offset} values but the file holds {len(values)}")
    try:
        return ParamVector(np.asarray(values, dtype=np.float64), blocks)
    except ValueError as e:
        raise CheckpointError(f"Invalid block layout in {path}: {e}") from e
