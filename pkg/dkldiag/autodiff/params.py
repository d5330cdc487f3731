"""
Flat parameter vectors with a named-block registry.
"""

import logging
from typing import Dict, Iterable, List, Mapping, Tuple

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "ParamVector",
    "ParamBlock",
]

Shape = Tuple[int, ...]


class ParamBlock:
    """Location of one named block inside the flat vector."""

    __slots__ = ("name", "offset", "shape")

    def __init__(self, name: str, offset: int, shape: Shape):
        self.name = name
        self.offset = offset
        self.shape = tuple(int(s) for s in shape)

    def __repr__(self) -> str:
        return f"ParamBlock({self.name!r}, offset={self.offset}, shape={self.shape})"

    def __eq__(self, other) -> bool:
        return isinstance(other, ParamBlock) and (self.name, self.offset, self.shape) == (
            other.name,
            other.offset,
            other.shape,
        )

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


class ParamVector:
    """
    Immutable flat float64 array plus an ordered registry of named, shaped blocks.

    Block names look like ``"kernel.log_sigma_f2"`` or ``"net.layer0.W"``; the dotted
    prefix groups blocks for freezing, weight decay and priors.
    """

    def __init__(self, values: np.ndarray, blocks: Iterable[ParamBlock]):
        values = np.array(values, dtype=np.float64, copy=True).reshape(-1)
        blocks = list(blocks)
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicate block names: {names}")
        total = sum(b.size for b in blocks)
        if total != values.size:
            raise ValueError(f"Blocks cover {total} entries but vector has {values.size}")
        values.setflags(write=False)
        self._values = values
        self._blocks: Dict[str, ParamBlock] = {b.name: b for b in blocks}

    @classmethod
    def from_blocks(cls, blocks: Mapping[str, np.ndarray]) -> "ParamVector":
        """Build a vector from ``{name: array}`` preserving mapping order."""
        registry: List[ParamBlock] = []
        chunks: List[np.ndarray] = []
        offset = 0
        for name, value in blocks.items():
            arr = np.asarray(value, dtype=np.float64)
            block = ParamBlock(name, offset, arr.shape)
            registry.append(block)
            chunks.append(arr.reshape(-1))
            offset += block.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, registry)

    def __len__(self) -> int:
        return self._values.size

    def __repr__(self) -> str:
        return f"ParamVector(size={len(self)}, blocks={list(self._blocks)})"

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def names(self) -> List[str]:
        return list(self._blocks)

    @property
    def blocks(self) -> List[ParamBlock]:
        return list(self._blocks.values())

    def block(self, name: str) -> np.ndarray:
        """The block ``name`` reshaped to its registered shape (read-only view)."""
        b = self._blocks[name]
        return self._values[b.slice].reshape(b.shape)

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: self.block(name).copy() for name in self._blocks}

    def same_layout(self, other: "ParamVector") -> bool:
        return self.blocks == other.blocks

    def with_values(self, values: np.ndarray) -> "ParamVector":
        """A vector with the same layout and new flat values."""
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != len(self):
            raise ValueError(f"Expected {len(self)} values, got {values.size}")
        return ParamVector(values, self.blocks)

    def update(self, blocks: Mapping[str, np.ndarray]) -> "ParamVector":
        """Copy with the named blocks replaced."""
        values = self._values.copy()
        for name, value in blocks.items():
            b = self._blocks[name]
            values[b.slice] = np.asarray(value, dtype=np.float64).reshape(-1)
        return ParamVector(values, self.blocks)

    def mask(self, prefixes: Iterable[str]) -> np.ndarray:
        """Boolean mask of entries whose block name starts with any of ``prefixes``."""
        prefixes = tuple(prefixes)
        out = np.zeros(len(self), dtype=bool)
        if not prefixes:
            return out
        for b in self._blocks.values():
            if b.name.startswith(prefixes):
                out[b.slice] = True
        return out

    def select(self, prefixes: Iterable[str]) -> List[str]:
        prefixes = tuple(prefixes)
        return [n for n in self._blocks if n.startswith(prefixes)]
