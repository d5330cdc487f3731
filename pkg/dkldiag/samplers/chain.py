"""
Chain state shared by the samplers, and chain checkpoints on disk.
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..autodiff import ParamVector
from ..models.checkpoint import CheckpointError, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

__all__ = [
    "SamplerError",
    "ChainState",
    "ChainManifest",
    "save_chain",
    "load_chain",
]

MANIFEST_NAME = "manifest.json"


class SamplerError(Exception):
    """Raised on invalid sampler settings or a persistently non-finite potential."""


class ChainState(BaseModel):
    """Current position plus everything a run retained."""

    position: ParamVector = Field(..., description="Current parameters")
    momentum: Optional[np.ndarray] = Field(None, description="Last momentum (HMC only)")
    step_size: float = Field(..., gt=0, description="Leapfrog step size or initial SGLD learning rate")
    leapfrog_steps: int = Field(default=0, ge=0, description="Leapfrog steps per proposal (HMC only)")
    samples: List[ParamVector] = Field(default_factory=list, description="Retained samples")
    sample_energies: List[float] = Field(default_factory=list, description="Potential at each retained sample")
    proposals: int = Field(default=0, ge=0, description="Number of Metropolis proposals")
    accepted: int = Field(default=0, ge=0, description="Number of accepted proposals")
    accept_prob_sum: float = Field(default=0.0, ge=0, description="Sum of Metropolis acceptance probabilities")
    rejected_nonfinite: int = Field(default=0, ge=0, description="Proposals rejected for non-finite energy")

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0

    @property
    def mean_accept_prob(self) -> float:
        return self.accept_prob_sum / self.proposals if self.proposals else 0.0

    def sample_matrix(self) -> np.ndarray:
        """Retained samples stacked as rows."""
        if not self.samples:
            return np.zeros((0, len(self.position)))
        return np.stack([s.values for s in self.samples])


class ManifestEntry(BaseModel):
    index: int = Field(..., ge=0)
    file: str
    potential: Optional[float] = None


class ChainManifest(BaseModel):
    """Index of a saved chain: one checkpoint file per retained sample."""

    samples: List[ManifestEntry] = Field(default_factory=list)
    proposals: int = 0
    accepted: int = 0
    acceptance_rate: float = 0.0
    mean_accept_prob: float = 0.0
    step_size: float = 0.0
    leapfrog_steps: int = 0


def save_chain(chain: ChainState, directory: Union[str, Path]) -> Path:
    """Write every retained sample in the checkpoint format plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(chain.samples):
        name = f"sample_{i:05d}.params"
        save_checkpoint(directory / name, sample)
        energy = chain.sample_energies[i] if i < len(chain.sample_energies) else None
        entries.append(ManifestEntry(index=i, file=name, potential=energy))
    manifest = ChainManifest(
        samples=entries,
        proposals=chain.proposals,
        accepted=chain.accepted,
        acceptance_rate=chain.acceptance_rate,
        mean_accept_prob=chain.mean_accept_prob,
        step_size=chain.step_size,
        leapfrog_steps=chain.leapfrog_steps,
    )
    path = directory / MANIFEST_NAME
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Saved {len(entries)} chain samples to {directory}")
    return path


def load_chain(directory: Union[str, Path]) -> ChainState:
    """
    Rebuild a :class:`ChainState` from a directory written by :func:`save_chain`.

    Raises:
        SamplerError: If the manifest or a sample file is missing or malformed
    """
    directory = Path(directory)
    try:
        manifest = ChainManifest.model_validate_json((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        raise SamplerError(f"Cannot read chain manifest in {directory}: {e}") from e
    if not manifest.samples:
        raise SamplerError(f"Chain in {directory} has no samples")
    try:
        samples = [load_checkpoint(directory / entry.file) for entry in manifest.samples]
    except CheckpointError as e:
        raise SamplerError(f"Cannot load chain sample: {e}") from e
    return ChainState(
        position=samples[-1],
        step_size=manifest.step_size if manifest.step_size > 0 else 1.0,
        leapfrog_steps=manifest.leapfrog_steps,
        samples=samples,
        sample_energies=[e.potential for e in manifest.samples if e.potential is not None],
        proposals=manifest.proposals,
        accepted=manifest.accepted,
        accept_prob_sum=manifest.mean_accept_prob * manifest.proposals,
    )
