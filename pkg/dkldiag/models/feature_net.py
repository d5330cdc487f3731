"""
MLP feature extractor ``g_phi`` mapping D-dimensional inputs to Q-dimensional features.
"""

import logging
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..autodiff import ops
from ..base import Array
from ..core.random import RandomStream

logger = logging.getLogger(__name__)

__all__ = [
    "NetSpec",
    "DenseLayer",
    "FeatureNetParams",
    "FeatureNetError",
    "init_params",
    "forward",
    "identity_params",
    "constant_params",
]


class FeatureNetError(Exception):
    """Raised on malformed network parameters or mismatched inputs."""


class NetSpec(BaseModel):
    """Architecture of the feature extractor."""

    input_dim: int = Field(default=1, ge=1, description="Input width D")
    hidden_widths: List[int] = Field(default_factory=lambda: [100, 50], description="Hidden layer widths")
    feature_dim: int = Field(default=2, ge=1, description="Output (feature) width Q")
    activation_on_output: bool = Field(
        default=False,
        description="Apply ReLU to the output layer (post-activation features) instead of handing over pre-activations",
    )
    seed: int = Field(default=0, ge=0, description="Initialization seed")

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _check_widths(self) -> "NetSpec":
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"Hidden widths must be positive, got {self.hidden_widths}")
        return self


class DenseLayer(BaseModel):
    """Affine layer ``x W^T + b`` with optional ReLU."""

    weight: Array = Field(..., description="Weight matrix (out x in)")
    bias: Array = Field(..., description="Bias vector (out)")
    relu: bool = Field(default=True, description="Apply ReLU after the affine map")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def in_width(self) -> int:
        return self.weight.shape[1]

    @property
    def out_width(self) -> int:
        return self.weight.shape[0]


class FeatureNetParams(BaseModel):
    """Weights ``phi`` of the feature extractor."""

    layers: List[DenseLayer] = Field(..., min_length=1, description="Layers from input to output")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def _check_chain(self) -> "FeatureNetParams":
        for i, layer in enumerate(self.layers):
            if len(layer.weight.shape) != 2 or tuple(layer.bias.shape) != (layer.out_width,):
                raise FeatureNetError(
                    f"Layer {i}: weight {layer.weight.shape} and bias {layer.bias.shape} are inconsistent"
                )
            if i > 0 and self.layers[i - 1].out_width != layer.in_width:
                raise FeatureNetError(
                    f"Layer {i} expects width {layer.in_width}, previous layer outputs {self.layers[i - 1].out_width}"
                )
        return self

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_width

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_width

    def blocks(self, prefix: str = "net.") -> Dict[str, Array]:
        out: Dict[str, Array] = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}layer{i}.W"] = layer.weight
            out[f"{prefix}layer{i}.b"] = layer.bias
        return out

    def bind(self, view: Mapping[str, Any], prefix: str = "net.") -> "FeatureNetParams":
        """Copy with weights taken from ``view`` (arrays or tape nodes)."""
        layers = [
            DenseLayer(weight=view[f"{prefix}layer{i}.W"], bias=view[f"{prefix}layer{i}.b"], relu=layer.relu)
            for i, layer in enumerate(self.layers)
        ]
        return FeatureNetParams.model_construct(layers=layers)


def init_params(spec: NetSpec, stream: Optional[RandomStream] = None) -> FeatureNetParams:
    """Glorot-uniform weights and zero biases, deterministic per seed."""
    stream = stream if stream is not None else RandomStream(spec.seed)
    widths = [spec.input_dim] + list(spec.hidden_widths) + [spec.feature_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = stream.uniform((fan_out, fan_in), -limit, limit)
        is_output = i == len(widths) - 2
        layers.append(
            DenseLayer(weight=weight, bias=np.zeros(fan_out), relu=spec.activation_on_output if is_output else True)
        )
    logger.debug(f"Initialized feature net with widths {widths}")
    return FeatureNetParams(layers=layers)


def forward(params: FeatureNetParams, X: Array) -> Array:
    """
    Layerwise affine map plus activation.

    Raises:
        FeatureNetError: If ``X`` does not have ``input_dim`` columns
    """
    if len(X.shape) != 2 or X.shape[1] != params.input_dim:
        raise FeatureNetError(f"Expected inputs with {params.input_dim} columns, got shape {X.shape}")
    h = X
    for layer in params.layers:
        h = ops.add(ops.matmul(h, ops.transpose(layer.weight)), layer.bias)
        if layer.relu:
            h = ops.relu(h)
    return h


def identity_params(dim: int) -> FeatureNetParams:
    """Single linear layer with identity weights."""
    return FeatureNetParams(layers=[DenseLayer(weight=np.eye(dim), bias=np.zeros(dim), relu=False)])


def constant_params(input_dim: int, value: np.ndarray) -> FeatureNetParams:
    """Single linear layer mapping every input to ``value``."""
    value = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return FeatureNetParams(
        layers=[DenseLayer(weight=np.zeros((value.size, input_dim)), bias=value.copy(), relu=False)]
    )
