"""Pointwise layer stacks standing in for a heavyweight feature extractor.

Images are cut into a grid of patches, each patch flattened into a vector,
and a stack of 1x1 (pointwise) fully connected layers maps those vectors to
feature maps of shape h x w x c. The same stack type also implements the
nonlinear transforms applied to feature maps inside the attention block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class LayerStackConfig:
    """Widths and activations of a pointwise layer stack.

    `widths` are output widths per layer; the final entry defines the output
    channel count. `activations` defaults to relu on hidden layers and none
    on the last (identity output).
    """

    in_width: int
    widths: tuple
    activations: tuple = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths:
            raise ValueError("a stack needs at least one layer")
        if self.in_width <= 0 or any(w <= 0 for w in self.widths):
            raise ValueError("layer widths must be positive")
        acts = tuple(self.activations)
        if not acts:
            acts = ("relu",) * (len(self.widths) - 1) + ("none",)
        if len(acts) != len(self.widths):
            raise ValueError("need one activation per layer")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "activations", acts)

    @property
    def out_width(self) -> int:
        return self.widths[-1]


@dataclass
class LayerStack:
    """Trainable weights/biases of a pointwise stack."""

    weights: list  # Tensor (in, out) per layer
    biases: list  # Tensor (out,) per layer
    activations: tuple

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_width(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self, prefix: str = "stack"):
        """Named (name, Tensor) pairs in a stable order."""
        out = []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}.{k}.weight", w))
            out.append((f"{prefix}.{k}.bias", b))
        return out


def init_stack(config: LayerStackConfig) -> LayerStack:
    """He-initialized weights (std sqrt(2/in_width)), zero biases."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    fan_in = config.in_width
    for w in config.widths:
        scale = np.sqrt(2.0 / fan_in)
        weights.append(Tensor(rng.standard_normal((fan_in, w)) * scale, requires_grad=True))
        biases.append(Tensor(np.zeros(w), requires_grad=True))
        fan_in = w
    return LayerStack(weights, biases, config.activations)


def forward_stack(stack: LayerStack, x: Tensor) -> Tensor:
    """Apply the stack at every spatial location of a rank-3 map."""
    if x.values.ndim != 3:
        raise ShapeError(f"forward_stack needs a rank-3 map, got shape {x.shape}")
    h, w, c = x.shape
    if c != stack.in_width:
        raise ShapeError(f"stack expects {stack.in_width} channels, map has {c}")
    flat = T.reshape(x, (h * w, c))
    for wgt, bias, act in zip(stack.weights, stack.biases, stack.activations):
        flat = T.add_rowvec(T.matmul(flat, wgt), bias)
        if act == "relu":
            flat = T.relu(flat)
    return T.reshape(flat, (h, w, stack.out_width))


def patchify(image: np.ndarray, patch_grid) -> np.ndarray:
    """Cut an image into an h x w grid of flattened patches."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {image.shape}")
    gh, gw = patch_grid
    ih, iw = image.shape
    if gh <= 0 or gw <= 0 or ih % gh or iw % gw:
        raise ValueError(f"image {image.shape} not divisible by patch grid {(gh, gw)}")
    ph, pw = ih // gh, iw // gw
    patches = image.reshape(gh, ph, gw, pw).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(patches.reshape(gh, gw, ph * pw))


def extract_features(image: np.ndarray, extractor: LayerStack, patch_grid) -> Tensor:
    """Patchify an image and run the extractor stack pointwise."""
    return forward_stack(extractor, Tensor(patchify(image, patch_grid)))
