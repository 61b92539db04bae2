"""Dictionary-based attention blocks over feature maps.

A learnable dictionary of directions softly assigns either whole local
features (feature-wise) or individual feature dimensions (dimension-wise)
to one of N branches. Assignment weights come from a softmax over scaled
cosine similarities, so the weights across branches sum to one at every
position and the branches jointly conserve the map they mask. Two
strategies order the masking against the refinement transform: the
post-attention pipeline refines first and masks after, the pre-attention
pipeline masks first and refines each branch with one shared transform.
Each branch is average-pooled, linearly embedded to E/N dimensions and
L2-normalized; the final embedding concatenates the N branches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import LayerStack, LayerStackConfig, forward_stack, init_stack
from .errors import ConfigError, ShapeError
from .tensor import Tensor

FEATURE_WISE = "feature-wise"
DIMENSION_WISE = "dimension-wise"
PRE_ATTENTION = "pre-attention"
POST_ATTENTION = "post-attention"

MODES = (FEATURE_WISE, DIMENSION_WISE)
STRATEGIES = (PRE_ATTENTION, POST_ATTENTION)


@dataclass
class Dictionary:
    """Learnable attention codebook plus assignment hardness.

    Feature-wise entries have shape (N, m): one direction per branch.
    Dimension-wise entries have shape (N, c, m): one direction per branch
    and per masked channel.
    """

    mode: str
    entries: Tensor
    hardness: float

    @property
    def n_branches(self) -> int:
        return self.entries.shape[0]

    @property
    def direction_width(self) -> int:
        return self.entries.shape[-1]

    @property
    def channels(self):
        return self.entries.shape[1] if self.mode == DIMENSION_WISE else None


@dataclass
class AttentionTensor:
    """Assignment weights of shape (N, h, w, c), normalized over branches."""

    weights: Tensor
    mode: str

    @property
    def n_branches(self) -> int:
        return self.weights.shape[0]


def init_dictionary(mode: str, n_branches: int, direction_width: int,
                    channels: int = None, seed: int = 0, hardness: float = 5.0) -> Dictionary:
    """Unit-normal directions, L2-normalized once at initialization."""
    if mode not in MODES:
        raise ConfigError(f"unknown selection mode {mode!r}")
    if n_branches < 1:
        raise ValueError("dictionary needs at least one entry")
    if hardness <= 0:
        raise ValueError("hardness must be positive")
    rng = np.random.default_rng(seed)
    if mode == FEATURE_WISE:
        raw = rng.standard_normal((n_branches, direction_width))
    else:
        if channels is None or channels < 1:
            raise ValueError("dimension-wise dictionaries need a positive channel count")
        raw = rng.standard_normal((n_branches, channels, direction_width))
    raw = raw / np.linalg.norm(raw, axis=-1, keepdims=True)
    return Dictionary(mode, Tensor(raw, requires_grad=True), float(hardness))


def _normalized_rows(phi_map: Tensor, direction_width: int):
    h, w, m = phi_map.shape
    if m != direction_width:
        raise ShapeError(f"map has {m} channels, dictionary directions have {direction_width}")
    flat = T.reshape(phi_map, (h * w, m))
    return T.l2_normalize(flat, axis=1), h, w


def select_feature_wise(phi_map: Tensor, dictionary: Dictionary, channels: int) -> AttentionTensor:
    """Soft-assign each spatial feature to a branch, broadcast over channels.

    The weight at (n, i, j) is softmax over n of hardness * cosine between
    the transformed feature at (i, j) and entry n; it is repeated across
    the `channels` axis of the map it will mask.
    """
    if dictionary.mode != FEATURE_WISE:
        raise ConfigError("select_feature_wise needs a feature-wise dictionary")
    rows, h, w = _normalized_rows(phi_map, dictionary.direction_width)
    entries = T.l2_normalize(dictionary.entries, axis=1)
    cos = T.matmul(rows, T.permute(entries, (1, 0)))  # (h*w, N)
    soft = T.softmax_over_axis(cos, axis=1, scale=dictionary.hardness)
    per_branch = T.reshape(T.permute(soft, (1, 0)), (dictionary.n_branches, h, w))
    return AttentionTensor(T.expand_last(per_branch, channels), FEATURE_WISE)


def select_dimension_wise(phi_map: Tensor, dictionary: Dictionary) -> AttentionTensor:
    """Soft-assign every channel of every spatial feature independently."""
    if dictionary.mode != DIMENSION_WISE:
        raise ConfigError("select_dimension_wise needs a dimension-wise dictionary")
    n, c, m = dictionary.entries.shape
    rows, h, w = _normalized_rows(phi_map, m)
    entries = T.l2_normalize(T.reshape(dictionary.entries, (n * c, m)), axis=1)
    cos = T.reshape(T.matmul(rows, T.permute(entries, (1, 0))), (h * w, n, c))
    soft = T.softmax_over_axis(cos, axis=1, scale=dictionary.hardness)
    return AttentionTensor(T.reshape(T.permute(soft, (1, 0, 2)), (n, h, w, c)), DIMENSION_WISE)


def select(phi_map: Tensor, dictionary: Dictionary, channels: int) -> AttentionTensor:
    if dictionary.mode == FEATURE_WISE:
        return select_feature_wise(phi_map, dictionary, channels)
    return select_dimension_wise(phi_map, dictionary)


def hard_assign(phi_map: Tensor, dictionary: Dictionary, channels: int = None) -> AttentionTensor:
    """One-hot argmax assignment (not differentiable; ties go to the lowest index)."""
    h, w, m = phi_map.shape
    if m != dictionary.direction_width:
        raise ShapeError(f"map has {m} channels, dictionary directions have {dictionary.direction_width}")
    rows = phi_map.values.reshape(h * w, m)
    rows = rows / np.maximum(np.linalg.norm(rows, axis=1, keepdims=True), 1e-12)
    n = dictionary.n_branches
    if dictionary.mode == FEATURE_WISE:
        if channels is None:
            raise ValueError("feature-wise hard assignment needs a channel count")
        entries = dictionary.entries.values
        entries = entries / np.maximum(np.linalg.norm(entries, axis=1, keepdims=True), 1e-12)
        cos = rows @ entries.T  # (h*w, N)
        best = cos.argmax(axis=1)
        onehot = np.zeros((h * w, n))
        onehot[np.arange(h * w), best] = 1.0
        weights = np.repeat(onehot.T.reshape(n, h, w)[..., None], channels, axis=-1)
    else:
        c = dictionary.channels
        entries = dictionary.entries.values.reshape(n * c, m)
        entries = entries / np.maximum(np.linalg.norm(entries, axis=1, keepdims=True), 1e-12)
        cos = (rows @ entries.T).reshape(h * w, n, c)
        best = cos.argmax(axis=1)  # (h*w, c)
        onehot = np.zeros((h * w, n, c))
        ij, k = np.meshgrid(np.arange(h * w), np.arange(c), indexing="ij")
        onehot[ij, best, k] = 1.0
        weights = np.ascontiguousarray(onehot.transpose(1, 0, 2).reshape(n, h, w, c))
    return AttentionTensor(Tensor(weights), dictionary.mode)


def merge(feature_map: Tensor, attention: AttentionTensor) -> list:
    """Mask the map with each branch's weights: per-branch Hadamard products."""
    n = attention.n_branches
    if attention.weights.shape != (n,) + feature_map.shape:
        raise ShapeError(
            f"attention {attention.weights.shape} does not match map {feature_map.shape}")
    return [T.mul(feature_map, T.slice_axis(attention.weights, 0, i)) for i in range(n)]


# ---------------------------------------------------------------------------
# embedding heads and full pipelines


@dataclass
class BranchHead:
    """Linear embedding layer applied after pooling, shared by all branches."""

    weight: Tensor  # (channels, branch_dim)
    bias: Tensor  # (branch_dim,)


def init_branch_head(channels: int, branch_dim: int, seed: int = 0) -> BranchHead:
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((channels, branch_dim)) / np.sqrt(channels)
    return BranchHead(Tensor(w, requires_grad=True), Tensor(np.zeros(branch_dim), requires_grad=True))


def branch_head(branch_map: Tensor, head: BranchHead) -> Tensor:
    """Pool a branch map, embed it, and L2-normalize the result."""
    pooled = T.spatial_mean_pool(branch_map)
    c = pooled.shape[0]
    if c != head.weight.shape[0]:
        raise ShapeError(f"head expects {head.weight.shape[0]} channels, got {c}")
    z = T.add_rowvec(T.matmul(T.reshape(pooled, (1, c)), head.weight), head.bias)
    return T.l2_normalize(T.reshape(z, (head.weight.shape[1],)), axis=0)


@dataclass(frozen=True)
class DiabloConfig:
    """Shape and hyper-parameters of one attention-block model."""

    strategy: str
    mode: str
    branches: int
    embedding_size: int
    hardness: float
    phi: LayerStackConfig
    psi: LayerStackConfig

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown selection mode {self.mode!r}")
        if self.branches < 1:
            raise ConfigError("branch count must be at least 1")
        if self.embedding_size % self.branches:
            raise ConfigError(
                f"branch count {self.branches} must divide embedding size {self.embedding_size}")
        if self.hardness <= 0:
            raise ConfigError("hardness must be positive")
        if self.phi.in_width != self.psi.in_width:
            raise ConfigError("phi and psi must consume the same feature channels")

    @property
    def feature_channels(self) -> int:
        return self.phi.in_width

    @property
    def direction_width(self) -> int:
        return self.phi.out_width

    @property
    def merge_channels(self) -> int:
        # pre-attention masks the raw map, post-attention masks the refined one
        if self.strategy == PRE_ATTENTION:
            return self.feature_channels
        return self.psi.out_width

    @property
    def branch_dim(self) -> int:
        return self.embedding_size // self.branches


def make_config(strategy: str, mode: str, branches: int, embedding_size: int,
                feature_channels: int, direction_width: int = None,
                hardness: float = 5.0, seed: int = 0) -> DiabloConfig:
    """Depth-2 phi/psi stacks with hidden width equal to the channel count."""
    c = feature_channels
    m = direction_width if direction_width is not None else c
    return DiabloConfig(
        strategy=strategy,
        mode=mode,
        branches=branches,
        embedding_size=embedding_size,
        hardness=hardness,
        phi=LayerStackConfig(c, (c, m), seed=seed),
        psi=LayerStackConfig(c, (c, c), seed=seed + 1),
    )


@dataclass
class DiabloParams:
    """All trainable state of one attention-block model.

    psi and the branch head are shared across the N branches, so permuting
    dictionary entries permutes the branch embeddings and nothing else.
    """

    phi: LayerStack
    psi: LayerStack
    dictionary: Dictionary
    head: BranchHead

    def parameters(self):
        out = self.phi.parameters("phi") + self.psi.parameters("psi")
        out.append(("dictionary.entries", self.dictionary.entries))
        out.append(("head.weight", self.head.weight))
        out.append(("head.bias", self.head.bias))
        return out


def init_params(config: DiabloConfig, seed: int = 0) -> DiabloParams:
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 31 - 1, size=4)
    phi = init_stack(LayerStackConfig(config.phi.in_width, config.phi.widths,
                                      config.phi.activations, seed=int(seeds[0])))
    psi = init_stack(LayerStackConfig(config.psi.in_width, config.psi.widths,
                                      config.psi.activations, seed=int(seeds[1])))
    channels = config.merge_channels if config.mode == DIMENSION_WISE else None
    dictionary = init_dictionary(config.mode, config.branches, config.direction_width,
                                 channels=channels, seed=int(seeds[2]), hardness=config.hardness)
    head = init_branch_head(config.psi.out_width, config.branch_dim, seed=int(seeds[3]))
    return DiabloParams(phi, psi, dictionary, head)


def post_attention_forward(feature_map: Tensor, config: DiabloConfig,
                           params: DiabloParams) -> Tensor:
    """Refine the map, then mask the refined map with the attention weights."""
    if config.strategy != POST_ATTENTION:
        raise ConfigError("config is not a post-attention config")
    attn = select(forward_stack(params.phi, feature_map), params.dictionary,
                  config.merge_channels)
    refined = forward_stack(params.psi, feature_map)
    branches = [branch_head(m, params.head) for m in merge(refined, attn)]
    return T.concat(branches)


def pre_attention_forward(feature_map: Tensor, config: DiabloConfig,
                          params: DiabloParams) -> Tensor:
    """Mask the raw map, then refine each branch with the shared transform."""
    if config.strategy != PRE_ATTENTION:
        raise ConfigError("config is not a pre-attention config")
    attn = select(forward_stack(params.phi, feature_map), params.dictionary,
                  config.merge_channels)
    masked = merge(feature_map, attn)
    branches = [branch_head(forward_stack(params.psi, m), params.head) for m in masked]
    return T.concat(branches)


def diablo_forward(feature_map: Tensor, config: DiabloConfig, params: DiabloParams) -> Tensor:
    if config.strategy == PRE_ATTENTION:
        return pre_attention_forward(feature_map, config, params)
    return post_attention_forward(feature_map, config, params)


def baseline_forward(feature_map: Tensor, params: DiabloParams) -> Tensor:
    """Attention-free reference: refine, pool, embed, normalize."""
    return branch_head(forward_stack(params.psi, feature_map), params.head)
