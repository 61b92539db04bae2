"""Dictionary-based attention blocks for deep metric learning.

A small numpy library built around four pieces:

- :mod:`diablo.tensor` -- dense tensors with reverse-mode autodiff and a
  finite-difference gradient checker;
- :mod:`diablo.attention` -- the dictionary, feature-wise and
  dimension-wise selection, pre/post-attention pipelines, branch heads;
- :mod:`diablo.training` / :mod:`diablo.evaluation` -- metric-learning
  losses, batch sampling, Adam, Recall@K;
- :mod:`diablo.harness` / :mod:`diablo.cli` -- reproducible training runs,
  ablation sweeps, checkpoints, and the `diablo` command.
"""

from .attention import (
    AttentionTensor,
    BranchHead,
    DiabloConfig,
    DiabloParams,
    Dictionary,
    baseline_forward,
    branch_head,
    diablo_forward,
    hard_assign,
    init_dictionary,
    init_params,
    make_config,
    merge,
    post_attention_forward,
    pre_attention_forward,
    select,
    select_dimension_wise,
    select_feature_wise,
)
from .backbone import (
    LayerStack,
    LayerStackConfig,
    extract_features,
    forward_stack,
    init_stack,
    patchify,
)
from .data import Dataset, Sample, SyntheticSpec, generate_synthetic, load_idx, save_idx
from .errors import ConfigError, DiabloError, FormatError, ShapeError
from .evaluation import EmbeddingIndex, SplitPlan, make_splits, pairwise_distances, recall_at_k
from .tensor import GradcheckReport, Tape, Tensor, gradcheck
from .training import (
    AdamState,
    Batch,
    LossConfig,
    adam_step,
    binomial_deviance_loss,
    contrastive_loss,
    sample_batch,
    triplet_loss,
)

__version__ = "0.1.0"
