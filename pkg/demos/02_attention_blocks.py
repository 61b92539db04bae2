"""The dictionary attention block, step by step.

Shows both selection modes, the softmax partition of unity, map
conservation under merging, the hard-assignment limit, and the two
pipeline strategies.

Run:  python demos/02_attention_blocks.py
"""

import numpy as np

from diablo import attention
from diablo.attention import (
    DIMENSION_WISE,
    FEATURE_WISE,
    POST_ATTENTION,
    PRE_ATTENTION,
    hard_assign,
    init_dictionary,
    init_params,
    make_config,
    merge,
    select,
)
from diablo.tensor import Tensor

rng = np.random.default_rng(0)
h, w, c, m, n = 4, 4, 8, 8, 4

# A feature map F and its transform phi(F); here we use a random stand-in
# for phi(F) to focus on the selection math.
feature_map = Tensor(rng.standard_normal((h, w, c)))
phi_map = Tensor(rng.standard_normal((h, w, m)))

# Feature-wise: one direction per branch; the weight at a location is
# shared by all channels.
d_feat = init_dictionary(FEATURE_WISE, n, m, seed=1, hardness=5.0)
a_feat = select(phi_map, d_feat, channels=c)
print("feature-wise attention:", a_feat.weights.shape)
print("  sums over branches -> 1:",
      np.abs(a_feat.weights.values.sum(axis=0) - 1.0).max())
print("  constant across channels:",
      (a_feat.weights.values.max(axis=3) - a_feat.weights.values.min(axis=3)).max())

# Dimension-wise: one direction per branch AND channel; every channel of
# every location is assigned independently.
d_dim = init_dictionary(DIMENSION_WISE, n, m, channels=c, seed=2, hardness=5.0)
a_dim = select(phi_map, d_dim, channels=c)
print("dimension-wise attention:", a_dim.weights.shape)
print("  sums over branches -> 1:",
      np.abs(a_dim.weights.values.sum(axis=0) - 1.0).max())

# Because the weights sum to one, the branch maps conserve the map they mask.
branches = merge(feature_map, a_dim)
total = sum(b.values for b in branches)
print("conservation |sum_n H_n - F|:", np.abs(total - feature_map.values).max())

# Cranking the hardness turns the softmax into the argmax one-hot.
d_hard = init_dictionary(FEATURE_WISE, n, m, seed=1, hardness=100.0)
soft = select(phi_map, d_hard, channels=c).weights.values
hard = hard_assign(phi_map, d_hard, channels=c).weights.values
print("hardness 100 vs one-hot, median deviation:", np.median(np.abs(soft - hard)))

# Full pipelines: mask-then-refine (pre) or refine-then-mask (post). Both
# produce a concatenation of N unit-norm branch embeddings.
for strategy in (PRE_ATTENTION, POST_ATTENTION):
    cfg = make_config(strategy, DIMENSION_WISE, branches=4, embedding_size=32,
                      feature_channels=c, seed=3)
    params = init_params(cfg, seed=4)
    emb = attention.diablo_forward(feature_map, cfg, params)
    norms = np.linalg.norm(emb.values.reshape(4, 8), axis=1)
    print(f"{strategy}: embedding {emb.shape}, branch norms {norms.round(6)}, "
          f"total norm {np.linalg.norm(emb.values):.6f} (= sqrt(4))")
