"""Group attention against a dense oracle and finite differences."""

import numpy as np

from segt.attention import (AttentionConfig, AttentionParams, embed_positions,
                            group_attention_backward, group_attention_forward)
from segt.reference import dense_attention
from segt.voxelizer import GridSpec

rng = np.random.default_rng(1)
grid = GridSpec.index_space((32, 32, 1))
c, heads = 16, 4
params = AttentionParams(**{k: rng.normal(scale=0.5, size=s) for k, s in AttentionParams.shapes(c).items()})
feats = rng.normal(size=(64, c))
coords = np.c_[rng.integers(0, 32, (64, 2)), np.zeros(64, int)]

# %% With one group covering every row, grouped attention is plain attention.
out, _ = group_attention_forward(feats, coords, grid, AttentionConfig(c, heads, 64), params)
x = feats + embed_positions(coords, grid, params)
ref = dense_attention(x, params.w_q, params.b_q, params.w_k, params.b_k,
                      params.w_v, params.b_v, params.w_o, params.b_o, heads)
print("max |grouped - dense| =", np.abs(out - ref).max())

# %% Smaller groups: tokens only see their own group.
cfg = AttentionConfig(c, heads, 16)
base, cache = group_attention_forward(feats, coords, grid, cfg, params)
poked = feats.copy()
poked[40] += 5.0
after, _ = group_attention_forward(poked, coords, grid, cfg, params)
changed = np.flatnonzero(np.abs(after - base).max(axis=1) > 0)
print("rows changed by poking row 40:", changed.min(), "..", changed.max())

# %% Analytic gradients against central differences on W_q.
upstream = rng.normal(size=base.shape)
_, grads = group_attention_backward(cache, upstream, params)
h = 1e-5
i, j = 3, 7
params.w_q[i, j] += h
up = (group_attention_forward(feats, coords, grid, cfg, params)[0] * upstream).sum()
params.w_q[i, j] -= 2 * h
down = (group_attention_forward(feats, coords, grid, cfg, params)[0] * upstream).sum()
params.w_q[i, j] += h
print("dL/dW_q[3,7] analytic", grads.w_q[i, j], "numeric", (up - down) / (2 * h))
