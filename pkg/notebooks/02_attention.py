"""
Attention and feed-forward blocks
=================================

Multi-head self-attention on a toy sequence, the attention map it
produces, and how dropout and stochastic depth behave in each mode.
"""

# %%
import numpy as np

from cct.model import CctConfig, attention_params, init_params
from cct.nn import DropState, dropout, multi_head_attention, stochastic_depth
from cct.tensor import Tensor

cfg = CctConfig(embed_dim=16, num_heads=4, ffn_hidden=32, num_encoder_layers=1)
params = init_params(cfg, seed=0)
x = Tensor(np.random.default_rng(1).normal(size=(2, 5, 16)).astype(np.float32))

# %% weights come back as (batch, heads, query, key); every row is a distribution
out, weights = multi_head_attention(x, attention_params(params, 0, 4), DropState.eval(), return_weights=True)
print("output", out.shape, "weights", weights.shape)
print("row sums", np.round(weights.sum(-1)[0, 0], 6))

# %% eval mode leaves activations alone
ev = DropState.eval()
assert np.array_equal(dropout(x, 0.1, ev).data, x.data)
assert np.array_equal(stochastic_depth(x, 0.1, ev).data, x.data)

# %% in train mode the survivors are rescaled so the expectation is unchanged
ones = Tensor(np.ones((10_000, 4), dtype=np.float32))
tr = DropState(seed=3, training=True)
print("dropout mean", dropout(ones, 0.3, tr).data.mean())
print("drop-path mean", stochastic_depth(ones, 0.3, tr).data.mean())
