"""
The compact convolutional transformer
=====================================

Parameter layout of the default model and a forward pass through each stage.
"""

# %%
import numpy as np

from cct.model import CctConfig, encode, forward, init_params, param_count, param_shapes, sequence_pool, tokenize
from cct.nn import DropState
from cct.tensor import Tensor, no_grad

cfg = CctConfig()
print("tokens per image:", cfg.num_tokens, "on a", cfg.token_grid, "grid")
print("trainable parameters:", f"{param_count(cfg):,}")

# %% the first few tensors of the layout
for name, shape in list(param_shapes(cfg).items())[:8]:
    print(f"  {name:28s} {shape}")

# %% stage by stage
params = init_params(cfg, seed=0)
images = Tensor(np.random.default_rng(0).random((4, 28, 28, 3), dtype=np.float32))
with no_grad():
    tokens = tokenize(images, params, cfg)
    encoded = encode(tokens, params, cfg, DropState.eval())
    pooled, pool_weights = sequence_pool(encoded, params, return_weights=True)
    logits = forward(images, params, cfg)
print("tokens", tokens.shape, "encoded", encoded.shape, "pooled", pooled.shape, "logits", logits.shape)
print("pooling weights sum to", pool_weights.sum(axis=1))
