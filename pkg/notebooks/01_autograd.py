"""
Reverse-mode gradients on numpy arrays
======================================

Build a small expression, backpropagate, and compare the tape against
central differences.
"""

# %%
import numpy as np

from cct import tensor as T
from cct.tensor import Tensor, float64_mode, grad_check

rng = np.random.default_rng(0)

# %% every op records its parents; backward() walks them in reverse
x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
loss = T.sum(T.gelu(T.matmul(x, w)))
loss.backward()
print("loss", float(loss.data))
print("dL/dw\n", w.grad)

# %% the gradient checker runs in float64 and reports the worst relative error
img = Tensor(rng.normal(size=(1, 6, 6, 2)))
kernel = Tensor(rng.normal(size=(3, 3, 2, 4)))


def pipeline(img, kernel):
    h = T.conv2d(img, kernel, stride=1, padding="same")
    h = T.maxpool2d(h, 3, 2, padding="same")
    return T.sum(T.softmax(h, axis=-1) * T.softmax(h, axis=-1))


report = grad_check(pipeline, [img, kernel])
print(f"conv -> pool -> softmax: max rel error {report.max_rel_error:.2e}, passed={report.passed}")

# %% a float64 context is handy when comparing against hand-computed values
with float64_mode():
    print(T.softmax(Tensor([1.0, 2.0, 3.0]), axis=-1).data)
