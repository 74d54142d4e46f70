"""A walk through the tensor library: building graphs, backprop, and how
the finite-difference checker keeps the analytic gradients honest.

Run from the repo root:  python3 demos/01_autodiff.py
"""

import numpy as np

from mrfnln import tensor as T
from mrfnln.gradcheck import max_rel_error
from mrfnln.tensor import Tensor, no_grad

print("== a tiny graph ==")
# Tensors wrap numpy arrays; requires_grad opts a leaf into the tape.
x = Tensor(np.array([[1.0, -2.0], [3.0, 0.5]]), requires_grad=True)
w = Tensor(np.array([[0.1, 0.2], [0.3, 0.4]]), requires_grad=True)

y = T.relu(T.matmul(x, w))     # ops compose define-by-run
loss = T.mean_abs_diff(y, Tensor(np.zeros(y.shape)))
print(f"loss = {loss.item():.6f}")

loss.backward()
print("dloss/dx =\n", x.grad)
print("dloss/dw =\n", w.grad)

print("\n== checking against central differences ==")
# The checker perturbs each entry of each tensor and compares the numeric
# slope with the analytic gradient.  It is the reference every op and
# block in this package is tested against.
x64 = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True,
             dtype=np.float64)
w64 = Tensor(np.random.default_rng(1).normal(size=(4, 2)), requires_grad=True,
             dtype=np.float64)


def rebuild():
    h = T.sigmoid(T.matmul(x64, w64))
    return T.tsum(T.mul(h, h))


errs = max_rel_error(rebuild, {"x": x64, "w": w64})
for name, err in errs.items():
    print(f"max rel err d/d{name}: {err:.3e}")
assert all(e < 1e-6 for e in errs.values())

print("\n== tape hygiene ==")
# Backward releases the tape; a second call is an explicit error rather
# than a silent wrong answer.
try:
    loss.backward()
except Exception as exc:
    print(f"second backward -> {type(exc).__name__}: {exc}")

# no_grad() suspends taping for evaluation-only code.
with no_grad():
    frozen = T.relu(T.matmul(x, w))
print(f"inside no_grad, result has grad_fn: {frozen._grad_fn is not None}")

print("\n== conv gradients, the hard case ==")
# Strided and dilated convolutions route gradients through im2col
# scatter logic; this is where hand-derived backward passes usually break.
img = Tensor(np.random.default_rng(2).normal(size=(1, 2, 6, 6)),
             requires_grad=True, dtype=np.float64)
kern = Tensor(np.random.default_rng(3).normal(size=(3, 2, 3, 3)) * 0.2,
              requires_grad=True, dtype=np.float64)


def conv_loss():
    out = T.conv2d(img, kern, None, stride=2, padding=1, dilation=1)
    return T.tsum(T.mul(out, out))


errs = max_rel_error(conv_loss, {"img": img, "kern": kern})
print({k: f"{v:.2e}" for k, v in errs.items()})
assert all(e < 1e-6 for e in errs.values())
print("strided conv gradients agree with finite differences")
