"""A tour of the numpy autodiff core: build a graph, backprop, compare with finite differences."""

import numpy as np

from bttr.numerics import Tensor, gradcheck, ops

rng = np.random.default_rng(0)

# a two-layer perceptron on four points, float64 so the checks are tight
x = Tensor(rng.normal(size=(4, 3)))
w1 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
w2 = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
targets = np.array([0, 1, 1, 0])


def loss_fn(p):
    h = ops.relu(ops.linear(x, p["w1"]))
    return ops.mean(ops.cross_entropy(ops.linear(h, p["w2"]), targets))


loss = loss_fn({"w1": w1, "w2": w2})
loss.backward()
print("loss", loss.item())
print("dL/dw2 column norms", np.linalg.norm(w2.grad, axis=0))

# same gradients from central differences; relu kinks trigger a resample
report = gradcheck(loss_fn, {"w1": w1, "w2": w2})
print("max relative error", f"{report.max_error:.2e}", "passed" if report.passed else "FAILED")

# convolution runs channels-last; the NCHW wrapper is only a transpose away
img = Tensor(rng.random((1, 2, 7, 7)), requires_grad=True)
k = Tensor(rng.normal(size=(4, 2, 3, 3)), requires_grad=True)
out = ops.conv2d(img, k, stride=2, padding=1)
print("conv output", out.shape)
rep = gradcheck(lambda p: ops.sum(ops.mul(*[ops.conv2d(p["img"], p["k"], stride=2, padding=1)] * 2)), {"img": img, "k": k})
print("conv gradcheck", f"{rep.max_error:.2e}")
