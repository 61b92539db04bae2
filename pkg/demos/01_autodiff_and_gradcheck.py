"""Tour of the tensor engine: tapes, backward passes, gradient checking.

Run:  python demos/01_autodiff_and_gradcheck.py
"""

import numpy as np

import diablo.tensor as T
from diablo.tensor import Tape, Tensor, gradcheck

# Tensors carry float64 buffers; requires_grad marks trainable leaves.
x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
w = Tensor(np.full(3, 0.5), requires_grad=True)

# Ops compute eagerly. Recording only happens under an active tape.
with Tape() as tape:
    y = T.ssum(T.mul(T.relu(T.mul(x, w)), x))  # sum(relu(x*w) * x)
print("forward value:", y.item())

# One backward replay per tape, reverse creation order.
tape.backward(y)
print("dy/dx:", x.grad)
print("dy/dw:", w.grad)

# The gradient checker compares the tape against central finite differences
# with relative error |a-b| / max(|a|, |b|, 1e-8).
report = gradcheck(lambda: T.ssum(T.mul(x, x)), [x])
print(f"\ngradcheck sum(x^2): passed={report.passed}, max rel err={report.max_rel_err:.2e}")

# Every op in the library carries the same guarantee; the registered suite
# (also available as `diablo gradcheck`) covers ops and full pipelines.
from diablo import checks

ok, rows = checks.run_suite(seed=0)
print(f"\nregistered suite: {len(rows)} checks, all passed: {ok}")
for name, rep in rows[:5]:
    print(f"  {name:<12} max rel err {rep.max_rel_err:.2e}")
print("  ...")

# A deliberately wrong gradient rule is caught immediately.
bad = checks.corrupted_gradient_check()
print(f"\nnegative control (corrupted rule) passes: {bad.passed}  "
      f"(max rel err {bad.max_rel_err:.2f})")
