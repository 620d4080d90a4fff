"""Tour of the tape-based autodiff engine.

Forward ops record onto a tape; backward replays it in reverse and fills
parameter gradients. Every gradient can be cross-checked against central
finite differences with grad_check.
"""

import numpy as np

from gridtwin import Parameter, Tape, grad_check, sgd_step
from gridtwin import autodiff as ad

# --- a tiny computation, by hand ---------------------------------------
w = Parameter("w", np.array([[0.5, -0.2], [0.1, 0.4]]))
tape = Tape()
x = tape.constant(np.array([[1.0, 2.0], [3.0, 4.0]]))
h = ad.relu(ad.matmul(x, tape.watch(w)))
loss = ad.mean_all(ad.square(h))
print("loss:", float(loss.value))
tape.backward(loss)
print("dloss/dw:\n", w.grad)

# --- gradient checking every op family ----------------------------------
rng = np.random.default_rng(0)
weights = rng.normal(size=(3, 4))  # fixed outside the closure: grad_check re-calls f
cases = {
    "softmax-weighted sum": lambda t: ad.mean_all(
        ad.mul(ad.row_softmax(t), t.tape.constant(weights))),
    "sigmoid mean": lambda t: ad.mean_all(ad.sigmoid(t)),
    "concat+slice": lambda t: ad.mean_all(ad.slice_lastdim(ad.concat_lastdim(t, t), 2, 6)),
}
for name, f in cases.items():
    err = grad_check(f, rng.normal(size=(3, 4)))
    print(f"grad_check {name:22s} max rel err {err:.2e}")

# --- SGD on a quadratic: geometric decay --------------------------------
p = Parameter("x", np.array(1.0))
trace = []
for step in range(10):
    tape = Tape()
    loss = ad.mean_all(ad.square(tape.watch(p)))
    tape.backward(loss)
    sgd_step([p], lr=0.1)
    trace.append(float(p.value))
print("\nSGD on x^2 from 1.0 (lr=0.1):", " ".join(f"{v:.3f}" for v in trace))
print("each step contracts by exactly 1 - 2*lr = 0.8")
