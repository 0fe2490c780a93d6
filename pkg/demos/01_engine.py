"""A tour of the numerical engine underneath the forecaster.

Run with ``python3 demos/01_engine.py``. Everything here is plain numpy plus
the package's own reverse-mode tape; nothing is trained.
"""

import numpy as np

from vdtraj.numerics import (
    Adam, Tape, Tensor, backward, check_gradients, dilated_conv2d, lstm_step, square, tsum,
)

rng = np.random.default_rng(0)

# 1. Reverse mode on a small LSTM cell. The tape records the forward pass and
#    `backward` walks it in reverse; central differences confirm every entry.
x = Tensor(rng.normal(size=4), requires_grad=True)
h = Tensor(rng.normal(size=3), requires_grad=True)
c = Tensor(rng.normal(size=3), requires_grad=True)
w = Tensor(rng.normal(scale=0.5, size=(7, 12)), requires_grad=True)
b = Tensor(rng.normal(scale=0.5, size=12), requires_grad=True)

with Tape() as tape:
    out = tsum(lstm_step(x, h, c, w, b)[0])
grads = backward(tape, out, leaves=[w])
print(f"sum of h' = {float(out.data):+.4f}; |dL/dW| = {np.linalg.norm(grads[w]):.4f}")
err = check_gradients(lambda: tsum(lstm_step(x, h, c, w, b)[0]), [x, h, c, w, b])
print(f"worst relative error against finite differences: {err:.2e}")

# 2. Dilated convolution. A dilation-2 kernel skips one cell between taps, so a
#    single hot cell lights up a sparse 3x3 lattice of outputs two cells apart.
grid = np.zeros((9, 5, 1))
grid[4, 2, 0] = 1.0
ones = np.ones((3, 3, 1, 1))
for d in (1, 2):
    lit = dilated_conv2d(Tensor(grid), Tensor(ones), dilation=d).data[..., 0]
    print(f"\ndilation {d}: outputs touched by the centre cell")
    for row in lit.astype(int):
        print("  " + " ".join("#" if v else "." for v in row))

# 3. Stacking the three pooling layers (dilations 1, 2, 2) widens the reach to
#    five cells, enough for the centre row to see the whole nine-row grid.
print(f"\nstacked reach: {1 + 2 + 2} cells either side of the centre")

# 4. Adam on a quadratic bowl: the same optimizer drives model training.
p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
opt = Adam({"p": p}, lr=0.1)
for step in range(200):
    with Tape() as tape:
        loss = tsum(square(p - Tensor(np.array([1.0, 1.0]))))
    opt.step({"p": backward(tape, loss, leaves=[p])[p]})
print(f"Adam after 200 steps: p = {np.round(p.data, 4)} (target [1, 1])")
