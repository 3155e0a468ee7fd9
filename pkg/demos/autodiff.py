"""The small reverse-mode autodiff engine the model is trained with.

Run: python3 demos/autodiff.py
"""

import numpy as np

from msvad import numcore as nc

rng = np.random.default_rng(0)
w0 = rng.standard_normal((3, 2))
x = rng.standard_normal((5, 3))

tape = nc.Tape()
w = tape.watch("w", w0)
def objective(v):
    s = nc.sigmoid(nc.matmul(x, v))
    return (s * s).mean()


loss = objective(w)
grads = tape.backward(loss)
print("loss", float(loss.value))
print("dloss/dw\n", grads["w"])

# central differences agree
h = 1e-6
num = np.zeros_like(w0)
for i in np.ndindex(w0.shape):
    up, down = w0.copy(), w0.copy()
    up[i] += h
    down[i] -= h
    num[i] = (float(objective(up).value) - float(objective(down).value)) / (2 * h)
print("max |analytic - numeric|", np.abs(num - grads["w"]).max())

# a tape is single use
try:
    tape.backward(loss)
except nc.TapeError as exc:
    print("second backward:", exc)
