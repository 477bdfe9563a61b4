"""Magnitude-aware linear attention on a two-key toy problem.

Run: python3 demos/01_mala_attention.py

We pick raw queries and keys so that the kernel features are phi(Q) = [2]
and phi(K) = [1, 3], then look at the explicit score row, the linear-time
output and how the row sharpens as the query grows.
"""

import math

import numpy as np

from imse.mala import attention_gap, mala_context, mala_linear, mala_quadratic, mala_scalars, phi

q = np.array([[1.0]])                     # phi(1) = 2
k = np.array([[0.0], [2.0]])              # phi(0) = 1, phi(2) = 3
v = np.array([[1.0], [-1.0]])

sc = mala_scalars(phi(q), phi(k).sum(axis=0), n=2)
print(f"s = {sc.s[0]:g}, beta = 1 + 1/s = {sc.beta[0]:g}, gamma = s/N = {sc.gamma[0]:g}")

y, a = mala_quadratic(q, k, v)
print("score row A =", a[0], "(sums to", a.sum(), ")")
print("the first weight is negative: the offset gamma is not clamped")

ctx = mala_context(k, v)
print(f"context: kv = {ctx.kv.ravel()}, vsum = {ctx.vsum}")
print(f"explicit output {y[0, 0]:g} vs linear output {mala_linear(q, k, v)[0, 0]:g}")

print("\nScaling the post-kernel query by t widens the spread of the row:")
for t in (0.5, 1, 2, 4):
    print(f"  t = {t:<3}  max - min = {attention_gap(q, k, v, 0, t):.4f}")

print("\nOn a longer random sequence both paths agree while the linear one never forms N x N:")
rng = np.random.default_rng(0)
q, k, v = (rng.standard_normal((512, 8)) for _ in range(3))
dev = np.abs(mala_linear(q, k, v) - mala_quadratic(q, k, v)[0]).max()
print(f"  N = 512: max |linear - explicit| = {dev:.2e}")
print(f"  (the explicit path would hold {512 * 512:,} scores; the linear one holds {8 * 8 + 8 + 8} context numbers)")
assert math.isclose(y[0, 0], -4.5)
