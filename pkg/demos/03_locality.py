"""
Self-aware attention and text-guided spatial selection
======================================================

Shows why attention built from the values alone favours each token's own
position, and runs the spatial selection branch with random weights.
"""

import numpy as np

from kcot import TssWeights, lla_layer, saa_attention, tss_mask

np.set_printoptions(precision=3, suppress=True)
rng = np.random.default_rng(1)

# Equal-norm tokens: <v_i, v_i> beats every <v_i, v_j> by Cauchy-Schwarz,
# so each attention row peaks on the diagonal.
V = rng.normal(size=(6, 8))
V /= np.linalg.norm(V, axis=1, keepdims=True)
A = saa_attention(V, scale=0.2)
print("attention from V V^T:\n", A)
print("row argmax == own index:", np.all(A.argmax(axis=1) == np.arange(6)))

# Query-key attention with random projections has no such preference.
Wq, Wk = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
logits = (V @ Wq) @ (V @ Wk).T / 0.2
qk = np.exp(logits - logits.max(axis=1, keepdims=True))
qk /= qk.sum(axis=1, keepdims=True)
print("with projections, rows peaking on the diagonal:",
      int((qk.argmax(axis=1) == np.arange(6)).sum()), "of 6")

# Spatial selection on a 4x4 grid of 8-dim tokens and three labels.
X = rng.normal(size=(16, 8))
T = rng.normal(size=(3, 8))
w = TssWeights.random(8, seed=2)
print("\nspatial mask on the 4x4 grid:\n", tss_mask(X, T, w).reshape(4, 4))

# A few adapter layers stacked as residual updates.
out = X
for layer in range(3):
    out = lla_layer(out, X, T, TssWeights.random(8, seed=layer))
    print(f"after layer {layer + 1}: mean token norm {np.linalg.norm(out, axis=1).mean():.3f}")
