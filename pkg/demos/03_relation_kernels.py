"""Relation kernels and the learned correlation matrix: counting, item, and
user kernels, their softmax mixture, and the normalization/jitter pipeline
that makes the result a usable correlation matrix.

Run: python3 demos/03_relation_kernels.py
"""

import numpy as np

from skewrec import corpus, kernels

rng = np.random.default_rng(1)

# Counting kernel from explicit statistics: P_12 = 2, P_1 = 4, P_2 = 2.
split = corpus.SplitDataset(
    train=[[1, 2, 3], [1, 2], [1, 3], [1, 4]], valid_target=[2, 3, 2, 2],
    test_target=[3, 4, 4, 3], user_ids=[0, 1, 2, 3], n_items=4, max_len=10,
    item_ids=[1, 2, 3, 4])
cooc = corpus.build_cooc(split)
print("counting kernel k_c(i,j) = w_i w_j P_ij^2 / (P_i P_j):")
print(f"  P_1={cooc.item_count[1]}, P_2={cooc.item_count[2]}, "
      f"P_12={cooc.pair(1, 2)}  ->  k_c(1,2) = {kernels.counting_kernel(1, 2, cooc):.4f}")
print(f"  self-pair k_c(1,1) with w=2: {kernels.counting_kernel(1, 1, cooc, 2, 2):.1f}")

# Item kernel on unit-normalized representations.
x = rng.normal(size=(4, 6))
xhat = x / np.linalg.norm(x, axis=1, keepdims=True)
print("\nitem kernel on normalized vectors:")
print(f"  linear(x0, x1) = {kernels.item_kernel(xhat[0], xhat[1]):+.4f} (cosine)")
print(f"  rbf(x0, x1)    = {kernels.item_kernel(xhat[0], xhat[1], variant='rbf'):.4f}")

# User kernel: the user embedding modulates which coordinates matter.
u = rng.normal(size=6)
w_mod = rng.normal(size=(6, 6))
print(f"  user(x0, x1)   = {kernels.user_kernel(xhat[0], xhat[1], u, w_mod):+.4f}")

# Learned mixture weights: a per-user softmax over the active kernels.
w_mix, b_mix = rng.normal(size=(6, 3)), np.zeros(3)
r = kernels.mixture(u, w_mix, b_mix)
print(f"\nmixture weights (counting, item, user): {np.round(r, 3)}, sum {r.sum():.3f}")

# Full correlation construction for one window.
items = [1, 2, 3, 4]
weights = kernels.KernelWeights(
    w_omega_q=rng.normal(size=(6, 6)), w_omega_k=rng.normal(size=(6, 6)),
    w_user_mod=w_mod, w_mix=w_mix, b_mix=b_mix)
omega = kernels.variance_omega(x, q=3, w_omega_q=weights.w_omega_q,
                               w_omega_k=weights.w_omega_k)
out = kernels.correlation_matrix(x, cooc.counting_base(items), u, omega, weights)
print("\ncorrelation matrix psi (unit diagonal, clamped, jittered):")
print(np.round(out.psi, 3))
print("eigenvalues:", np.round(np.linalg.eigvalsh(out.psi), 5))
print("Cholesky factorizes:", np.linalg.cholesky(out.psi) is not None)
print("per-key scales omega (softplus, always positive):", np.round(out.omega, 3))
