"""Relation kernels, their learned mixture, per-row scale inference, and the
normalized correlation matrix used by the stochastic attention logits.

Three kernels measure item relatedness: a counting kernel driven by global
pair co-occurrence, an item kernel on the (L2-normalized) timestep
representations, and a user kernel on the same representations modulated
elementwise by a transformed user embedding. Each carries an omega_i*omega_j
scale factor; the correlation matrix divides it back out, so the normalized
Gram helpers below already work on the cancelled form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CoocStats
from .errors import NumericalError
from .nnops import l2_normalize, softplus

KERNEL_ORDER = ("C", "I", "U")


@dataclass
class KernelWeights:
    """Learned kernel parameters for one attention head."""
    w_omega_q: np.ndarray  # [d, w] scale head, query side
    w_omega_k: np.ndarray  # [d, w] scale head, key side
    w_user_mod: np.ndarray  # [d, d] user-kernel modulation
    w_mix: np.ndarray      # [d, 3] mixture head
    b_mix: np.ndarray      # [3]


@dataclass
class CorrelationOutput:
    omega: np.ndarray      # [n] positive row scales
    psi: np.ndarray        # [n, n] final correlation, unit diagonal, Cholesky-safe
    gram: np.ndarray       # [n, n] mixed kernel matrix including omega factors
    mixture_r: np.ndarray  # weights over the active kernels, summing to 1


def variance_omega(x, q, w_omega_q, w_omega_k):
    """Per-key scale for query row q: softplus of the scaled bilinear score.

    The score divides by the square root of the projected width, so with
    full-width [d, d] weights this is the 1/sqrt(d) scaling and with per-head
    [d, d/H] weights the per-head variant.
    """
    width = w_omega_q.shape[1]
    logits = (x[q] @ w_omega_q) @ (x @ w_omega_k).T / np.sqrt(width)
    return softplus(logits)


def counting_kernel(i, j, cooc: CoocStats, omega_i=1.0, omega_j=1.0):
    """omega_i * omega_j * P_ij^2 / (P_i P_j); 1 * scales on self-pairs."""
    if i == j:
        return omega_i * omega_j
    pi = cooc.item_count[i]
    pj = cooc.item_count[j]
    if pi == 0 or pj == 0:
        return 0.0
    pij = cooc.pair(i, j)
    return omega_i * omega_j * (pij * pij) / (pi * pj)


def item_kernel(x_i, x_j, omega_i=1.0, omega_j=1.0, variant="linear"):
    """Similarity of two unit-norm representations, scaled by omega_i*omega_j."""
    if variant == "linear":
        return omega_i * omega_j * float(np.dot(x_i, x_j))
    if variant == "rbf":
        return omega_i * omega_j * float(np.exp(-np.sum((x_i - x_j) ** 2)))
    raise ValueError(f"unknown item kernel variant {variant!r}")


def user_kernel(x_i, x_j, u_s, w_user_mod, omega_i=1.0, omega_j=1.0):
    """Linear kernel on representations modulated by w = W u_s (Hadamard)."""
    w = w_user_mod @ u_s
    return omega_i * omega_j * float(np.dot(w * x_i, w * x_j))


def mixture(u_s, w_mix, b_mix, active=KERNEL_ORDER):
    """Softmax mixture weights over the active kernel subset."""
    idx = [KERNEL_ORDER.index(a) for a in active]
    logits = u_s @ w_mix[:, idx] + b_mix[idx]
    logits = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(logits)
    return ex / ex.sum(axis=-1, keepdims=True)


def item_gram(xhat, variant="linear"):
    """Normalized-representation kernel matrix over one or more windows."""
    lin = xhat @ np.swapaxes(xhat, -1, -2)
    if variant == "linear":
        return lin
    sq = np.sum(xhat * xhat, axis=-1)
    dist = sq[..., :, None] + sq[..., None, :] - 2.0 * lin
    return np.exp(-np.maximum(dist, 0.0))


def item_gram_backward(d_gram, xhat, variant, gram):
    if variant == "linear":
        return (d_gram + np.swapaxes(d_gram, -1, -2)) @ xhat
    d_dist = -gram * d_gram
    t = d_dist + np.swapaxes(d_dist, -1, -2)
    return 2.0 * (np.sum(t, axis=-1)[..., None] * xhat - t @ xhat)


def user_gram(xhat, w_vec):
    """Gram of the user-modulated representations; w_vec broadcasts per window."""
    mod = xhat * w_vec[..., None, :]
    return mod @ np.swapaxes(mod, -1, -2), mod


def user_gram_backward(d_gram, mod, xhat, w_vec):
    d_mod = (d_gram + np.swapaxes(d_gram, -1, -2)) @ mod
    d_xhat = d_mod * w_vec[..., None, :]
    d_wvec = np.sum(d_mod * xhat, axis=-2)
    return d_xhat, d_wvec


def normalize_correlation(psi_tilde, jitter, valid=None):
    """Turn a mixed kernel matrix into a usable correlation matrix.

    Divides by sqrt of the diagonal pair, clamps off-diagonal entries into
    (-1, 1), adds jitter*I and renormalizes so the diagonal stays exactly 1.
    With `valid` (a boolean window mask per row), invalid rows/columns become
    an identity block so a single batched Cholesky covers every window.
    """
    diag = np.diagonal(psi_tilde, axis1=-2, axis2=-1)
    if valid is not None:
        bad = (diag <= 0.0) & valid
    else:
        bad = diag <= 0.0
    if np.any(bad):
        rows = np.argwhere(bad)
        raise NumericalError(
            f"nonpositive kernel self-similarity at row index {rows[0].tolist()}")
    safe = np.where(diag > 0.0, diag, 1.0)
    droot = np.sqrt(safe)
    psi_hat = psi_tilde / (droot[..., :, None] * droot[..., None, :])
    bound = 1.0 - jitter
    clamped = np.clip(psi_hat, -bound, bound)
    pass_mask = np.abs(psi_hat) < bound
    psi = clamped / (1.0 + jitter)
    idx = np.arange(psi.shape[-1])
    psi[..., idx, idx] = 1.0
    if valid is not None:
        pair_valid = valid[..., :, None] & valid[..., None, :]
        psi = np.where(pair_valid, psi, 0.0)
        psi[..., idx, idx] = 1.0
    cache = (psi_hat, droot, pass_mask)
    return psi, cache


def normalize_correlation_backward(d_psi, cache, jitter):
    """Backward of normalize_correlation; d_psi diagonal is ignored (the
    output diagonal is the constant 1)."""
    psi_hat, droot, pass_mask = cache
    idx = np.arange(d_psi.shape[-1])
    d_ph = d_psi / (1.0 + jitter)
    d_ph[..., idx, idx] = 0.0
    d_ph = np.where(pass_mask, d_ph, 0.0)
    d_tilde = d_ph / (droot[..., :, None] * droot[..., None, :])
    # diagonal sensitivity through the sqrt-normalization
    contrib = d_ph * psi_hat
    d_droot = -(contrib.sum(axis=-1) + contrib.sum(axis=-2)) / droot
    d_tilde[..., idx, idx] += 0.5 * d_droot / droot
    return d_tilde


def correlation_matrix(x_window, counting_base, u_s, omega, weights: KernelWeights,
                       active=KERNEL_ORDER, item_variant="linear", jitter=1e-5):
    """Full correlation construction for one sequence window.

    x_window: [n, d] raw representations (normalized internally);
    counting_base: [n, n] P_ij^2/(P_i P_j) matrix from CoocStats.counting_base;
    omega: [n] positive scales (used for the reported gram; the normalized
    correlation cancels them exactly).
    """
    xhat, _ = l2_normalize(x_window)
    grams = {}
    if "C" in active:
        grams["C"] = counting_base
    if "I" in active:
        grams["I"] = item_gram(xhat, item_variant)
    if "U" in active:
        w_vec = weights.w_user_mod @ u_s
        grams["U"], _ = user_gram(xhat[None], w_vec[None])
        grams["U"] = grams["U"][0]
    r = mixture(u_s, weights.w_mix, weights.b_mix, active)
    psi_tilde = sum(r[a] * grams[k] for a, k in enumerate(active))
    psi, _ = normalize_correlation(psi_tilde, jitter)
    gram = psi_tilde * np.outer(omega, omega)
    return CorrelationOutput(omega=omega, psi=psi, gram=gram, mixture_r=r)
