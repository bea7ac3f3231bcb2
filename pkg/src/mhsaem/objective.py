"""The (minibatch) EM objective and its gradient.

Every E-step variant is reduced to a weight matrix ``W`` of shape (B, K):
row i says how much each component contributes to datapoint i of the
minibatch (responsibilities for EM/SAEM, sample frequencies for the
sampling algorithms, renormalized selections for SSAEM/TSAEM).  Both the
sufficient-statistics and the gradient M-step consume ``W``.
"""

import numpy as np
from scipy.special import softmax

from .model import log_joint_matrix


def exact_e_step(theta, X, beta=1.0):
    """Tempered responsibilities softmax(beta * log p(x, k)), plus the raw
    (N, K) log-joint matrix."""
    lj = log_joint_matrix(theta, X)
    return softmax(beta * lj, axis=1), lj


def samples_to_weights(samples, K):
    """(B, M) 1-based samples -> (B, K) empirical frequencies."""
    samples = np.asarray(samples)
    B, M = samples.shape
    W = np.zeros((B, K))
    np.add.at(W, (np.repeat(np.arange(B), M), samples.reshape(-1) - 1), 1.0 / M)
    return W


def q_value(theta, Xb, W, scale=1.0, beta=1.0):
    """scale * beta * sum_{i,k} W_ik log p(x_i, k)."""
    return float(scale * beta * np.sum(W * log_joint_matrix(theta, Xb)))


def q_gradient(theta, Xb, W, touched=None, scale=1.0, beta=1.0):
    """Gradient of :func:`q_value` w.r.t. (nu, eta).

    Returns ``(g_nu (K,), g_eta (K, P))``.  Only components listed in
    ``touched`` (0-based) are evaluated; other rows are left at zero.
    """
    K = theta.K
    fam = theta.family
    g_nu = np.zeros(K)
    g_eta = np.zeros((K, fam.n_params))
    c = scale * beta
    colsum = W.sum(axis=0)
    mask = W != 0
    if touched is not None:
        keep = np.zeros(K, dtype=bool)
        keep[np.asarray(touched, dtype=np.int64)] = True
        mask &= keep
    rows, ks = np.nonzero(mask)
    if rows.size:
        g = fam.grad_logpdf_rows(theta.components[ks], Xb[rows])
        np.add.at(g_eta, ks, (c * W[rows, ks])[:, None] * g)
    g = c * (colsum - theta.weights * colsum.sum())
    if touched is None:
        g_nu = g
    else:
        idx = np.asarray(touched, dtype=np.int64)
        g_nu[idx] = g[idx]
    return g_nu, g_eta
