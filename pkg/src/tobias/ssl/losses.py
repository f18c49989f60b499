"""In-batch contrastive losses with analytic gradients.

For anchors ``z1`` and positives ``z2`` (both ``N x D``), row ``i``
contributes ``-log(exp(s_ii) / (sum_{j != i} exp(a_ij) + sum_j exp(s_ij)))``
with ``s = z1 z2^T / tau`` and ``a = z1 z1^T / tau``.  The log-sum-exp is
taken after subtracting each row's maximum.
"""
from __future__ import annotations

import numpy as np

from tobias.errors import ConfigError


def _check(z1, z2, tau):
    z1, z2 = np.asarray(z1), np.asarray(z2)
    if z1.ndim != 2 or z1.shape != z2.shape:
        raise ValueError(f"embedding batches must be matching N x D matrices, got {z1.shape} and {z2.shape}")
    if z1.shape[0] == 0:
        raise ValueError("contrastive loss is undefined for an empty batch")
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    return z1, z2


def _logits(z1, z2, tau):
    n = z1.shape[0]
    cross = z1 @ z2.T / tau
    within = z1 @ z1.T / tau
    within[np.diag_indices(n)] = -np.inf
    return cross, within


def _softmax_rows(cross, within):
    top = np.maximum(cross.max(axis=1), within.max(axis=1))[:, None]
    e_cross = np.exp(cross - top)
    e_within = np.exp(within - top)
    total = e_cross.sum(axis=1, keepdims=True) + e_within.sum(axis=1, keepdims=True)
    return e_cross / total, e_within / total, top[:, 0] + np.log(total[:, 0])


def contrastive_loss(z1, z2, tau=0.2, reduction="sum"):
    """Scalar loss; ``reduction`` is ``"sum"`` over rows or ``"mean"``."""
    return contrastive_loss_and_grad(z1, z2, tau, reduction)[0]


def contrastive_loss_and_grad(z1, z2, tau=0.2, reduction="sum"):
    """Return ``(loss, dL/dz1, dL/dz2)``."""
    z1, z2 = _check(z1, z2, tau)
    n = z1.shape[0]
    cross, within = _logits(z1, z2, tau)
    p_cross, p_within, lse = _softmax_rows(cross, within)
    rows = lse - np.diagonal(cross)
    if reduction == "sum":
        scale = 1.0
    elif reduction == "mean":
        scale = 1.0 / n
    else:
        raise ConfigError(f"unknown reduction {reduction!r}")
    loss = rows.sum() * scale
    g_cross = p_cross.copy()
    g_cross[np.diag_indices(n)] -= 1.0
    g_cross *= scale / tau
    g_within = p_within * (scale / tau)
    dz1 = g_cross @ z2 + (g_within + g_within.T) @ z1
    dz2 = g_cross.T @ z1
    return float(loss), dz1, dz2


def l_self(zprime, zdprime, tau=0.2, reduction="sum"):
    """Contrastive loss between two augmented views of each image."""
    return contrastive_loss(zprime, zdprime, tau, reduction)


def l_tobias(zprime, zp, tau=0.2, reduction="sum"):
    """Same functional form, with positives drawn from the merged-view family."""
    return contrastive_loss(zprime, zp, tau, reduction)


def positive_share(z1, z2, tau) -> np.ndarray:
    """Per-row softmax mass on the positive pair."""
    z1, z2 = _check(z1, z2, tau)
    cross, within = _logits(z1, z2, tau)
    p_cross, _, _ = _softmax_rows(cross, within)
    return np.diagonal(p_cross).copy()
