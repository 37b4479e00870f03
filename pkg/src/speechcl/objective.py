"""Contrastive and reconstruction objectives.

The contrastive loss is the normalized temperature-scaled cross entropy over
cosine similarities: for each of the 2N embeddings the positive is its paired
view, the other 2N-2 rows are negatives, and the final value is the mean over
all 2N directed pairs.  Rows (2k, 2k+1) are a pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor

DEFAULT_TEMPERATURE = 0.1


@dataclass
class ContrastiveBatch:
    """2N x d embeddings with interleaved positive pairs, plus a temperature."""

    embeddings: DiffTensor | np.ndarray
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        shape = self.embeddings.shape
        if len(shape) != 2:
            raise ValueError(f"embeddings must be 2-D, got shape {shape}")
        if shape[0] < 2 or shape[0] % 2 != 0:
            raise ValueError(f"need an even number (>= 2) of embeddings, got {shape[0]}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def num_pairs(self) -> int:
        return self.embeddings.shape[0] // 2


def cosine_sim(u, v) -> float:
    """u.v / (|u||v|); raises on a zero vector (a collapsed embedding)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def pair_index(i: int) -> int:
    """Row index of i's positive partner under the interleaved layout."""
    return i + 1 if i % 2 == 0 else i - 1


def nt_xent(batch: ContrastiveBatch) -> DiffTensor:
    """Temperature-scaled contrastive loss, differentiable, numerically stable.

    Stabilized by subtracting each anchor's max off-diagonal logit before
    exponentiation; with temperature 0.1 the raw logits reach +-10 and the
    unstabilized exponentials overflow in 32-bit.
    """
    z = batch.embeddings
    if not isinstance(z, DiffTensor):
        z = DiffTensor(np.asarray(z, dtype=np.float64))
    n_rows = z.shape[0]
    norms_sq = ad.sum(z * z, axis=1, keepdims=True)
    if np.any(norms_sq.data <= 0.0):
        raise ValueError("zero-norm embedding: the representation has collapsed")
    zn = z / ad.sqrt(norms_sq)
    logits = ad.matmul(zn, ad.transpose(zn, (1, 0))) * (1.0 / batch.temperature)

    eye = np.eye(n_rows, dtype=bool)
    off_diag = (~eye).astype(logits.dtype)
    pos_mask = np.zeros((n_rows, n_rows), dtype=logits.dtype)
    idx = np.arange(n_rows)
    pos_mask[idx, np.where(idx % 2 == 0, idx + 1, idx - 1)] = 1.0

    # Per-row max over the candidates (k != i), detached: the shift cancels
    # analytically, so gradients are exact.
    row_max = np.max(np.where(eye, -np.inf, logits.data), axis=1, keepdims=True)
    shifted = logits - DiffTensor(row_max.astype(logits.dtype))
    denom = ad.sum(ad.exp(shifted) * DiffTensor(off_diag), axis=1)
    pos = ad.sum(shifted * DiffTensor(pos_mask), axis=1)
    return ad.mean(ad.log(denom) - pos)


def recon_l1(prediction, target, mask: np.ndarray | None = None) -> DiffTensor:
    """Mean absolute error between prediction and target, optionally masked."""
    if not isinstance(prediction, DiffTensor):
        prediction = DiffTensor(np.asarray(prediction, dtype=np.float64))
    if not isinstance(target, DiffTensor):
        target = DiffTensor(np.asarray(target, dtype=prediction.dtype))
    return ad.l1_loss(prediction, target, mask)


def combined_loss(ntxent, recon, contrastive_weight: float = 1.0, recon_weight: float = 1.0):
    """Weighted sum of the two objectives (equal weights by default)."""
    if contrastive_weight < 0 or recon_weight < 0:
        raise ValueError("loss weights must be >= 0")
    return ntxent * contrastive_weight + recon * recon_weight
