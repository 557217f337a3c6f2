"""Wasserstein similarity between Gaussian embeddings and the ranking loss.

For diagonal Gaussians the squared 2-Wasserstein distance is the squared
Euclidean distance between means plus the squared distance between
elementwise standard deviations, so it is a true metric on (mu, sqrt(sigma))
pairs. The contrastive objective sums squared energies over positive pairs
and exp(-energy) over negative pairs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .encoder import GaussianEmbedding
from .tensor import Tensor

# Distances below this floor enter exp(-E) as the floor itself; keeps the
# sqrt differentiable when a negative pair has identical embeddings.
ENERGY_FLOOR = 1e-12


class TrainingConfigError(ValueError):
    """The loss was invoked without the pairs it needs."""


def w2_diag(a: GaussianEmbedding, b: GaussianEmbedding) -> float:
    """2-Wasserstein distance between diagonal Gaussians (closed form)."""
    if a.mu.shape != b.mu.shape:
        raise T.ContractError(f"dimension mismatch: {a.mu.shape} vs {b.mu.shape}")
    sq = float(((a.mu - b.mu) ** 2).sum() + ((np.sqrt(a.sigma) - np.sqrt(b.sigma)) ** 2).sum())
    return float(np.sqrt(sq))


def w2_general_diag_oracle(a: GaussianEmbedding, b: GaussianEmbedding) -> float:
    """Test oracle: the general-covariance trace formula, evaluated per coordinate.

    With commuting (diagonal) covariances the trace term reduces to
    sigma_a + sigma_b - 2*sqrt(sigma_a*sigma_b) coordinate-wise.
    """
    if a.mu.shape != b.mu.shape:
        raise T.ContractError(f"dimension mismatch: {a.mu.shape} vs {b.mu.shape}")
    trace = (a.sigma + b.sigma - 2.0 * np.sqrt(a.sigma * b.sigma)).sum()
    return float(np.sqrt(((a.mu - b.mu) ** 2).sum() + trace))


def l2_point(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between point representations (ablation head)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise T.ContractError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def pair_energy(a, b) -> float:
    """Energy between two embeddings of either head type; symmetric, >= 0."""
    if isinstance(a, GaussianEmbedding):
        return w2_diag(a, b)
    return l2_point(a, b)


def ranking_loss(
    embeddings: Sequence,
    pos_pairs: Sequence[tuple[int, int]],
    neg_pairs: Sequence[tuple[int, int]],
    reduction: str = "sum",
) -> float:
    """Square-exponential loss over index pairs into ``embeddings``.

    Each positive pair contributes energy squared, each negative pair
    exp(-energy), every pair counted once per occurrence.
    """
    if not pos_pairs or not neg_pairs:
        raise TrainingConfigError("ranking loss needs at least one positive and one negative pair")
    total = 0.0
    for i, j in pos_pairs:
        total += pair_energy(embeddings[i], embeddings[j]) ** 2
    for i, k in neg_pairs:
        total += float(np.exp(-max(pair_energy(embeddings[i], embeddings[k]), ENERGY_FLOOR)))
    if reduction == "mean":
        total /= len(pos_pairs) + len(neg_pairs)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total


# --------------------------------------------------------------------------
# Tape paths used during training


def _pair_indices(pairs) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def squared_energies(
    mu: Tensor, sqrt_sigma: Tensor | None, pairs: Sequence[tuple[int, int]]
) -> Tensor:
    """Squared pair energies as a (P,) tensor; differentiable.

    For the gaussian head pass mu and sqrt(sigma); for the point head pass
    the point matrix as ``mu`` and None.
    """
    ia, ib = _pair_indices(pairs)
    dmu = T.sub(T.gather_rows(mu, ia), T.gather_rows(mu, ib))
    total = T.row_sums(T.mul(dmu, dmu))
    if sqrt_sigma is not None:
        ds = T.sub(T.gather_rows(sqrt_sigma, ia), T.gather_rows(sqrt_sigma, ib))
        total = T.add(total, T.row_sums(T.mul(ds, ds)))
    return total


def ranking_loss_terms(
    mu: Tensor,
    sigma: Tensor | None,
    pos_pairs: Sequence[tuple[int, int]],
    neg_pairs: Sequence[tuple[int, int]],
) -> tuple[Tensor | None, Tensor | None]:
    """Separate positive and negative loss terms (either may be absent).

    The positive term uses squared energies directly, bypassing the sqrt;
    the negative term clamps the energy away from zero inside exp(-E).
    """
    sqrt_sigma = T.sqrt(sigma) if sigma is not None else None
    pos_term = neg_term = None
    if len(pos_pairs):
        pos_term = T.tsum(squared_energies(mu, sqrt_sigma, pos_pairs))
    if len(neg_pairs):
        e_sq = squared_energies(mu, sqrt_sigma, neg_pairs)
        energies = T.sqrt(T.clamp_min(e_sq, ENERGY_FLOOR**2))
        neg_term = T.tsum(T.exp(T.neg(energies)))
    return pos_term, neg_term


def ranking_loss_t(
    mu: Tensor,
    sigma: Tensor | None,
    pos_pairs: Sequence[tuple[int, int]],
    neg_pairs: Sequence[tuple[int, int]],
    reduction: str = "sum",
) -> Tensor:
    """Differentiable ranking loss over a batch encoding."""
    if not len(pos_pairs) or not len(neg_pairs):
        raise TrainingConfigError("ranking loss needs at least one positive and one negative pair")
    pos_term, neg_term = ranking_loss_terms(mu, sigma, pos_pairs, neg_pairs)
    total = T.add(pos_term, neg_term)
    if reduction == "mean":
        total = T.mul(total, 1.0 / (len(pos_pairs) + len(neg_pairs)))
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total


def batch_distances(encoding, pairs) -> np.ndarray:
    """Plain W2 (or L2) distances for index pairs of a batch encoding."""
    if encoding.mu is not None:
        mu = encoding.mu.array
        sq = np.sqrt(encoding.sigma.array)
        ia, ib = _pair_indices(pairs)
        d2 = ((mu[ia] - mu[ib]) ** 2).sum(axis=1) + ((sq[ia] - sq[ib]) ** 2).sum(axis=1)
    else:
        z = encoding.point.array
        ia, ib = _pair_indices(pairs)
        d2 = ((z[ia] - z[ib]) ** 2).sum(axis=1)
    return np.sqrt(d2)
