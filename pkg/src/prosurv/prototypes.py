"""Per-interval prototype banks and the similarity losses that shape them.

Each modality keeps a trainable ``(num_bins, per_bin, embed_dim)`` tensor
of prototypes.  A patient embedding is compared to every prototype by
cosine similarity between min-max normalized copies, averaged within each
interval; a contrastive loss then pulls the prototypes of the labelled
interval toward the embedding and pushes the others away.  Censored
samples treat every interval from the censoring point onward as
plausible, since the event is only known to happen later.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .survival import SurvivalLabel

NORM_EPS = 1e-8


def minmax_normalize(x: Tensor) -> Tensor:
    """Rescale the last dimension into [0, 1]; constant vectors map to zero."""
    lo = x.amin(dim=-1, keepdim=True)
    hi = x.amax(dim=-1, keepdim=True)
    return (x - lo) / (hi - lo + NORM_EPS)


class PrototypeBank(nn.Module):
    """Trainable ``(num_bins, per_bin, embed_dim)`` prototype tensor.

    Entries start i.i.d. Gaussian with standard deviation ``1 / sqrt(d)``
    so each prototype row has roughly unit norm; with an explicit seed the
    initialization is reproducible regardless of global RNG state.
    """

    def __init__(
        self,
        num_bins: int,
        per_bin: int,
        embed_dim: int,
        modality: str = "",
        seed: int | None = None,
    ) -> None:
        super().__init__()
        if num_bins < 2:
            raise ValueError("need at least 2 intervals")
        if per_bin < 1 or embed_dim < 1:
            raise ValueError("per_bin and embed_dim must be positive")
        generator = None
        if seed is not None:
            generator = torch.Generator().manual_seed(seed)
        weight = torch.randn(num_bins, per_bin, embed_dim, generator=generator)
        self.weight = nn.Parameter(weight / math.sqrt(embed_dim))
        self.modality = modality

    @property
    def num_bins(self) -> int:
        return self.weight.shape[0]

    @property
    def per_bin(self) -> int:
        return self.weight.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.weight.shape[2]

    def flat(self) -> Tensor:
        """``(num_bins * per_bin, embed_dim)`` view for attention lookups."""
        return self.weight.reshape(-1, self.weight.shape[-1])


def bin_similarity(feature: Tensor, bank: PrototypeBank) -> Tensor:
    """Mean normalized-cosine similarity to each interval's prototypes.

    Both the feature and every prototype are min-max normalized before the
    cosine, which keeps each entry of the returned ``(num_bins,)`` vector
    inside [0, 1]; norms are clamped away from zero so constant vectors
    yield similarity 0 rather than dividing by zero.
    """
    if feature.ndim != 1 or feature.shape[0] != bank.embed_dim:
        raise ValueError(
            f"feature shape {tuple(feature.shape)} does not match bank width {bank.embed_dim}"
        )
    f = minmax_normalize(feature)
    prototypes = minmax_normalize(bank.weight)
    dots = (prototypes * f).sum(dim=-1)
    norms = prototypes.norm(dim=-1).clamp_min(NORM_EPS) * f.norm().clamp_min(NORM_EPS)
    return (dots / norms).mean(dim=-1)


def risk_contrastive_loss(similarity: Tensor, label: SurvivalLabel) -> Tensor:
    """Event-aware contrastive loss over per-interval similarities.

    Uncensored samples treat the event interval as the positive and the
    mean of the others as negatives.  Censored samples treat every
    interval at or after the censoring interval as positive; earlier
    intervals are negatives, and the negative term vanishes when the
    censoring interval is the first one.
    """
    num_bins = similarity.shape[-1]
    if not 0 <= label.bin < num_bins:
        raise ValueError(f"bin {label.bin} out of range for {num_bins} intervals")
    b = label.bin
    if label.censorship == 0:
        positive = similarity[b]
        negatives = (similarity.sum() - positive) / (num_bins - 1)
        return negatives - positive
    loss = -similarity[b:].mean()
    if b > 0:
        loss = loss + similarity[:b].mean()
    return loss


def combined_similarity_loss(
    pathology: Tensor | None = None, genomics: Tensor | None = None
) -> Tensor:
    """Sum of the per-modality contrastive losses that are present."""
    terms = [t for t in (pathology, genomics) if t is not None]
    if not terms:
        raise ValueError("no modality losses given")
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total
