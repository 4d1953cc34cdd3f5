"""Cross-modal feature translation through a prototype bank.

The source modality's embedding queries the target modality's prototype
bank with single-head attention: temperature-scaled dot products over all
``num_bins * per_bin`` prototypes give softmax weights, and the output is
the matching convex combination of value-projected prototypes.  The same
machinery serves two jobs: synthesizing the missing modality for
incomplete samples and enriching complete ones.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .prototypes import PrototypeBank


class CrossModalTranslator(nn.Module):
    """Single-head attention from one modality's feature onto the other
    modality's prototype bank.

    Query, key and value projections are bias-free ``d x d`` maps; scores
    are scaled by ``1 / (temperature * sqrt(d))`` before the softmax.
    """

    def __init__(self, embed_dim: int, temperature: float = 0.5, direction: str = "") -> None:
        super().__init__()
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.embed_dim = embed_dim
        self.temperature = float(temperature)
        self.direction = direction
        self.query = nn.Linear(embed_dim, embed_dim, bias=False)
        self.key = nn.Linear(embed_dim, embed_dim, bias=False)
        self.value = nn.Linear(embed_dim, embed_dim, bias=False)

    def forward(
        self,
        feature: Tensor,
        bank: PrototypeBank,
        detach_bank: bool = False,
        return_attention: bool = False,
    ):
        if feature.ndim != 1 or feature.shape[0] != self.embed_dim:
            raise ValueError(
                f"feature shape {tuple(feature.shape)} does not match width {self.embed_dim}"
            )
        if bank.embed_dim != self.embed_dim:
            raise ValueError(
                f"bank width {bank.embed_dim} does not match translator width {self.embed_dim}"
            )
        rows = bank.flat()
        if detach_bank:
            rows = rows.detach()
        scores = self.key(rows) @ self.query(feature)
        scores = scores / (self.temperature * math.sqrt(self.embed_dim))
        attention = torch.softmax(scores, dim=0)
        translated = attention @ self.value(rows)
        if return_attention:
            return translated, attention
        return translated


def alignment_loss(original: Tensor, translated: Tensor) -> Tensor:
    """Squared Euclidean distance between a feature and its translation."""
    if original.shape != translated.shape:
        raise ValueError(
            f"shape mismatch: {tuple(original.shape)} vs {tuple(translated.shape)}"
        )
    return ((original - translated) ** 2).sum()
