"""Patient-level encoders for the two input modalities.

A bag of pre-extracted patch features becomes one embedding through a
linear projection, stacked self-attention blocks, and mean pooling over
the patch axis; no positional encoding is used, so patch order cannot
matter.  Gene vectors run through a small self-normalizing network.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn


class PathologyEncoder(nn.Module):
    """Transformer-over-patches encoder with global average pooling.

    Input is a single bag of shape ``(num_patches, input_dim)``; output is
    a 1-D embedding of size ``embed_dim``.
    """

    def __init__(
        self,
        input_dim: int,
        embed_dim: int = 256,
        num_layers: int = 2,
        num_heads: int = 8,
        ff_multiplier: int = 2,
    ) -> None:
        super().__init__()
        if embed_dim % num_heads != 0:
            raise ValueError(
                f"embed_dim {embed_dim} must be divisible by num_heads {num_heads}"
            )
        self.input_dim = input_dim
        self.embed_dim = embed_dim
        self.project = nn.Linear(input_dim, embed_dim)
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=embed_dim,
                nhead=num_heads,
                dim_feedforward=ff_multiplier * embed_dim,
                dropout=0.0,
                activation="gelu",
                batch_first=True,
            )
            for _ in range(num_layers)
        )

    def forward(self, bag: Tensor) -> Tensor:
        if bag.ndim != 2:
            raise ValueError(f"expected a (num_patches, input_dim) bag, got shape {tuple(bag.shape)}")
        if bag.shape[0] == 0:
            raise ValueError("empty bag")
        if bag.shape[1] != self.input_dim:
            raise ValueError(
                f"bag feature size {bag.shape[1]} does not match encoder input size {self.input_dim}"
            )
        x = self.project(bag).unsqueeze(0)
        for layer in self.layers:
            x = layer(x)
        return x.squeeze(0).mean(dim=0)


class GenomicsEncoder(nn.Module):
    """Self-normalizing network: two Linear + SELU + AlphaDropout stages.

    Weights use LeCun-normal initialization (the scheme SELU's fixed point
    analysis assumes) and biases start at zero.
    """

    def __init__(self, input_dim: int, embed_dim: int = 256, dropout: float = 0.1) -> None:
        super().__init__()
        self.input_dim = input_dim
        self.embed_dim = embed_dim
        self.net = nn.Sequential(
            nn.Linear(input_dim, embed_dim),
            nn.SELU(),
            nn.AlphaDropout(dropout),
            nn.Linear(embed_dim, embed_dim),
            nn.SELU(),
            nn.AlphaDropout(dropout),
        )
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for module in self.net:
            if isinstance(module, nn.Linear):
                nn.init.normal_(module.weight, mean=0.0, std=1.0 / math.sqrt(module.in_features))
                nn.init.zeros_(module.bias)

    def forward(self, genes: Tensor) -> Tensor:
        if genes.ndim != 1:
            raise ValueError(f"expected a flat gene vector, got shape {tuple(genes.shape)}")
        if genes.shape[0] != self.input_dim:
            raise ValueError(
                f"gene vector size {genes.shape[0]} does not match encoder input size {self.input_dim}"
            )
        return self.net(genes)


def subsample_bag(bag: Tensor, max_patches: int, generator: torch.Generator | None = None) -> Tensor:
    """Draw at most ``max_patches`` rows uniformly without replacement."""
    if max_patches < 1:
        raise ValueError("max_patches must be positive")
    if bag.shape[0] <= max_patches:
        return bag
    keep = torch.randperm(bag.shape[0], generator=generator)[:max_patches]
    return bag[keep]
