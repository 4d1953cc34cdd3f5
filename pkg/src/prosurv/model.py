"""The scenario-routed survival network.

Whatever modalities a sample carries are encoded; the complementary
feature is synthesized by translating through the other modality's
prototype bank; original and translated features are then fused and
mapped to per-interval hazards by a sigmoid head.  The training loss
adapts to the same scenario split: the survival likelihood always
applies, the prototype similarity term applies per present modality, and
the translation alignment term only exists for complete samples.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor, nn

from .encoders import GenomicsEncoder, PathologyEncoder
from .prototypes import (
    PrototypeBank,
    bin_similarity,
    combined_similarity_loss,
    risk_contrastive_loss,
)
from .survival import SurvivalLabel, nll_loss
from .translation import CrossModalTranslator, alignment_loss


class Scenario(enum.Enum):
    """Which modalities a sample carries."""

    COMPLETE = "complete"
    PATHOLOGY_ONLY = "pathology-only"
    GENOMICS_ONLY = "genomics-only"


def infer_scenario(has_pathology: bool, has_genomics: bool) -> Scenario:
    if has_pathology and has_genomics:
        return Scenario.COMPLETE
    if has_pathology:
        return Scenario.PATHOLOGY_ONLY
    if has_genomics:
        return Scenario.GENOMICS_ONLY
    raise ValueError("empty sample: no modality present")


@dataclass
class LossWeights:
    """Balance factors for the auxiliary terms of the training loss."""

    similarity: float = 0.2
    alignment: float = 0.2

    def __post_init__(self) -> None:
        if self.similarity < 0 or self.alignment < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class ForwardOutput:
    """Everything one forward pass produces; absent-modality slots are None."""

    scenario: Scenario
    hazards: Tensor
    pathology_feature: Optional[Tensor] = None
    genomics_feature: Optional[Tensor] = None
    pathology_to_genomics: Optional[Tensor] = None
    genomics_to_pathology: Optional[Tensor] = None
    pathology_similarity: Optional[Tensor] = None
    genomics_similarity: Optional[Tensor] = None


@dataclass
class LossTerms:
    """Total training loss plus its breakdown; terms that do not apply to
    the sample's scenario stay None."""

    total: Tensor
    survival: Tensor
    similarity: Optional[Tensor] = None
    alignment: Optional[Tensor] = None


class ProSurv(nn.Module):
    """Prototype-guided cross-modal survival model.

    Works with pathology-only, genomics-only, or complete samples; per
    sample the forward pass routes on whichever inputs are given.  The
    hazard head consumes the concatenation of one original and one
    translated feature (averaged with the translation for complete
    samples), giving ``num_bins`` independent per-interval hazards.
    """

    def __init__(
        self,
        pathology_input_dim: int,
        genomics_input_dim: int,
        embed_dim: int = 256,
        num_bins: int = 4,
        prototypes_per_bin: int = 32,
        num_layers: int = 2,
        num_heads: int = 8,
        temperature: float = 0.5,
        genomics_dropout: float = 0.1,
        detach_translation_bank: bool = False,
    ) -> None:
        super().__init__()
        self.num_bins = num_bins
        self.embed_dim = embed_dim
        self.detach_translation_bank = detach_translation_bank
        self.pathology_encoder = PathologyEncoder(
            pathology_input_dim, embed_dim, num_layers=num_layers, num_heads=num_heads
        )
        self.genomics_encoder = GenomicsEncoder(
            genomics_input_dim, embed_dim, dropout=genomics_dropout
        )
        self.pathology_bank = PrototypeBank(
            num_bins, prototypes_per_bin, embed_dim, modality="pathology"
        )
        self.genomics_bank = PrototypeBank(
            num_bins, prototypes_per_bin, embed_dim, modality="genomics"
        )
        self.to_genomics = CrossModalTranslator(
            embed_dim, temperature, direction="pathology_to_genomics"
        )
        self.to_pathology = CrossModalTranslator(
            embed_dim, temperature, direction="genomics_to_pathology"
        )
        self.hazard_head = nn.Linear(2 * embed_dim, num_bins)

    def forward(self, patch_bag: Tensor | None = None, genes: Tensor | None = None) -> ForwardOutput:
        scenario = infer_scenario(patch_bag is not None, genes is not None)
        path_feat = gene_feat = to_gene = to_path = sim_path = sim_gene = None
        if patch_bag is not None:
            path_feat = self.pathology_encoder(patch_bag)
            sim_path = bin_similarity(path_feat, self.pathology_bank)
            to_gene = self.to_genomics(
                path_feat, self.genomics_bank, detach_bank=self.detach_translation_bank
            )
        if genes is not None:
            gene_feat = self.genomics_encoder(genes)
            sim_gene = bin_similarity(gene_feat, self.genomics_bank)
            to_path = self.to_pathology(
                gene_feat, self.pathology_bank, detach_bank=self.detach_translation_bank
            )
        if scenario is Scenario.COMPLETE:
            fused = torch.cat([(path_feat + to_path) / 2, (gene_feat + to_gene) / 2])
        elif scenario is Scenario.PATHOLOGY_ONLY:
            fused = torch.cat([path_feat, to_gene])
        else:
            fused = torch.cat([gene_feat, to_path])
        hazards = torch.sigmoid(self.hazard_head(fused))
        return ForwardOutput(
            scenario=scenario,
            hazards=hazards,
            pathology_feature=path_feat,
            genomics_feature=gene_feat,
            pathology_to_genomics=to_gene,
            genomics_to_pathology=to_path,
            pathology_similarity=sim_path,
            genomics_similarity=sim_gene,
        )


def compose_total(
    survival: Tensor,
    similarity: Optional[Tensor],
    alignment: Optional[Tensor],
    weights: LossWeights,
) -> Tensor:
    """Weighted sum of the loss terms.

    Terms that are absent or carry weight zero are skipped entirely, so a
    run with both auxiliary weights at zero optimizes the bare likelihood,
    bit for bit.
    """
    total = survival
    if similarity is not None and weights.similarity != 0.0:
        total = total + weights.similarity * similarity
    if alignment is not None and weights.alignment != 0.0:
        total = total + weights.alignment * alignment
    return total


def total_loss(out: ForwardOutput, label: SurvivalLabel, weights: LossWeights) -> LossTerms:
    """Scenario-dependent training loss for one sample."""
    survival = nll_loss(out.hazards, label)
    sim_path = sim_gene = None
    if out.pathology_similarity is not None:
        sim_path = risk_contrastive_loss(out.pathology_similarity, label)
    if out.genomics_similarity is not None:
        sim_gene = risk_contrastive_loss(out.genomics_similarity, label)
    similarity = combined_similarity_loss(pathology=sim_path, genomics=sim_gene)
    alignment = None
    if out.scenario is Scenario.COMPLETE:
        alignment = alignment_loss(
            out.pathology_feature, out.genomics_to_pathology
        ) + alignment_loss(out.genomics_feature, out.pathology_to_genomics)
    total = compose_total(survival, similarity, alignment, weights)
    return LossTerms(total=total, survival=survival, similarity=similarity, alignment=alignment)
