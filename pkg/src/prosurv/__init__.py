"""Prototype-guided cross-modal survival prediction.

One model serves complete, pathology-only, and genomics-only patients:
per-interval prototype banks summarize how each modality looks at each
risk level, and attention over those banks translates whatever a patient
does carry into a stand-in for whatever they do not.
"""

from .config import ConfigError, TrainConfig, load_train_config
from .data import (
    DataError,
    FoldSplit,
    GeneNormalizer,
    ManifestRecord,
    SurvivalDataset,
    load_manifest,
    read_tensor,
    split_folds,
    write_tensor,
)
from .encoders import GenomicsEncoder, PathologyEncoder, subsample_bag
from .model import (
    ForwardOutput,
    LossTerms,
    LossWeights,
    ProSurv,
    Scenario,
    infer_scenario,
    total_loss,
)
from .prototypes import (
    PrototypeBank,
    bin_similarity,
    combined_similarity_loss,
    minmax_normalize,
    risk_contrastive_loss,
)
from .survival import (
    BinEdges,
    SurvivalLabel,
    assign_bins,
    concordance_index,
    hazards_to_survival,
    make_labels,
    nll_loss,
    risk_score,
)
from .synth import SynthConfig, SynthResult, generate
from .training import (
    NumericalFailure,
    TrainResult,
    alignment_report,
    cross_validate,
    evaluate_split,
    load_checkpoint,
    save_checkpoint,
    sweep_missing,
    train,
)
from .translation import CrossModalTranslator, alignment_loss

__version__ = "0.1.0"

__all__ = [
    "BinEdges",
    "ConfigError",
    "CrossModalTranslator",
    "DataError",
    "FoldSplit",
    "ForwardOutput",
    "GeneNormalizer",
    "GenomicsEncoder",
    "LossTerms",
    "LossWeights",
    "ManifestRecord",
    "NumericalFailure",
    "PathologyEncoder",
    "ProSurv",
    "PrototypeBank",
    "Scenario",
    "SurvivalDataset",
    "SurvivalLabel",
    "SynthConfig",
    "SynthResult",
    "TrainConfig",
    "TrainResult",
    "alignment_loss",
    "alignment_report",
    "assign_bins",
    "bin_similarity",
    "combined_similarity_loss",
    "concordance_index",
    "cross_validate",
    "evaluate_split",
    "generate",
    "hazards_to_survival",
    "infer_scenario",
    "load_checkpoint",
    "load_manifest",
    "load_train_config",
    "make_labels",
    "minmax_normalize",
    "nll_loss",
    "read_tensor",
    "risk_contrastive_loss",
    "risk_score",
    "save_checkpoint",
    "split_folds",
    "subsample_bag",
    "sweep_missing",
    "total_loss",
    "train",
    "write_tensor",
]
