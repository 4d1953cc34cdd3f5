"""Training loop, evaluation, checkpointing, robustness sweeps, and the
translation alignment report.

Training follows the reference recipe: Adam, one patient per step with
optional gradient accumulation, per-epoch validation concordance, and the
best-validation checkpoint kept (ties resolved toward the earlier epoch).
A loss that stops being finite aborts the run with enough context to
reproduce the failing step.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .config import ConfigError, TrainConfig
from .data import (
    DataError,
    FoldSplit,
    GeneNormalizer,
    ManifestRecord,
    SurvivalDataset,
    _load_genes,
    load_manifest,
    peek_dims,
    split_folds,
)
from .encoders import subsample_bag
from .model import LossWeights, ProSurv, Scenario, total_loss
from .survival import BinEdges, assign_bins, concordance_index, risk_score
from .translation import alignment_loss


class NumericalFailure(Exception):
    """Raised when the training loss stops being finite."""


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_survival: float
    val_cindex: float


@dataclass
class TrainResult:
    best_epoch: int
    best_val_cindex: float
    epochs: list[EpochLog]
    test_cindex: dict[str, float]
    checkpoint_path: Path
    alignment_term_count: int


@dataclass
class CheckpointBundle:
    model: ProSurv
    edges: BinEdges
    normalizer: GeneNormalizer | None
    model_config: dict
    train_config: dict
    val_cindex: float
    epoch: int


def fit_preprocessing(
    train_records: Sequence[ManifestRecord], num_bins: int
) -> tuple[BinEdges, GeneNormalizer | None]:
    """Bin edges and gene statistics from the training split alone."""
    edges, _ = assign_bins(
        [r.months for r in train_records],
        [r.censorship for r in train_records],
        num_bins,
    )
    gene_vectors = [_load_genes(r) for r in train_records if r.has_genomics]
    normalizer = GeneNormalizer.fit(gene_vectors) if gene_vectors else None
    return edges, normalizer


def build_model(config: TrainConfig, pathology_dim: int, genomics_dim: int) -> ProSurv:
    return ProSurv(
        pathology_input_dim=pathology_dim,
        genomics_input_dim=genomics_dim,
        embed_dim=config.embed_dim,
        num_bins=config.num_bins,
        prototypes_per_bin=config.prototypes_per_bin,
        num_layers=config.num_layers,
        num_heads=config.num_heads,
        temperature=config.temperature,
        genomics_dropout=config.genomics_dropout,
    )


def _model_config(config: TrainConfig, pathology_dim: int, genomics_dim: int) -> dict:
    return {
        "pathology_input_dim": pathology_dim,
        "genomics_input_dim": genomics_dim,
        "embed_dim": config.embed_dim,
        "num_bins": config.num_bins,
        "prototypes_per_bin": config.prototypes_per_bin,
        "num_layers": config.num_layers,
        "num_heads": config.num_heads,
        "temperature": config.temperature,
        "genomics_dropout": config.genomics_dropout,
    }


def save_checkpoint(
    path,
    model: ProSurv,
    model_config: dict,
    train_config: TrainConfig,
    edges: BinEdges,
    normalizer: GeneNormalizer | None,
    val_cindex: float,
    epoch: int,
) -> None:
    payload = {
        "state_dict": model.state_dict(),
        "model_config": model_config,
        "train_config": dataclasses.asdict(train_config),
        "bin_edges": list(edges.edges),
        "num_bins": edges.num_bins,
        "gene_min": torch.from_numpy(normalizer.minimum.copy()) if normalizer else None,
        "gene_max": torch.from_numpy(normalizer.maximum.copy()) if normalizer else None,
        "val_cindex": float(val_cindex),
        "epoch": int(epoch),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> CheckpointBundle:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    payload = torch.load(path, weights_only=True)
    model = ProSurv(**payload["model_config"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    normalizer = None
    if payload["gene_min"] is not None:
        normalizer = GeneNormalizer(
            minimum=payload["gene_min"].numpy(), maximum=payload["gene_max"].numpy()
        )
    return CheckpointBundle(
        model=model,
        edges=BinEdges(tuple(payload["bin_edges"]), payload["num_bins"]),
        normalizer=normalizer,
        model_config=payload["model_config"],
        train_config=payload["train_config"],
        val_cindex=payload["val_cindex"],
        epoch=payload["epoch"],
    )


def _mask_for_scenario(bag, genes, scenario: Scenario | None):
    """Apply a scenario override; returns None when the record does not
    carry what the override requires."""
    if scenario is None:
        return bag, genes
    if scenario is Scenario.COMPLETE:
        return (bag, genes) if bag is not None and genes is not None else None
    if scenario is Scenario.PATHOLOGY_ONLY:
        return (bag, None) if bag is not None else None
    return (None, genes) if genes is not None else None


def evaluate_split(
    model, dataset: SurvivalDataset, scenario: Scenario | None = None
) -> dict[str, float]:
    """Concordance of model risk scores over one dataset split.

    With a scenario override only the records carrying the required
    modality are scored and the other modality is masked out; it is an
    error when no record qualifies.
    """
    model.eval()
    risks, times, censorships = [], [], []
    with torch.no_grad():
        for i in range(len(dataset)):
            bag, genes, label, _ = dataset[i]
            masked = _mask_for_scenario(bag, genes, scenario)
            if masked is None:
                continue
            out = model(patch_bag=masked[0], genes=masked[1])
            risks.append(float(risk_score(out.hazards)))
            times.append(label.months)
            censorships.append(label.censorship)
    if not risks:
        name = scenario.value if scenario is not None else "any"
        raise DataError(f"scenario override {name!r}: no record carries the required modality")
    return {
        "cindex": concordance_index(risks, times, censorships),
        "count": float(len(risks)),
    }


def _test_metrics(model, dataset: SurvivalDataset) -> dict[str, float]:
    metrics = {"routed": evaluate_split(model, dataset)["cindex"]}
    records = dataset.records
    overrides = [
        ("complete", Scenario.COMPLETE, any(r.has_pathology and r.has_genomics for r in records)),
        ("pathology-only", Scenario.PATHOLOGY_ONLY, any(r.has_pathology for r in records)),
        ("genomics-only", Scenario.GENOMICS_ONLY, any(r.has_genomics for r in records)),
    ]
    for name, scenario, feasible in overrides:
        if feasible:
            metrics[name] = evaluate_split(model, dataset, scenario)["cindex"]
    return metrics


def degrade_records(
    records: Sequence[ManifestRecord], rate: float, seed: int
) -> list[ManifestRecord]:
    """Reduce a deterministic fraction of the records to one modality.

    ``round(rate * len(records))`` complete records are picked without
    replacement; the first half keeps pathology, the rest keeps genomics.
    Records that are already unimodal are never picked.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    out = list(records)
    wanted = int(round(rate * len(out)))
    if wanted == 0:
        return out
    complete = [i for i, r in enumerate(out) if r.has_pathology and r.has_genomics]
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(complete), size=min(wanted, len(complete)), replace=False)
    for j, idx in enumerate(sorted(int(c) for c in chosen)):
        i = complete[idx]
        out[i] = out[i].drop_genomics() if j < len(chosen) // 2 + len(chosen) % 2 else out[i].drop_pathology()
    return out


def train(
    config: TrainConfig,
    records: Sequence[ManifestRecord] | None = None,
    degrade_rate: float = 0.0,
    model_factory: Callable[[TrainConfig, int, int], ProSurv] | None = None,
) -> TrainResult:
    """Train one fold and return its logs, test metrics and checkpoint.

    ``degrade_rate`` reduces that fraction of training patients to a
    single modality (validation and test stay intact), which is how the
    missing-modality robustness sweep reuses this entry point.
    """
    if records is None:
        if config.manifest is None:
            raise ConfigError("no manifest given (config.manifest is empty)")
        records = load_manifest(config.manifest)
    split = split_folds(records, folds=config.folds, seed=config.seed)[config.fold]
    train_records = degrade_records(split.train, degrade_rate, config.seed)
    split = FoldSplit(train=train_records, val=split.val, test=split.test)

    edges, normalizer = fit_preprocessing(split.train, config.num_bins)
    train_set = SurvivalDataset(split.train, edges, normalizer)
    val_set = SurvivalDataset(split.val, edges, normalizer)
    test_set = SurvivalDataset(split.test, edges, normalizer)
    pathology_dim, genomics_dim = peek_dims(split.train)

    torch.manual_seed(config.seed)
    factory = model_factory or build_model
    model = factory(config, pathology_dim, genomics_dim)
    device = torch.device(config.device)
    model.to(device)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    weights = LossWeights(config.similarity_weight, config.alignment_weight)
    sample_rng = torch.Generator().manual_seed(config.seed)
    checkpoint_path = Path(config.output_dir) / "checkpoint.pt"

    best_epoch = 0
    best_val = -math.inf
    logs: list[EpochLog] = []
    alignment_terms = 0
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        optimizer.zero_grad()
        order = torch.randperm(len(train_set), generator=sample_rng).tolist()
        loss_sum = survival_sum = 0.0
        pending = 0
        for idx in order:
            bag, genes, label, record = train_set[idx]
            if config.modality_dropout > 0 and bag is not None and genes is not None:
                # present the sample through a unimodal route with the
                # configured probability, split evenly between the two sides
                draw = float(torch.rand((), generator=sample_rng))
                if draw < config.modality_dropout / 2:
                    genes = None
                elif draw < config.modality_dropout:
                    bag = None
            if bag is not None:
                bag = subsample_bag(bag, config.max_patches, generator=sample_rng).to(device)
            if genes is not None:
                genes = genes.to(device)
            out = model(patch_bag=bag, genes=genes)
            terms = total_loss(out, label, weights)
            total_value = float(terms.total.detach())
            if not math.isfinite(total_value):
                survival_value = float(terms.survival.detach())
                similarity_value = None if terms.similarity is None else float(terms.similarity.detach())
                alignment_value = None if terms.alignment is None else float(terms.alignment.detach())
                raise NumericalFailure(
                    f"non-finite loss at epoch {epoch}, patient {record.patient_id}: "
                    f"total={total_value!r}, survival={survival_value!r}, "
                    f"similarity={similarity_value!r}, alignment={alignment_value!r}"
                )
            (terms.total / config.grad_accumulation).backward()
            pending += 1
            if pending == config.grad_accumulation:
                optimizer.step()
                optimizer.zero_grad()
                pending = 0
            loss_sum += total_value
            survival_sum += float(terms.survival.detach())
            if terms.alignment is not None:
                alignment_terms += 1
        if pending:
            optimizer.step()
            optimizer.zero_grad()
        val_cindex = evaluate_split(model, val_set)["cindex"]
        logs.append(
            EpochLog(epoch, loss_sum / len(train_set), survival_sum / len(train_set), val_cindex)
        )
        if val_cindex > best_val:  # strict: ties keep the earlier epoch
            best_val = val_cindex
            best_epoch = epoch
            save_checkpoint(
                checkpoint_path,
                model,
                _model_config(config, pathology_dim, genomics_dim),
                config,
                edges,
                normalizer,
                val_cindex=val_cindex,
                epoch=epoch,
            )

    best = load_checkpoint(checkpoint_path)
    return TrainResult(
        best_epoch=best_epoch,
        best_val_cindex=best_val,
        epochs=logs,
        test_cindex=_test_metrics(best.model, test_set),
        checkpoint_path=checkpoint_path,
        alignment_term_count=alignment_terms,
    )


@dataclass
class SweepPoint:
    rate: float
    best_val_cindex: float
    test_cindex: dict[str, float]


def sweep_missing(
    config: TrainConfig,
    rates: Sequence[float],
    records: Sequence[ManifestRecord] | None = None,
) -> list[SweepPoint]:
    """Train once per missing rate, degrading only the training split."""
    if not rates:
        raise ConfigError("sweep needs at least one rate")
    if records is None:
        if config.manifest is None:
            raise ConfigError("no manifest given (config.manifest is empty)")
        records = load_manifest(config.manifest)
    points = []
    for rate in rates:
        run_config = dataclasses.replace(
            config, output_dir=str(Path(config.output_dir) / f"rate_{rate:g}")
        )
        result = train(run_config, records, degrade_rate=rate)
        points.append(
            SweepPoint(
                rate=float(rate),
                best_val_cindex=result.best_val_cindex,
                test_cindex=result.test_cindex,
            )
        )
    return points


def _alignment_means(model: ProSurv, dataset: SurvivalDataset) -> tuple[float, float]:
    """Mean squared translation error per direction over complete samples."""
    model.eval()
    p2g, g2p, count = 0.0, 0.0, 0
    with torch.no_grad():
        for i in range(len(dataset)):
            bag, genes, _, _ = dataset[i]
            if bag is None or genes is None:
                continue
            out = model(patch_bag=bag, genes=genes)
            p2g += float(alignment_loss(out.genomics_feature, out.pathology_to_genomics))
            g2p += float(alignment_loss(out.pathology_feature, out.genomics_to_pathology))
            count += 1
    if count == 0:
        raise DataError("no complete records for the alignment report")
    return p2g / count, g2p / count


def alignment_report(checkpoint_path, records: Sequence[ManifestRecord]) -> dict:
    """Translation error at the trained checkpoint versus at a fresh,
    seed-matched initialization, per direction."""
    bundle = load_checkpoint(checkpoint_path)
    complete = [r for r in records if r.has_pathology and r.has_genomics]
    if not complete:
        raise DataError("no complete records for the alignment report")
    dataset = SurvivalDataset(complete, bundle.edges, bundle.normalizer)
    trained_p2g, trained_g2p = _alignment_means(bundle.model, dataset)
    torch.manual_seed(bundle.train_config["seed"])
    fresh = ProSurv(**bundle.model_config)
    initial_p2g, initial_g2p = _alignment_means(fresh, dataset)
    return {
        "pathology_to_genomics": {"trained": trained_p2g, "initial": initial_p2g},
        "genomics_to_pathology": {"trained": trained_g2p, "initial": initial_g2p},
        "count": len(dataset),
    }


@dataclass
class CrossValResult:
    per_fold: list[float]
    mean: float
    std: float


def cross_validate(config: TrainConfig, records: Sequence[ManifestRecord] | None = None) -> CrossValResult:
    """Train every fold and summarize the routed test concordance."""
    if records is None:
        if config.manifest is None:
            raise ConfigError("no manifest given (config.manifest is empty)")
        records = load_manifest(config.manifest)
    scores = []
    for fold in range(config.folds):
        run_config = dataclasses.replace(
            config, fold=fold, output_dir=str(Path(config.output_dir) / f"fold_{fold}")
        )
        scores.append(train(run_config, records).test_cindex["routed"])
    return CrossValResult(
        per_fold=scores, mean=float(np.mean(scores)), std=float(np.std(scores))
    )


def format_train_report(result: TrainResult) -> str:
    lines = [
        f"best epoch:      {result.best_epoch}",
        f"best val cindex: {result.best_val_cindex:.6f}",
        f"checkpoint:      {result.checkpoint_path}",
        "test cindex:",
    ]
    for name, value in result.test_cindex.items():
        lines.append(f"  {name:<16} {value:.6f}")
    lines.append("epoch  train_loss  train_nll  val_cindex")
    for log in result.epochs:
        lines.append(
            f"{log.epoch:>5}  {log.train_loss:>10.4f}  {log.train_survival:>9.4f}  {log.val_cindex:>10.6f}"
        )
    return "\n".join(lines)


def format_sweep_report(points: Sequence[SweepPoint]) -> str:
    names = sorted({name for p in points for name in p.test_cindex})
    header = "rate   best_val  " + "  ".join(f"{n:>15}" for n in names)
    lines = [header]
    for p in points:
        cells = "  ".join(
            f"{p.test_cindex[n]:>15.6f}" if n in p.test_cindex else f"{'-':>15}" for n in names
        )
        lines.append(f"{p.rate:<5.2f}  {p.best_val_cindex:>8.6f}  {cells}")
    return "\n".join(lines)


def format_alignment_report(report: dict) -> str:
    lines = [f"complete samples: {report['count']}"]
    for direction in ("pathology_to_genomics", "genomics_to_pathology"):
        entry = report[direction]
        ratio = entry["trained"] / entry["initial"] if entry["initial"] else float("nan")
        lines.append(
            f"{direction}: trained={entry['trained']:.6f} initial={entry['initial']:.6f} "
            f"ratio={ratio:.4f}"
        )
    return "\n".join(lines)
