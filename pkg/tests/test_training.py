"""Training loop, model selection, evaluation overrides, degradation,
sweeps, and the alignment report."""

import dataclasses
import json
import math

import numpy as np
import pytest
import torch
from torch import nn

from prosurv.config import ConfigError, TrainConfig, load_train_config
from prosurv.data import DataError, SurvivalDataset, split_folds, write_tensor, load_manifest
from prosurv.model import ForwardOutput, Scenario
from prosurv.survival import assign_bins
from prosurv.synth import SynthConfig, generate
from prosurv.training import (
    NumericalFailure,
    _alignment_means,
    alignment_report,
    build_model,
    degrade_records,
    evaluate_split,
    load_checkpoint,
    sweep_missing,
    train,
)


@pytest.fixture(scope="module")
def synth_small(tmp_path_factory):
    """Sixty complete patients, small dimensions, fixed seed."""
    root = tmp_path_factory.mktemp("synth_small")
    return generate(
        SynthConfig(
            num_patients=60, pathology_dim=6, num_genes=8, mean_patches=5.0, seed=7
        ),
        root,
    )


def small_config(result, out_dir, **overrides) -> TrainConfig:
    base = dict(
        num_bins=3,
        prototypes_per_bin=2,
        embed_dim=16,
        num_layers=1,
        num_heads=2,
        max_epochs=3,
        learning_rate=1e-3,
        seed=0,
        folds=5,
        manifest=str(result.manifest_path),
        output_dir=str(out_dir),
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def default_run(synth_small, tmp_path_factory):
    out = tmp_path_factory.mktemp("default_run")
    return train(small_config(synth_small, out))


class TestTrainConfig:
    def test_reference_defaults(self):
        """Defaults are the reference training recipe."""
        config = TrainConfig()
        assert config.num_bins == 4
        assert config.prototypes_per_bin == 32
        assert config.temperature == 0.5
        assert config.similarity_weight == 0.2
        assert config.alignment_weight == 0.2
        assert config.learning_rate == 1e-4
        assert config.weight_decay == 1e-4
        assert config.max_epochs == 50
        assert config.embed_dim == 256
        assert config.num_layers == 2
        assert config.num_heads == 8
        assert config.genomics_dropout == 0.1
        assert config.modality_dropout == 0.0

    def test_json_file_and_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"num_bins": 3, "seed": 5}))
        config = load_train_config(path, overrides={"seed": 9, "manifest": "m.csv"})
        assert config.num_bins == 3
        assert config.seed == 9
        assert config.manifest == "m.csv"

    def test_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"numbins": 3}))
        with pytest.raises(ConfigError, match="unknown keys.*numbins"):
            load_train_config(path)

    def test_rejects_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_train_config(path)

    @pytest.mark.parametrize(
        "field,value",
        [
            ("num_bins", 1),
            ("temperature", 0.0),
            ("learning_rate", -1.0),
            ("similarity_weight", -0.1),
            ("modality_dropout", 1.0),
            ("fold", 5),
        ],
    )
    def test_rejects_out_of_range_values(self, field, value):
        with pytest.raises(ConfigError):
            TrainConfig(**{field: value})


class TestTrainLoop:
    def test_logs_one_entry_per_epoch(self, default_run):
        assert [log.epoch for log in default_run.epochs] == [1, 2, 3]

    def test_best_checkpoint_tracks_validation(self, default_run):
        """The retained checkpoint is the earliest epoch achieving the
        maximum validation concordance."""
        vals = [log.val_cindex for log in default_run.epochs]
        assert default_run.best_val_cindex == max(vals)
        assert default_run.best_epoch == vals.index(max(vals)) + 1

    def test_checkpoint_reload_reproduces_logged_validation(self, default_run):
        bundle = load_checkpoint(default_run.checkpoint_path)
        assert bundle.val_cindex == default_run.best_val_cindex
        assert bundle.epoch == default_run.best_epoch

    def test_test_metrics_cover_all_scenarios(self, default_run):
        assert set(default_run.test_cindex) == {
            "routed",
            "complete",
            "pathology-only",
            "genomics-only",
        }
        for value in default_run.test_cindex.values():
            assert 0.0 <= value <= 1.0

    def test_deterministic_given_seed(self, synth_small, tmp_path, default_run):
        rerun = train(small_config(synth_small, tmp_path))
        assert [dataclasses.astuple(log) for log in rerun.epochs] == [
            dataclasses.astuple(log) for log in default_run.epochs
        ]
        assert rerun.test_cindex == default_run.test_cindex

    def test_zero_weights_collapse_loss_to_nll(self, synth_small, tmp_path):
        """With both auxiliary weights at zero the per-epoch training loss
        is exactly the mean survival NLL."""
        result = train(
            small_config(
                synth_small, tmp_path, similarity_weight=0.0, alignment_weight=0.0,
                max_epochs=2,
            )
        )
        for log in result.epochs:
            assert log.train_loss == log.train_survival

    def test_nonfinite_loss_aborts_with_diagnostics(self, synth_small, tmp_path):
        def poisoned(config, pathology_dim, genomics_dim):
            model = build_model(config, pathology_dim, genomics_dim)
            with torch.no_grad():
                model.hazard_head.weight.fill_(float("nan"))
            return model

        with pytest.raises(NumericalFailure, match=r"epoch 1, patient p\d+.*survival="):
            train(small_config(synth_small, tmp_path), model_factory=poisoned)

    def test_unimodal_training_never_evaluates_alignment(self, synth_small, tmp_path):
        """Degrading every training patient to one modality leaves the
        alignment term unexercised."""
        result = train(
            small_config(synth_small, tmp_path, max_epochs=1), degrade_rate=1.0
        )
        assert result.alignment_term_count == 0

    def test_complete_training_counts_alignment_terms(self, default_run):
        # three epochs over a fully complete training split
        assert default_run.alignment_term_count == 3 * 36

    def test_gradient_accumulation_runs(self, synth_small, tmp_path):
        result = train(
            small_config(synth_small, tmp_path, grad_accumulation=8, max_epochs=1)
        )
        assert math.isfinite(result.epochs[0].train_loss)

    def test_modality_dropout_changes_training(self, synth_small, tmp_path, default_run):
        result = train(small_config(synth_small, tmp_path, modality_dropout=0.5))
        assert [log.train_loss for log in result.epochs] != [
            log.train_loss for log in default_run.epochs
        ]


class _RiskFromFirstGene(nn.Module):
    """Stub whose risk score is a monotone function of gene[0]."""

    def forward(self, patch_bag=None, genes=None):
        # scaled down so no hazard lands inside the clamp region
        hazard = torch.sigmoid(genes[0].expand(2) / 50.0)
        return ForwardOutput(
            scenario=Scenario.GENOMICS_ONLY,
            hazards=hazard,
            pathology_feature=None,
            genomics_feature=None,
            pathology_to_genomics=None,
            genomics_to_pathology=None,
            pathology_similarity=None,
            genomics_similarity=None,
        )


class _ModalitySpy(nn.Module):
    """Records which modalities each forward call received."""

    def __init__(self):
        super().__init__()
        self.calls = []

    def forward(self, patch_bag=None, genes=None):
        self.calls.append((patch_bag is not None, genes is not None))
        return ForwardOutput(
            scenario=Scenario.COMPLETE,
            hazards=torch.tensor([0.5, 0.5]),
            pathology_feature=None,
            genomics_feature=None,
            pathology_to_genomics=None,
            genomics_to_pathology=None,
            pathology_similarity=None,
            genomics_similarity=None,
        )


def _handmade_records(tmp_path, months, with_pathology=True, with_genomics=True):
    """Manifest rows whose first gene equals the patient's risk rank."""
    rows = ["patient_id,pathology_path,genomics_path,months,censorship"]
    for i, m in enumerate(months):
        pid = f"p{i:02d}"
        path_cell = gene_cell = ""
        if with_pathology:
            path_cell = f"{pid}_bag.pstn"
            write_tensor(tmp_path / path_cell, np.zeros((2, 3), dtype=np.float32))
        if with_genomics:
            gene_cell = f"{pid}_genes.pstn"
            # shorter survival gets the larger first gene (higher risk)
            write_tensor(
                tmp_path / gene_cell, np.array([-m, 0.0, 0.0], dtype=np.float32)
            )
        rows.append(f"{pid},{path_cell},{gene_cell},{m},0")
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return load_manifest(manifest)


class TestEvaluate:
    def test_perfect_risk_stub_scores_one(self, tmp_path):
        months = [5.0, 12.0, 33.0, 47.0, 61.0, 80.0, 95.0, 110.0]
        records = _handmade_records(tmp_path, months, with_pathology=False)
        edges, _ = assign_bins(months, [0] * len(months), 2)
        dataset = SurvivalDataset(records, edges)
        report = evaluate_split(_RiskFromFirstGene(), dataset)
        assert report["cindex"] == 1.0
        assert report["count"] == len(months)

    def test_evaluate_is_pure(self, tmp_path):
        months = [5.0, 12.0, 33.0, 47.0]
        records = _handmade_records(tmp_path, months, with_pathology=False)
        edges, _ = assign_bins(months, [0] * 4, 2)
        dataset = SurvivalDataset(records, edges)
        first = evaluate_split(_RiskFromFirstGene(), dataset)
        second = evaluate_split(_RiskFromFirstGene(), dataset)
        assert first == second

    def test_override_masks_present_modality(self, tmp_path):
        """A pathology-only override on complete records hides the genes
        from the model."""
        months = [5.0, 12.0, 33.0, 47.0]
        records = _handmade_records(tmp_path, months)
        edges, _ = assign_bins(months, [0] * 4, 2)
        dataset = SurvivalDataset(records, edges)
        spy = _ModalitySpy()
        evaluate_split(spy, dataset, scenario=Scenario.PATHOLOGY_ONLY)
        assert spy.calls == [(True, False)] * 4

    def test_override_without_carriers_errors(self, tmp_path):
        months = [5.0, 12.0, 33.0, 47.0]
        records = _handmade_records(tmp_path, months, with_pathology=False)
        edges, _ = assign_bins(months, [0] * 4, 2)
        dataset = SurvivalDataset(records, edges)
        with pytest.raises(DataError, match="no record carries"):
            evaluate_split(_ModalitySpy(), dataset, scenario=Scenario.PATHOLOGY_ONLY)


class TestDegradeRecords:
    def test_rate_zero_is_identity(self, synth_small):
        assert degrade_records(synth_small.records, 0.0, seed=1) == list(
            synth_small.records
        )

    def test_halves_split_between_modalities(self, synth_small):
        degraded = degrade_records(synth_small.records, 0.5, seed=1)
        assert len(degraded) == len(synth_small.records)
        path_only = sum(1 for r in degraded if r.has_pathology and not r.has_genomics)
        gene_only = sum(1 for r in degraded if r.has_genomics and not r.has_pathology)
        assert path_only == 15
        assert gene_only == 15

    def test_deterministic_per_seed(self, synth_small):
        once = degrade_records(synth_small.records, 0.4, seed=3)
        again = degrade_records(synth_small.records, 0.4, seed=3)
        assert once == again

    def test_never_degrades_unimodal_records(self, synth_small):
        half = degrade_records(synth_small.records, 0.5, seed=1)
        # a second full-rate pass can only touch the remaining complete rows
        full = degrade_records(half, 1.0, seed=2)
        assert all(r.has_pathology or r.has_genomics for r in full)
        for before, after in zip(half, full):
            if not (before.has_pathology and before.has_genomics):
                assert before == after

    def test_rejects_rate_out_of_range(self, synth_small):
        with pytest.raises(ValueError, match="rate"):
            degrade_records(synth_small.records, 1.5, seed=0)


class TestSweepMissing:
    def test_rate_zero_matches_plain_train(self, synth_small, tmp_path, default_run):
        points = sweep_missing(
            small_config(synth_small, tmp_path), rates=[0.0, 0.5]
        )
        assert points[0].rate == 0.0
        assert points[0].best_val_cindex == default_run.best_val_cindex
        assert points[0].test_cindex == default_run.test_cindex

    def test_rows_report_every_scenario(self, synth_small, tmp_path):
        points = sweep_missing(
            small_config(synth_small, tmp_path, max_epochs=1), rates=[0.5]
        )
        assert set(points[0].test_cindex) >= {
            "routed",
            "complete",
            "pathology-only",
            "genomics-only",
        }

    def test_rejects_empty_rates(self, synth_small, tmp_path):
        with pytest.raises(ConfigError, match="at least one rate"):
            sweep_missing(small_config(synth_small, tmp_path), rates=[])


class _IdentityTranslations(nn.Module):
    """Forwards through a real model, then claims perfect translation."""

    def __init__(self, inner):
        super().__init__()
        self.inner = inner

    def forward(self, patch_bag=None, genes=None):
        out = self.inner(patch_bag=patch_bag, genes=genes)
        return dataclasses.replace(
            out,
            pathology_to_genomics=out.genomics_feature,
            genomics_to_pathology=out.pathology_feature,
        )


class TestAlignmentReport:
    def test_identity_translation_scores_zero(self, synth_small, default_run):
        bundle = load_checkpoint(default_run.checkpoint_path)
        split = split_folds(synth_small.records, folds=5, seed=0)[0]
        dataset = SurvivalDataset(split.test, bundle.edges, bundle.normalizer)
        p2g, g2p = _alignment_means(_IdentityTranslations(bundle.model), dataset)
        assert p2g == 0.0
        assert g2p == 0.0

    def test_report_schema_and_determinism(self, synth_small, default_run):
        split = split_folds(synth_small.records, folds=5, seed=0)[0]
        report = alignment_report(default_run.checkpoint_path, split.test)
        assert set(report) == {"pathology_to_genomics", "genomics_to_pathology", "count"}
        for direction in ("pathology_to_genomics", "genomics_to_pathology"):
            assert set(report[direction]) == {"trained", "initial"}
            assert report[direction]["trained"] >= 0.0
            assert report[direction]["initial"] > 0.0
        again = alignment_report(default_run.checkpoint_path, split.test)
        assert again == report

    def test_requires_complete_records(self, synth_small, default_run, tmp_path):
        months = [5.0, 12.0, 33.0, 47.0]
        records = _handmade_records(tmp_path, months, with_pathology=False)
        with pytest.raises(DataError, match="no complete records"):
            alignment_report(default_run.checkpoint_path, records)
