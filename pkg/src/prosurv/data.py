"""Dataset manifests, the binary tensor container, fold splitting, and
per-patient loading.

A dataset is a CSV manifest naming per-patient tensor files: a 2-D patch
feature bag for pathology and a 1-D measurement vector for genomics.
Either path may be empty (the modality is missing for that patient) but
never both.  Tensor files use a small versioned little-endian container
so round trips are bit-exact.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .survival import BinEdges, SurvivalLabel

MANIFEST_HEADER = ["patient_id", "pathology_path", "genomics_path", "months", "censorship"]

TENSOR_MAGIC = b"PSTN"
TENSOR_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4")}
_HEADER = struct.Struct("<4sIBB")


class DataError(Exception):
    """Raised when an input dataset is malformed or inconsistent."""


def write_tensor(path, array) -> None:
    """Write a float32 array in the versioned little-endian container."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, 0, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a container written by :func:`write_tensor`."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from None
    if len(raw) < _HEADER.size or raw[:4] != TENSOR_MAGIC:
        raise DataError(f"{path}: not a tensor file")
    _, version, dtype_code, rank = _HEADER.unpack_from(raw)
    if version != TENSOR_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    if dtype_code not in _DTYPE_CODES:
        raise DataError(f"{path}: unknown dtype code {dtype_code}")
    dims_end = _HEADER.size + 8 * rank
    if len(raw) < dims_end:
        raise DataError(f"{path}: truncated header")
    dims = struct.unpack(f"<{rank}Q", raw[_HEADER.size : dims_end])
    dtype = _DTYPE_CODES[dtype_code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
    payload = raw[dims_end:]
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload length {len(payload)} does not match dims {dims}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


@dataclass(frozen=True)
class ManifestRecord:
    """One patient row: tensor locations plus the survival outcome."""

    patient_id: str
    pathology_path: Path | None
    genomics_path: Path | None
    months: float
    censorship: int

    @property
    def has_pathology(self) -> bool:
        return self.pathology_path is not None

    @property
    def has_genomics(self) -> bool:
        return self.genomics_path is not None

    def drop_pathology(self) -> "ManifestRecord":
        if not self.has_genomics:
            raise DataError(f"{self.patient_id}: cannot drop the only modality")
        return replace(self, pathology_path=None)

    def drop_genomics(self) -> "ManifestRecord":
        if not self.has_pathology:
            raise DataError(f"{self.patient_id}: cannot drop the only modality")
        return replace(self, genomics_path=None)


def load_manifest(path) -> list[ManifestRecord]:
    """Parse a manifest CSV; tensor paths are resolved against its folder."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    records: list[ManifestRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise DataError(f"{path}: bad header {header!r}, expected {MANIFEST_HEADER!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise DataError(
                    f"{path} row {lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}"
                )
            pid, path_cell, gene_cell, months_cell, cens_cell = (c.strip() for c in row)
            if not pid:
                raise DataError(f"{path} row {lineno}: empty patient_id")
            try:
                months = float(months_cell)
                censorship = int(cens_cell)
            except ValueError:
                raise DataError(
                    f"{path} row {lineno}: months/censorship must be numeric, "
                    f"got {months_cell!r}/{cens_cell!r}"
                ) from None
            if not months > 0:
                raise DataError(f"{path} row {lineno}: months must be positive, got {months}")
            if censorship not in (0, 1):
                raise DataError(f"{path} row {lineno}: censorship must be 0 or 1, got {censorship}")
            if not path_cell and not gene_cell:
                raise DataError(f"{path} row {lineno}: every record needs at least one modality")
            records.append(
                ManifestRecord(
                    patient_id=pid,
                    pathology_path=base / path_cell if path_cell else None,
                    genomics_path=base / gene_cell if gene_cell else None,
                    months=months,
                    censorship=censorship,
                )
            )
    if not records:
        raise DataError(f"{path}: no data rows")
    return records


@dataclass
class FoldSplit:
    """One train/val/test partition of the manifest records."""

    train: list[ManifestRecord]
    val: list[ManifestRecord]
    test: list[ManifestRecord]


def split_folds(
    records: Sequence[ManifestRecord],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    folds: int = 5,
    seed: int = 0,
) -> list[FoldSplit]:
    """Deterministic per-fold train/val/test partitions.

    Each fold shuffles with an independent child of the seed sequence and
    cuts at the ratio boundaries (rounded), so every record lands in
    exactly one part per fold.
    """
    if len(records) < folds * 5:
        raise DataError(
            f"too few records: {len(records)} for {folds} folds, need at least {folds * 5}"
        )
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")
    splits = []
    for child in np.random.SeedSequence(seed).spawn(folds):
        rng = np.random.default_rng(child)
        order = rng.permutation(len(records))
        n_train = int(round(ratios[0] * len(records)))
        n_val = int(round(ratios[1] * len(records)))
        splits.append(
            FoldSplit(
                train=[records[i] for i in order[:n_train]],
                val=[records[i] for i in order[n_train : n_train + n_val]],
                test=[records[i] for i in order[n_train + n_val :]],
            )
        )
    return splits


@dataclass
class GeneNormalizer:
    """Per-gene min-max statistics, fitted on the training split only."""

    minimum: np.ndarray
    maximum: np.ndarray

    @classmethod
    def fit(cls, vectors: Iterable[np.ndarray]) -> "GeneNormalizer":
        stack = [np.asarray(v, dtype=np.float64) for v in vectors]
        if not stack:
            raise DataError("no genomic vectors to fit the normalizer on")
        matrix = np.stack(stack)
        return cls(minimum=matrix.min(axis=0), maximum=matrix.max(axis=0))

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Map into [0, 1] with the fitted range; out-of-range values clip."""
        span = self.maximum - self.minimum
        span = np.where(span > 0, span, 1.0)
        scaled = (np.asarray(values, dtype=np.float64) - self.minimum) / span
        return np.clip(scaled, 0.0, 1.0).astype(np.float32)


def _load_bag(record: ManifestRecord) -> np.ndarray:
    bag = read_tensor(record.pathology_path)
    if bag.ndim != 2 or bag.shape[0] == 0:
        raise DataError(f"{record.patient_id}: patch bag must be 2-D and non-empty")
    if not np.isfinite(bag).all():
        raise DataError(f"{record.patient_id}: non-finite patch features")
    return bag


def _load_genes(record: ManifestRecord) -> np.ndarray:
    genes = read_tensor(record.genomics_path)
    if genes.ndim != 1 or genes.shape[0] == 0:
        raise DataError(f"{record.patient_id}: gene vector must be 1-D and non-empty")
    if not np.isfinite(genes).all():
        raise DataError(f"{record.patient_id}: non-finite gene values")
    return genes


class SurvivalDataset:
    """Pairs manifest records with loaded tensors and survival labels.

    Interval indices come from bin edges fitted elsewhere (normally on the
    training split) and gene vectors are normalized with training-split
    statistics, so validation and test folds never leak into either.
    """

    def __init__(
        self,
        records: Sequence[ManifestRecord],
        edges: BinEdges,
        normalizer: GeneNormalizer | None = None,
    ) -> None:
        self.records = list(records)
        self.edges = edges
        self.normalizer = normalizer
        bins = edges.assign([r.months for r in self.records])
        self.labels = [
            SurvivalLabel(r.months, r.censorship, int(b))
            for r, b in zip(self.records, bins)
        ]

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(
        self, index: int
    ) -> tuple[torch.Tensor | None, torch.Tensor | None, SurvivalLabel, ManifestRecord]:
        record = self.records[index]
        bag = genes = None
        if record.has_pathology:
            bag = torch.from_numpy(_load_bag(record).astype(np.float32))
        if record.has_genomics:
            values = _load_genes(record)
            if self.normalizer is not None:
                values = self.normalizer.apply(values)
            genes = torch.from_numpy(values.astype(np.float32))
        return bag, genes, self.labels[index], record


def peek_dims(records: Sequence[ManifestRecord]) -> tuple[int, int]:
    """Feature widths (pathology, genomics) from the first records carrying
    each modality; errors if a modality is absent from every record."""
    pathology_dim = genomics_dim = None
    for record in records:
        if pathology_dim is None and record.has_pathology:
            pathology_dim = int(_load_bag(record).shape[1])
        if genomics_dim is None and record.has_genomics:
            genomics_dim = int(_load_genes(record).shape[0])
        if pathology_dim is not None and genomics_dim is not None:
            return pathology_dim, genomics_dim
    missing = "pathology" if pathology_dim is None else "genomics"
    raise DataError(f"no record carries {missing} data; cannot size the encoders")
