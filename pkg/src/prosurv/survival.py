"""Discrete-time survival mathematics.

Follow-up time is cut into ``num_bins`` right-open intervals and a model
predicts one conditional event probability (hazard) per interval.  This
module owns the interval binning, the hazard-to-survival transform, the
censoring-aware negative log-likelihood, scalar risk scores, and
Harrell-style concordance evaluation.

Hazards are clamped to ``[HAZARD_EPS, 1 - HAZARD_EPS]`` before any log is
taken, so the likelihood is finite for any prediction in ``[0, 1]``.
Interval indices are 0-based throughout; a censorship flag of 1 means the
event was not observed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

HAZARD_EPS = 1e-7


@dataclass(frozen=True)
class BinEdges:
    """Interior cut points (in months) between survival intervals.

    ``num_bins`` intervals need ``num_bins - 1`` strictly increasing edges;
    the last interval extends to infinity.
    """

    edges: tuple[float, ...]
    num_bins: int

    def __post_init__(self) -> None:
        if self.num_bins < 2:
            raise ValueError("need at least 2 intervals")
        if len(self.edges) != self.num_bins - 1:
            raise ValueError(
                f"{self.num_bins} intervals need {self.num_bins - 1} edges, "
                f"got {len(self.edges)}"
            )
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("edges must be strictly increasing")

    def assign(self, times) -> np.ndarray:
        """Interval index for each time; the last interval is right-open."""
        times = np.asarray(times, dtype=float)
        return np.searchsorted(np.asarray(self.edges), times, side="right")


@dataclass(frozen=True)
class SurvivalLabel:
    """Observed follow-up in months, censoring flag, and interval index."""

    months: float
    censorship: int
    bin: int

    def __post_init__(self) -> None:
        if not self.months > 0:
            raise ValueError(f"months must be positive, got {self.months}")
        if self.censorship not in (0, 1):
            raise ValueError(f"censorship must be 0 or 1, got {self.censorship}")
        if self.bin < 0:
            raise ValueError(f"bin index must be non-negative, got {self.bin}")


def assign_bins(times, censorships, num_bins: int) -> tuple[BinEdges, np.ndarray]:
    """Quantile-bin follow-up times into ``num_bins`` intervals.

    Interior edges are the (1/K, ..., (K-1)/K) quantiles of the uncensored
    event times only, so censored follow-up never shifts the grid; censored
    samples are still assigned an interval by comparison against the edges.
    """
    times = np.asarray(times, dtype=float)
    censorships = np.asarray(censorships, dtype=int)
    if times.shape != censorships.shape:
        raise ValueError("times and censorships must have matching shapes")
    if num_bins < 2:
        raise ValueError("need at least 2 intervals")
    event_times = times[censorships == 0]
    if np.unique(event_times).size < num_bins:
        raise ValueError(
            "degenerate binning: need at least "
            f"{num_bins} distinct uncensored event times, "
            f"got {np.unique(event_times).size}"
        )
    quantiles = np.arange(1, num_bins) / num_bins
    cuts = np.quantile(event_times, quantiles)
    if np.any(np.diff(cuts) <= 0):
        raise ValueError("degenerate binning: quantile edges are not distinct")
    edges = BinEdges(tuple(float(c) for c in cuts), num_bins)
    return edges, edges.assign(times)


def make_labels(times, censorships, edges: BinEdges) -> list[SurvivalLabel]:
    """Build one label per sample with bins assigned from ``edges``."""
    bins = edges.assign(times)
    return [
        SurvivalLabel(float(t), int(c), int(b))
        for t, c, b in zip(np.asarray(times), np.asarray(censorships), bins)
    ]


def clamp_hazards(hazards: Tensor) -> Tensor:
    """Clamp per-interval hazards away from {0, 1} so logs stay finite."""
    return hazards.clamp(HAZARD_EPS, 1.0 - HAZARD_EPS)


def hazards_to_survival(hazards: Tensor) -> Tensor:
    """Survival curve S(k) = prod_{u <= k} (1 - h(u)) over the last axis."""
    return torch.cumprod(1.0 - clamp_hazards(hazards), dim=-1)


def nll_loss(hazards: Tensor, label: SurvivalLabel) -> Tensor:
    """Censoring-aware negative log-likelihood of one sample.

    An observed event in interval b pays for surviving the earlier
    intervals and for the event itself; a censored sample only pays for
    surviving every interval up to and including b.
    """
    num_bins = hazards.shape[-1]
    if not label.bin < num_bins:
        raise ValueError(f"bin {label.bin} out of range for {num_bins} intervals")
    h = clamp_hazards(hazards)
    log_keep = torch.log1p(-h)
    if label.censorship == 1:
        return -log_keep[..., : label.bin + 1].sum(dim=-1)
    return -(torch.log(h[..., label.bin]) + log_keep[..., : label.bin].sum(dim=-1))


def risk_score(hazards: Tensor) -> Tensor:
    """Scalar risk as the negated area under the discrete survival curve."""
    return -hazards_to_survival(hazards).sum(dim=-1)


def concordance_index(risks, times, censorships) -> float:
    """Fraction of comparable ordered pairs ranked correctly by risk.

    A pair (i, j) is comparable when times[i] < times[j] and sample i is
    uncensored; it scores 1 if risks[i] > risks[j], 0.5 on a risk tie and
    0 otherwise.  Samples with tied times are never comparable.
    """
    risks = np.asarray(risks, dtype=float)
    times = np.asarray(times, dtype=float)
    censorships = np.asarray(censorships, dtype=int)
    if not risks.shape == times.shape == censorships.shape:
        raise ValueError("risks, times and censorships must have matching shapes")
    comparable = (times[:, None] < times[None, :]) & (censorships[:, None] == 0)
    num_comparable = int(comparable.sum())
    if num_comparable == 0:
        raise ValueError("no comparable pairs")
    credit = np.where(
        risks[:, None] > risks[None, :],
        1.0,
        np.where(risks[:, None] == risks[None, :], 0.5, 0.0),
    )
    return float(credit[comparable].sum() / num_comparable)
