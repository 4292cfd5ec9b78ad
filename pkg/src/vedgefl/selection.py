"""Label sharing and deadline/data-quality vehicle selection."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .core import DataQuality, LabelHistogram, compute_emd
from .errors import DomainError

# Maximum tolerated EMD per dataset and Dirichlet concentration.
EMD_THRESHOLDS: dict[str, dict[float, float]] = {
    "cifar10": {0.1: 1.5, 0.3: 1.2, 0.5: 1.0, 1.0: 0.8},
    "cifar100": {0.1: 1.5, 0.3: 1.2, 0.5: 1.0, 1.0: 0.8},
    "gtsrb": {0.1: 1.5, 0.3: 1.3, 0.5: 1.2, 1.0: 1.0},
}


def default_emd_threshold(dataset: str, alpha: float) -> float:
    """Table lookup; concentrations off the table snap to the nearest key in log scale."""
    try:
        table = EMD_THRESHOLDS[dataset.lower()]
    except KeyError:
        raise DomainError(f"no EMD threshold table for dataset {dataset!r}") from None
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    key = min(table, key=lambda a: abs(math.log(a) - math.log(alpha)))
    return table[key]


@dataclass(frozen=True)
class SelectionConfig:
    emd_threshold: float = 1.5
    min_selected: int = 0

    def __post_init__(self):
        if not (0 < self.emd_threshold <= 2):
            raise DomainError("emd_threshold must lie in (0, 2]")
        if self.min_selected < 0:
            raise DomainError("min_selected must be nonnegative")


@dataclass(frozen=True)
class SharedLabels:
    vehicle_id: int
    histogram: LabelHistogram
    quality: DataQuality | None   # None for an empty local dataset
    metadata: Mapping[str, float]


@dataclass(frozen=True)
class Candidate:
    vehicle_id: int
    emd: float | None
    t_hold: float
    deadline: float


@dataclass(frozen=True)
class CandidateReport:
    vehicle_id: int
    emd: float | None
    t_hold: float
    deadline: float
    estimated_latency: float
    selected: bool


def share_labels(vehicles: Iterable[tuple[int, LabelHistogram, Mapping[str, float]]]) -> list[SharedLabels]:
    """Collect histograms and their EMD from every vehicle in coverage."""
    out = []
    seen = set()
    for vid, hist, meta in vehicles:
        if vid in seen:
            raise DomainError(f"duplicate vehicle id {vid}")
        seen.add(vid)
        quality = compute_emd(hist) if hist.total > 0 else None
        out.append(SharedLabels(vid, hist, quality, dict(meta)))
    return out


def is_admissible(estimated_latency: float, deadline: float, emd: float | None, threshold: float) -> bool:
    return emd is not None and estimated_latency <= deadline and emd <= threshold


def select_vehicles(
    candidates: Sequence[Candidate],
    cfg: SelectionConfig,
    latency_estimator: Callable[[int], float],
) -> tuple[list[int], list[CandidateReport], bool]:
    """Keep every candidate that meets its deadline and the EMD tolerance.

    Returns the selected ids, one report per candidate and whether the
    selection fell below ``cfg.min_selected``.
    """
    reports = []
    selected = []
    for c in candidates:
        if c.emd is None:
            est = math.inf
        else:
            est = float(latency_estimator(c.vehicle_id))
        ok = is_admissible(est, c.deadline, c.emd, cfg.emd_threshold)
        reports.append(CandidateReport(c.vehicle_id, c.emd, c.t_hold, c.deadline, est, ok))
        if ok:
            selected.append(c.vehicle_id)
    return selected, reports, len(selected) < cfg.min_selected
