"""SV-EER, SPF-EER and SASV-EER over subsets of a scored protocol.

Decision rule everywhere: a trial is accepted iff ``score >= threshold``.
FAR is the accepted fraction of negatives, FRR the rejected fraction of
positives. The EER is the crossing of the two step curves, taken by
linear interpolation between the pair of ROC points that brackets the
sign change of FAR - FRR (or read directly at an exact tie).
"""

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from enum import StrEnum
from types import MappingProxyType
from typing import Final

import numpy as np

from .data_verification import ValidationError
from .protocol import TrialProtocol, TrialType
from .score_io import ScoreSet, validate_against_protocol
from .score_table import ScoreTable

logger = logging.getLogger(__name__)


class Metric(StrEnum):
    SV = "SV-EER"
    SPF = "SPF-EER"
    SASV = "SASV-EER"


# Positives are always target trials; negatives per metric.
NEGATIVE_TYPES: Final = {
    Metric.SV: frozenset({TrialType.NONTARGET}),
    Metric.SPF: frozenset({TrialType.SPOOF}),
    Metric.SASV: frozenset({TrialType.NONTARGET, TrialType.SPOOF}),
}


@dataclass(frozen=True)
class LabeledScores:
    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self) -> None:
        for name in ("positives", "negatives"):
            values = np.array(getattr(self, name), dtype=np.float64).ravel()
            if values.size == 0:
                raise ValidationError(f"No {name} to score")
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"Non-finite value among {name}")
            values.flags.writeable = False
            object.__setattr__(self, name, values)

    @property
    def n_positive(self) -> int:
        return int(self.positives.size)

    @property
    def n_negative(self) -> int:
        return int(self.negatives.size)


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    n_positive: int
    n_negative: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.eer <= 1.0:
            raise ValidationError(f"EER out of [0, 1]: {self.eer}")


@dataclass(frozen=True)
class EerReport:
    sasv: EerResult
    # None when the protocol has no trials on that metric's negative side
    sv: EerResult | None
    spf: EerResult | None
    per_attack: Mapping[str, EerResult]

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_attack", MappingProxyType(dict(self.per_attack)))

    def get(self, metric: Metric) -> EerResult | None:
        return {Metric.SV: self.sv, Metric.SPF: self.spf, Metric.SASV: self.sasv}[metric]


def _roc_arrays(scores: LabeledScores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    positives = np.sort(scores.positives, kind='stable')
    negatives = np.sort(scores.negatives, kind='stable')
    candidates = np.unique(np.concatenate((positives, negatives)))

    rejected_positives = np.searchsorted(positives, candidates, side='left')
    accepted_negatives = negatives.size - np.searchsorted(negatives, candidates, side='left')

    thresholds = np.concatenate(([-np.inf], candidates, [np.inf]))
    far = np.concatenate(([1.0], accepted_negatives / negatives.size, [0.0]))
    frr = np.concatenate(([0.0], rejected_positives / positives.size, [1.0]))
    return thresholds, far, frr

def roc_points(scores: LabeledScores) -> list[tuple[float, float, float]]:
    """(threshold, FAR, FRR) for every distinct observed score plus the -inf/+inf sentinels."""
    thresholds, far, frr = _roc_arrays(scores)
    return [(float(t), float(a), float(r)) for t, a, r in zip(thresholds, far, frr, strict=True)]

def det_points(scores: LabeledScores) -> list[tuple[float, float]]:
    _, far, frr = _roc_arrays(scores)
    return [(float(a), float(r)) for a, r in zip(far, frr, strict=True)]

def rates_at(scores: LabeledScores, threshold: float) -> tuple[float, float]:
    """(FAR, FRR) at an arbitrary threshold."""
    far = int(np.count_nonzero(scores.negatives >= threshold)) / scores.n_negative
    frr = int(np.count_nonzero(scores.positives < threshold)) / scores.n_positive
    return far, frr

def _interpolated_threshold(low: float, high: float, alpha: float) -> float:
    if np.isinf(high):
        return low
    if np.isinf(low):
        return high
    return low + alpha * (high - low)

def eer(scores: LabeledScores) -> EerResult:
    thresholds, far, frr = _roc_arrays(scores)
    diff = far - frr

    ties = np.flatnonzero(diff == 0.0)
    if ties.size:
        i = int(ties[0])
        return EerResult(float(far[i]), float(thresholds[i]), scores.n_positive, scores.n_negative)

    # diff is non-increasing from +1 to -1; k is the first point past the crossing
    k = int(np.argmax(diff < 0.0))
    j = k - 1
    alpha = diff[j] / (diff[j] - diff[k])
    rate = far[j] + alpha * (far[k] - far[j])
    threshold = _interpolated_threshold(float(thresholds[j]), float(thresholds[k]), float(alpha))

    return EerResult(float(rate), threshold, scores.n_positive, scores.n_negative)

def labeled_scores(table: ScoreTable, metric: Metric) -> LabeledScores | None:
    negatives = table.scores_for(NEGATIVE_TYPES[metric])
    if negatives.size == 0:
        return None
    return LabeledScores(table.scores_for({TrialType.TARGET}), negatives)

def evaluate(scores: ScoreSet, protocol: TrialProtocol) -> EerReport:
    report = validate_against_protocol(scores, protocol)
    if not report.is_empty:
        raise ValidationError(
            f"Score file does not match protocol ({len(report.missing)} missing, "
            f"{len(report.extra)} extra, {len(report.mismatched)} mismatched)",
            report=report,
        )

    table = scores.table()
    results: dict[Metric, EerResult | None] = {}
    for metric in Metric:
        labeled = labeled_scores(table, metric)
        if labeled is None:
            logger.warning(f"{metric} undefined: no trials on the negative side")
            results[metric] = None
        else:
            results[metric] = eer(labeled)

    targets = table.scores_for({TrialType.TARGET})
    per_attack = {
        attack: eer(LabeledScores(targets, spoofs))
        for attack, spoofs in table.scores_by_attack().items()
    }

    sasv = results[Metric.SASV]
    assert sasv is not None
    return EerReport(sasv=sasv, sv=results[Metric.SV], spf=results[Metric.SPF], per_attack=per_attack)

def relative_reduction(reference_eer: float, eer_value: float) -> float:
    """Fractional EER reduction relative to a reference system."""
    if reference_eer == 0.0:
        raise ValidationError("Reference EER is zero, relative reduction undefined")
    return (reference_eer - eer_value) / reference_eer
