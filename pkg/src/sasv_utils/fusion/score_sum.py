"""Score-sum fusion of ASV and CM subsystem scores."""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from ..data_verification import ValidationError
from ..score_io import ScoreRecord, ScoreSet

logger = logging.getLogger(__name__)


class NormalizerKind(StrEnum):
    NONE = "none"
    MINMAX = "minmax"


class SourceNormalizer(ABC):
    _name: str | None = None

    @abstractmethod
    def __call__(self, score: float) -> float: ...

    def __repr__(self):
        return f"{self.__class__.__name__}({self.__dict__})"

    def get_name(self) -> str | None:
        return self._name


class IdentityNormalizer(SourceNormalizer):
    _name = NormalizerKind.NONE

    def __call__(self, score: float) -> float:
        return score


class MinMaxNormalizer(SourceNormalizer):
    _name = NormalizerKind.MINMAX

    def __init__(self, min_score: float, max_score: float) -> None:
        if not max_score > min_score:
            raise ValidationError(f"Degenerate min-max normalizer: max {max_score} <= min {min_score}")
        self.min_score = min_score
        self.max_score = max_score

    def __call__(self, score: float) -> float:
        return (score - self.min_score) / (self.max_score - self.min_score)

    @classmethod
    def fit(cls, scores: ScoreSet) -> "MinMaxNormalizer":
        values = np.asarray(scores.scores(), dtype=np.float64)
        if values.size == 0:
            raise ValidationError("Cannot fit a min-max normalizer on an empty score set")
        return cls(float(values.min()), float(values.max()))


@dataclass(frozen=True)
class ScoreNormalizer:
    """Per-source normalizers applied before summing."""

    kind: NormalizerKind
    asv: SourceNormalizer
    cm: SourceNormalizer

    @classmethod
    def none(cls) -> "ScoreNormalizer":
        return cls(NormalizerKind.NONE, IdentityNormalizer(), IdentityNormalizer())


def fit_normalizer(kind: NormalizerKind | str, asv: ScoreSet, cm: ScoreSet) -> ScoreNormalizer:
    kind = NormalizerKind(kind)
    if kind is NormalizerKind.NONE:
        return ScoreNormalizer.none()

    logger.warning("Min-max normalization is an extension of the plain score-sum baseline")
    return ScoreNormalizer(kind, MinMaxNormalizer.fit(asv), MinMaxNormalizer.fit(cm))

def score_sum(asv: ScoreSet, cm: ScoreSet, normalizer: ScoreNormalizer | None = None) -> ScoreSet:
    """Per trial: N_asv(asv score) + N_cm(cm score), in ASV row order."""
    normalizer = normalizer or ScoreNormalizer.none()
    cm_by_key = cm.by_key()

    asv_keys = {r.trial.key for r in asv}
    if asv_keys != set(cm_by_key):
        only_asv = len(asv_keys - set(cm_by_key))
        only_cm = len(set(cm_by_key) - asv_keys)
        raise ValidationError(f"ASV and CM trial sets differ ({only_asv} only in ASV, {only_cm} only in CM)")

    records = []
    for record in asv:
        cm_record = cm_by_key[record.trial.key]
        if cm_record.trial != record.trial:
            raise ValidationError(f"Trial metadata differs between ASV and CM scores: "
                                  f"{' '.join(record.trial.fields())} vs {' '.join(cm_record.trial.fields())}")
        fused = normalizer.asv(record.score) + normalizer.cm(cm_record.score)
        records.append(ScoreRecord(record.trial, float(fused)))

    return ScoreSet(tuple(records))
