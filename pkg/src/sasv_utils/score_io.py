"""Challenge score files, submission validation and the six-EER results line."""

import logging
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, fields
from pathlib import Path
from typing import TextIO

from .data_verification import ParseError, ValidationError, validate_rates, validate_score
from .protocol import Trial, TrialProtocol, iter_fields, parse_trial_fields
from .score_table import ScoreTable, rows_to_trials

logger = logging.getLogger(__name__)

SCORE_SIGNIFICANT_DIGITS = 6


@dataclass(frozen=True, slots=True)
class ScoreRecord:
    trial: Trial
    score: float

    def __post_init__(self) -> None:
        validate_score(self.score)


@dataclass(frozen=True)
class ScoreSet:
    records: tuple[ScoreRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        seen: set[tuple[str, str]] = set()
        for record in self.records:
            if record.trial.key in seen:
                raise ValidationError(f"Duplicate scored trial: {record.trial.speaker_model} {record.trial.test_utterance}")
            seen.add(record.trial.key)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def trials(self) -> list[Trial]:
        return [r.trial for r in self.records]

    def scores(self) -> list[float]:
        return [r.score for r in self.records]

    def by_key(self) -> dict[tuple[str, str], ScoreRecord]:
        return {r.trial.key: r for r in self.records}

    def table(self) -> ScoreTable:
        return ScoreTable.from_records(self.records)


@dataclass(frozen=True)
class ResultsSummary:
    """Six EERs as fractions, in results-file order."""

    dev_sasv_eer: float
    dev_sv_eer: float
    dev_spf_eer: float
    eval_sasv_eer: float
    eval_sv_eer: float
    eval_spf_eer: float

    def __post_init__(self) -> None:
        validate_rates(**{f.name: getattr(self, f.name) for f in fields(self)})

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class ValidationReport:
    missing: tuple[Trial, ...] = ()
    extra: tuple[Trial, ...] = ()
    # (protocol trial, submitted trial)
    mismatched: tuple[tuple[Trial, Trial], ...] = ()

    @property
    def is_empty(self) -> bool:
        return not (self.missing or self.extra or self.mismatched)

    def lines(self) -> list[str]:
        lines = [f"missing: {' '.join(t.fields())}" for t in self.missing]
        lines += [f"extra: {' '.join(t.fields())}" for t in self.extra]
        lines += [
            f"mismatch: {expected.speaker_model} {expected.test_utterance} "
            f"expected {expected.attack_type} {expected.trial_type} "
            f"found {found.attack_type} {found.trial_type}"
            for expected, found in self.mismatched
        ]
        return lines


def format_score(score: float) -> str:
    """At most 6 significant digits unless that would not read back as the same float."""
    short = f"{score:.{SCORE_SIGNIFICANT_DIGITS}g}"
    return short if float(short) == score else repr(float(score))

def parse_scores(text_stream: Iterable[str], source: str = "<stream>") -> ScoreSet:
    records: list[ScoreRecord] = []
    seen: dict[tuple[str, str], int] = {}

    for line_number, fields_ in iter_fields(text_stream):
        if len(fields_) != 5:
            raise ParseError(f"expected 5 fields, found {len(fields_)}", source=source, line=line_number)

        trial = parse_trial_fields(fields_, source=source, line_number=line_number)

        try:
            score = float(fields_[4])
        except ValueError:
            raise ParseError(f"unparsable score {fields_[4]!r}", source=source, line=line_number, column=5) from None

        if not math.isfinite(score):
            raise ParseError(f"non-finite score {fields_[4]!r}", source=source, line=line_number, column=5)

        if trial.key in seen:
            raise ParseError(f"duplicate trial {trial.speaker_model} {trial.test_utterance} "
                             f"(first seen on line {seen[trial.key]})", source=source, line=line_number)
        seen[trial.key] = line_number

        records.append(ScoreRecord(trial, score))

    logger.debug(f"{source}: {len(records)} scores")
    return ScoreSet(tuple(records))

def write_scores(scores: ScoreSet, sink: TextIO) -> None:
    for record in scores:
        sink.write(" ".join((*record.trial.fields(), format_score(record.score))) + "\n")

def scored_copy(protocol: TrialProtocol, score_fn: Callable[[Trial], float]) -> ScoreSet:
    return ScoreSet(tuple(ScoreRecord(trial, float(score_fn(trial))) for trial in protocol))

def validate_against_protocol(scores: ScoreSet, protocol: TrialProtocol) -> ValidationReport:
    protocol_table = ScoreTable.from_protocol(protocol)
    score_table = scores.table()

    missing = rows_to_trials(protocol_table.missing_from(score_table))
    extra = rows_to_trials(score_table.missing_from(protocol_table))

    mismatches = protocol_table.metadata_mismatches(score_table)
    mismatched = tuple(zip(rows_to_trials(mismatches), rows_to_trials(mismatches, suffix="_other"), strict=True))

    report = ValidationReport(tuple(missing), tuple(extra), mismatched)
    if not report.is_empty:
        logger.debug(f"Validation: {len(missing)} missing, {len(extra)} extra, {len(mismatched)} mismatched")
    return report

def write_results(summary: ResultsSummary, sink: TextIO) -> None:
    validate_rates(**{f.name: getattr(summary, f.name) for f in fields(summary)})
    sink.write(" ".join(f"{100.0 * value:.2f}" for value in summary.values()) + "\n")

def parse_results(text: str, source: str = "<stream>") -> ResultsSummary:
    values = text.split()
    if len(values) != 6:
        raise ParseError(f"expected 6 EERs, found {len(values)}", source=source, line=1)
    try:
        rates = [float(v) / 100.0 for v in values]
    except ValueError as err:
        raise ParseError(str(err), source=source, line=1) from None
    try:
        return ResultsSummary(*rates)
    except ValidationError as err:
        raise ParseError(str(err), source=source, line=1) from None

def load_scores(path: Path | str) -> ScoreSet:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_scores(handle, source=path.name)

def save_scores(scores: ScoreSet, path: Path | str) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        write_scores(scores, handle)
