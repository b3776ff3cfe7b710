"""Trial protocols, enrollment maps and training-pool labels for SASV evaluation."""

import logging
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from types import MappingProxyType
from typing import Final, TextIO

from .data_verification import ParseError, ValidationError, validate_trial_fields

logger = logging.getLogger(__name__)

# Every token accepted as "bona fide" in the attack_type column.
BONAFIDE_ALIASES: Final = frozenset({"bonafide"})
BONAFIDE: Final = "bonafide"
SPOOF_KEY: Final = "spoof"
# 1-based column of each trial field in protocol and score lines
TRIAL_COLUMNS: Final = {"speaker_model": 1, "test_utterance": 2, "attack_type": 3, "trial_type": 4}


class TrialType(StrEnum):
    """Trial-type tokens of the ASV protocol files."""

    TARGET = "target"
    NONTARGET = "nontarget"
    SPOOF = "spoof"

    @classmethod
    def parse(cls, token: str) -> "TrialType":
        try:
            return cls(token)
        except ValueError:
            raise ValidationError(f"Unknown trial type: {token!r}") from None


@dataclass(frozen=True, slots=True)
class Trial:
    speaker_model: str
    test_utterance: str
    attack_type: str
    trial_type: TrialType

    def __post_init__(self) -> None:
        validate_trial_fields(
            self.speaker_model,
            self.test_utterance,
            self.attack_type,
            is_spoof=self.trial_type is TrialType.SPOOF,
            bonafide_tokens=BONAFIDE_ALIASES,
        )

    @property
    def key(self) -> tuple[str, str]:
        return self.speaker_model, self.test_utterance

    @property
    def is_bonafide(self) -> bool:
        return self.trial_type is not TrialType.SPOOF

    def fields(self) -> tuple[str, str, str, str]:
        return self.speaker_model, self.test_utterance, self.attack_type, self.trial_type.value


@dataclass(frozen=True)
class EnrollmentMap:
    """Speaker model -> ordered enrollment utterance IDs."""

    entries: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        frozen = {}
        for speaker, utts in self.entries.items():
            utts = tuple(utts)
            if not utts:
                raise ValidationError(f"Speaker {speaker!r} has no enrollment utterances")
            duplicated = [u for u, n in Counter(utts).items() if n > 1]
            if duplicated:
                raise ValidationError(f"Duplicate enrollment utterance(s) for {speaker!r}: {', '.join(duplicated)}")
            frozen[speaker] = utts
        object.__setattr__(self, "entries", MappingProxyType(frozen))

    def __getitem__(self, speaker_model: str) -> tuple[str, ...]:
        return self.entries[speaker_model]

    def __contains__(self, speaker_model: object) -> bool:
        return speaker_model in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def speakers(self) -> list[str]:
        return list(self.entries)


@dataclass(frozen=True)
class TrialProtocol:
    trials: tuple[Trial, ...]
    enrollment: EnrollmentMap | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "trials", tuple(self.trials))

        if not self.trials:
            raise ValidationError("no trials")

        seen: set[tuple[str, str]] = set()
        for trial in self.trials:
            if trial.key in seen:
                raise ValidationError(f"Duplicate trial: {trial.speaker_model} {trial.test_utterance}")
            seen.add(trial.key)

        counts = Counter(t.trial_type for t in self.trials)
        if counts[TrialType.TARGET] == 0:
            raise ValidationError("Protocol has no target trials")
        if counts[TrialType.NONTARGET] + counts[TrialType.SPOOF] == 0:
            raise ValidationError("Protocol has no nontarget or spoof trials")

        if self.enrollment is not None:
            missing = sorted({t.speaker_model for t in self.trials if t.speaker_model not in self.enrollment})
            if missing:
                raise ValidationError(f"Speaker model(s) without enrollment: {', '.join(missing)}")

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def counts(self) -> dict[TrialType, int]:
        counts = Counter(t.trial_type for t in self.trials)
        return {trial_type: counts[trial_type] for trial_type in TrialType}


@dataclass(frozen=True, slots=True)
class UtteranceLabel:
    """Speaker (claimed speaker for spoofs) and bona fide flag of a training-pool utterance."""

    speaker: str
    bonafide: bool


def iter_fields(text_stream: Iterable[str]) -> Iterable[tuple[int, list[str]]]:
    """Yield (line number, fields) for every non-blank, non-comment line."""
    for line_number, line in enumerate(text_stream, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        yield line_number, stripped.split()

def parse_trial_fields(fields: list[str], *, source: str, line_number: int) -> Trial:
    """Build a Trial from the first four fields of a protocol or score line."""
    try:
        trial_type = TrialType.parse(fields[3])
    except ValidationError as err:
        raise ParseError(str(err), source=source, line=line_number, column=TRIAL_COLUMNS["trial_type"]) from None

    try:
        return Trial(fields[0], fields[1], fields[2], trial_type)
    except ValidationError as err:
        raise ParseError(str(err), source=source, line=line_number, column=TRIAL_COLUMNS.get(err.field)) from None

def parse_protocol(text_stream: Iterable[str], source: str = "<stream>") -> TrialProtocol:
    trials: list[Trial] = []
    seen: dict[tuple[str, str], int] = {}

    for line_number, fields in iter_fields(text_stream):
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, found {len(fields)}", source=source, line=line_number)

        trial = parse_trial_fields(fields, source=source, line_number=line_number)

        if trial.key in seen:
            raise ParseError(f"duplicate trial {trial.speaker_model} {trial.test_utterance} "
                             f"(first seen on line {seen[trial.key]})", source=source, line=line_number)
        seen[trial.key] = line_number
        trials.append(trial)

    try:
        protocol = TrialProtocol(tuple(trials))
    except ValidationError as err:
        raise ParseError(str(err), source=source) from None

    logger.debug(f"{source}: {len(protocol)} trials {dict(protocol.counts())}")
    return protocol

def parse_enrollment_map(text_stream: Iterable[str], source: str = "<stream>") -> EnrollmentMap:
    entries: dict[str, tuple[str, ...]] = {}

    for line_number, fields in iter_fields(text_stream):
        speaker, utts = fields[0], fields[1:]

        if not utts:
            raise ParseError(f"speaker {speaker!r} has no enrollment utterances", source=source, line=line_number)
        if speaker in entries:
            raise ParseError(f"duplicate speaker {speaker!r}", source=source, line=line_number, column=1)

        seen: set[str] = set()
        for column, utt in enumerate(utts, start=2):
            if utt in seen:
                raise ParseError(f"duplicate utterance {utt!r} for speaker {speaker!r}",
                                 source=source, line=line_number, column=column)
            seen.add(utt)

        entries[speaker] = tuple(utts)

    logger.debug(f"{source}: {len(entries)} enrolled speakers")
    return EnrollmentMap(entries)

def parse_utterance_labels(text_stream: Iterable[str], source: str = "<stream>") -> dict[str, UtteranceLabel]:
    labels: dict[str, UtteranceLabel] = {}

    for line_number, fields in iter_fields(text_stream):
        if len(fields) != 3:
            raise ParseError(f"expected 3 fields, found {len(fields)}", source=source, line=line_number)

        utt, speaker, key = fields
        if key not in BONAFIDE_ALIASES and key != SPOOF_KEY:
            raise ParseError(f"unknown label {key!r}", source=source, line=line_number, column=3)
        if utt in labels:
            raise ParseError(f"duplicate utterance {utt!r}", source=source, line=line_number, column=1)

        labels[utt] = UtteranceLabel(speaker=speaker, bonafide=key in BONAFIDE_ALIASES)

    return labels

def attach_enrollment(protocol: TrialProtocol, enrollment: EnrollmentMap) -> TrialProtocol:
    return TrialProtocol(protocol.trials, enrollment)

def subset(protocol: TrialProtocol | Iterable[Trial], types: Iterable[TrialType]) -> list[Trial]:
    wanted = frozenset(types)
    return [trial for trial in protocol if trial.trial_type in wanted]

def write_protocol(trials: TrialProtocol | Iterable[Trial], sink: TextIO) -> None:
    for trial in trials:
        sink.write(" ".join(trial.fields()) + "\n")

def write_enrollment_map(enrollment: EnrollmentMap, sink: TextIO) -> None:
    for speaker, utts in enrollment.entries.items():
        sink.write(" ".join((speaker, *utts)) + "\n")

def write_utterance_labels(labels: Mapping[str, UtteranceLabel], sink: TextIO) -> None:
    for utt, label in labels.items():
        sink.write(f"{utt} {label.speaker} {BONAFIDE if label.bonafide else SPOOF_KEY}\n")

def load_protocol(protocol_path: Path | str, enrollment_path: Path | str | None = None) -> TrialProtocol:
    protocol_path = Path(protocol_path)

    with open(protocol_path, 'r', encoding='utf-8') as handle:
        protocol = parse_protocol(handle, source=protocol_path.name)

    if enrollment_path is None:
        return protocol

    enrollment = load_enrollment_map(enrollment_path)

    try:
        return attach_enrollment(protocol, enrollment)
    except ValidationError as err:
        raise ParseError(str(err), source=Path(enrollment_path).name) from None

def load_enrollment_map(path: Path | str) -> EnrollmentMap:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_enrollment_map(handle, source=path.name)

def load_utterance_labels(path: Path | str) -> dict[str, UtteranceLabel]:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_utterance_labels(handle, source=path.name)
