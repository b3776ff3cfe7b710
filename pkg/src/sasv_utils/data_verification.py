import math
import re

# identifiers are single whitespace-free tokens
_TOKEN_RE = re.compile(r'^\S+$')


class SasvError(Exception):
    pass

class ParseError(SasvError):

    def __init__(self, message: str, *, source: str = "<stream>", line: int | None = None,
                 column: int | None = None) -> None:
        self.message = message
        self.source = source
        self.line = line
        self.column = column
        super().__init__(str(self))

    def __str__(self) -> str:
        location = self.source
        if self.line is not None:
            location += f":{self.line}"
            if self.column is not None:
                location += f":{self.column}"
        return f"{location}: {self.message}"

class ValidationError(SasvError):

    def __init__(self, message: str, report: object | None = None, field: str | None = None) -> None:
        super().__init__(message)
        self.report = report
        # name of the offending field, when a single one is to blame
        self.field = field

class EmbeddingError(SasvError):
    pass

class TrainingError(SasvError):
    pass


def _validate_identifier(value: str, field: str) -> None:
    if not value:
        raise ValidationError(f"Empty {field}!", field=field)
    if not _TOKEN_RE.match(value):
        raise ValidationError(f"Whitespace in {field}: {value!r}", field=field)

def _validate_attack_consistency(attack_type: str, is_spoof: bool, bonafide_tokens: frozenset[str]) -> None:
    # bonafide <=> target/nontarget, attack id <=> spoof
    if (attack_type in bonafide_tokens) == is_spoof:
        raise ValidationError(f"bonafide/spoof inconsistency: attack type {attack_type!r}", field="attack_type")

def _validate_finite(value: float, field: str) -> None:
    if not math.isfinite(value):
        raise ValidationError(f"Non-finite {field}: {value!r}", field=field)

def _validate_rate(value: float, field: str) -> None:
    _validate_finite(value, field)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{field} out of [0, 1]: {value!r}", field=field)

def validate_trial_fields(speaker_model: str, test_utterance: str, attack_type: str,
                          is_spoof: bool, bonafide_tokens: frozenset[str]) -> bool:

    _validate_identifier(speaker_model, "speaker_model")

    _validate_identifier(test_utterance, "test_utterance")

    _validate_identifier(attack_type, "attack_type")

    _validate_attack_consistency(attack_type, is_spoof, bonafide_tokens)

    return True

def validate_score(score: float) -> bool:
    _validate_finite(score, "score")
    return True

def validate_rates(**rates: float) -> bool:
    for field, value in rates.items():
        _validate_rate(value, field)
    return True
