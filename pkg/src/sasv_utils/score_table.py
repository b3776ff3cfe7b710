"""Tabular view of scored trials using Polars DataFrame."""

from collections.abc import Iterable, Sequence

import numpy as np
import polars as pl

from .protocol import Trial, TrialProtocol, TrialType

KEY_COLUMNS = ["speaker_model", "test_utterance"]
SCHEMA = {
    "row": pl.UInt32,
    "speaker_model": pl.Utf8,
    "test_utterance": pl.Utf8,
    "attack_type": pl.Utf8,
    "trial_type": pl.Utf8,
    "score": pl.Float64,
}


class ScoreTable:
    """Scored (or unscored) trials in a DataFrame, one row per trial, input order kept in ``row``."""

    def __init__(self, df: pl.DataFrame) -> None:
        self.df = df

    @classmethod
    def from_trials(cls, trials: Sequence[Trial], scores: Sequence[float] | None = None) -> "ScoreTable":
        if scores is not None and len(scores) != len(trials):
            raise ValueError(f"{len(trials)} trials but {len(scores)} scores")

        columns = {
            "row": list(range(len(trials))),
            "speaker_model": [t.speaker_model for t in trials],
            "test_utterance": [t.test_utterance for t in trials],
            "attack_type": [t.attack_type for t in trials],
            "trial_type": [t.trial_type.value for t in trials],
            "score": list(scores) if scores is not None else [None] * len(trials),
        }
        return cls(pl.DataFrame(columns, schema=SCHEMA))

    @classmethod
    def from_protocol(cls, protocol: TrialProtocol) -> "ScoreTable":
        return cls.from_trials(protocol.trials)

    @classmethod
    def from_records(cls, records: Iterable) -> "ScoreTable":
        records = list(records)
        return cls.from_trials([r.trial for r in records], [r.score for r in records])

    @property
    def height(self) -> int:
        return self.df.height

    def scores_for(self, trial_types: Iterable[TrialType]) -> np.ndarray:
        """Scores of every trial whose type is in ``trial_types``, in row order."""
        wanted = [t.value for t in trial_types]
        selected = self.df.filter(pl.col("trial_type").is_in(wanted))
        return selected.get_column("score").to_numpy().astype(np.float64, copy=False)

    def scores_by_attack(self) -> dict[str, np.ndarray]:
        """Spoof-trial scores grouped by attack type, attack types sorted."""
        grouped = (
            self.df.filter(pl.col("trial_type") == TrialType.SPOOF.value)
            .group_by("attack_type", maintain_order=True)
            .agg(pl.col("score"))
            .sort("attack_type")
        )
        return {attack: np.asarray(scores, dtype=np.float64) for attack, scores in grouped.iter_rows()}

    def missing_from(self, other: "ScoreTable") -> pl.DataFrame:
        """Rows of this table whose trial key does not appear in ``other``."""
        return self.df.join(other.df.select(KEY_COLUMNS), on=KEY_COLUMNS, how="anti").sort("row")

    def metadata_mismatches(self, other: "ScoreTable") -> pl.DataFrame:
        """Trials present in both tables whose attack or trial type differ."""
        joined = self.df.join(
            other.df.select([*KEY_COLUMNS, "attack_type", "trial_type"]),
            on=KEY_COLUMNS,
            how="inner",
            suffix="_other",
        )
        return joined.filter(
            (pl.col("attack_type") != pl.col("attack_type_other"))
            | (pl.col("trial_type") != pl.col("trial_type_other")),
        ).sort("row")

    def summary(self) -> pl.DataFrame:
        """Trial and attack counts per trial type."""
        return (
            self.df.group_by("trial_type")
            .agg(pl.len().alias("trials"), pl.col("attack_type").n_unique().alias("attack_types"))
            .sort("trial_type")
        )


def rows_to_trials(df: pl.DataFrame, suffix: str = "") -> list[Trial]:
    return [
        Trial(speaker_model, test_utterance, attack_type, TrialType(trial_type))
        for speaker_model, test_utterance, attack_type, trial_type in df.select(
            "speaker_model", "test_utterance", f"attack_type{suffix}", f"trial_type{suffix}",
        ).iter_rows()
    ]
