"""Synthetic protocols, scores and embeddings with known separability.

Scores: targets ~ N(+d_sv/2, 1), nontargets ~ N(-d_sv/2, 1) and spoofs
~ N(d_sv/2 - d_spf, 1), so the SV and SPF pairs each have EER
Phi(-d/2) for their own d'. Embeddings: speaker vectors are
``d_sv * centre(speaker) + N(0, I)`` with orthonormal centres (while the
speaker count allows), spoofs mimic their claimed speaker, and CM
vectors sit at ``+-d_spf/2`` along one random axis plus N(0, I) noise.
"""

import logging
import math
from dataclasses import dataclass
from typing import Final

import numpy as np

from .data_verification import ValidationError
from .embedding_store import EmbeddingStore, EmbeddingStores
from .portable_rng import PortableRng
from .protocol import BONAFIDE, BONAFIDE_ALIASES, EnrollmentMap, Trial, TrialProtocol, TrialType, UtteranceLabel
from .score_io import SCORE_SIGNIFICANT_DIGITS, ScoreRecord, ScoreSet

logger = logging.getLogger(__name__)

# ASVspoof 2019 LA evaluation attack IDs
LA_EVAL_ATTACKS: Final = tuple(f"A{n:02d}" for n in range(7, 20))

_STREAM_PROTOCOL = 10
_STREAM_SCORES = {TrialType.TARGET: 11, TrialType.NONTARGET: 12, TrialType.SPOOF: 13}
_STREAM_CENTERS = 20
_STREAM_SPK_NOISE = 21
_STREAM_CM_AXIS = 22
_STREAM_CM_NOISE = 23


@dataclass(frozen=True)
class SynthSpec:
    n_target: int = 1000
    n_nontarget: int = 1000
    n_spoof: int = 1000
    dprime_sv: float = 2.0
    dprime_spf: float = 2.0
    spk_dim: int = 8
    cm_dim: int = 4
    seed: int = 0
    n_speakers: int = 4
    n_enrollment: int = 3
    attack_types: tuple[str, ...] = LA_EVAL_ATTACKS

    def __post_init__(self) -> None:
        object.__setattr__(self, "attack_types", tuple(self.attack_types))

        for name in ("n_target", "n_nontarget", "n_spoof", "seed"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("spk_dim", "cm_dim", "n_speakers", "n_enrollment"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.n_nontarget > 0 and self.n_speakers < 2:
            raise ValidationError("Nontarget trials need at least 2 speakers")
        if not self.attack_types or any(a in BONAFIDE_ALIASES for a in self.attack_types):
            raise ValidationError(f"Invalid attack types: {self.attack_types}")

    def check_scorable(self) -> None:
        if self.n_target < 1 or self.n_nontarget + self.n_spoof < 1:
            raise ValidationError("Synthetic protocol needs a target trial and at least one nontarget or spoof trial")


@dataclass(frozen=True)
class _SynthTrials:
    protocol: TrialProtocol
    # per trial, in protocol order
    true_speakers: tuple[str, ...]
    local_index: tuple[int, ...]


@dataclass(frozen=True)
class SyntheticEmbeddings:
    protocol: TrialProtocol
    stores: EmbeddingStores
    labels: dict[str, UtteranceLabel]


def speaker_ids(spec: SynthSpec) -> list[str]:
    return [f"SYN_S{k:04d}" for k in range(spec.n_speakers)]

def _synth_trials(spec: SynthSpec) -> _SynthTrials:
    spec.check_scorable()
    rng = PortableRng(spec.seed).spawn(_STREAM_PROTOCOL)
    speakers = speaker_ids(spec)
    n_spk = spec.n_speakers

    # (trial type, claimed speaker, true speaker, attack, index within type)
    rows: list[tuple[TrialType, int, int, str, int]] = []
    rows += [(TrialType.TARGET, i % n_spk, i % n_spk, BONAFIDE, i) for i in range(spec.n_target)]

    if spec.n_nontarget:
        offsets = 1 + np.floor(rng.uniform(spec.n_nontarget) * (n_spk - 1)).astype(int)
        rows += [(TrialType.NONTARGET, i % n_spk, (i % n_spk + int(offsets[i])) % n_spk, BONAFIDE, i)
                 for i in range(spec.n_nontarget)]

    rows += [(TrialType.SPOOF, i % n_spk, i % n_spk, spec.attack_types[i % len(spec.attack_types)], i)
             for i in range(spec.n_spoof)]

    order = rng.permutation(len(rows))
    trials, true_speakers, local_index = [], [], []
    for position, row in enumerate(order.tolist()):
        trial_type, claimed, true, attack, index = rows[row]
        trials.append(Trial(speakers[claimed], f"SYN_T_{position:07d}", attack, trial_type))
        true_speakers.append(speakers[true])
        local_index.append(index)

    enrollment = EnrollmentMap({
        speaker: tuple(f"SYN_E_{k:04d}_{m:02d}" for m in range(spec.n_enrollment))
        for k, speaker in enumerate(speakers)
    })
    return _SynthTrials(TrialProtocol(tuple(trials), enrollment), tuple(true_speakers), tuple(local_index))

def _round_scores(values: np.ndarray) -> list[float]:
    return [float(f"{v:.{SCORE_SIGNIFICANT_DIGITS}g}") for v in values.tolist()]

def synth_scores(spec: SynthSpec) -> tuple[TrialProtocol, ScoreSet]:
    synth = _synth_trials(spec)
    root = PortableRng(spec.seed)

    means = {
        TrialType.TARGET: spec.dprime_sv / 2.0,
        TrialType.NONTARGET: -spec.dprime_sv / 2.0,
        TrialType.SPOOF: spec.dprime_sv / 2.0 - spec.dprime_spf,
    }
    counts = {TrialType.TARGET: spec.n_target, TrialType.NONTARGET: spec.n_nontarget, TrialType.SPOOF: spec.n_spoof}
    drawn = {
        trial_type: _round_scores(root.spawn(_STREAM_SCORES[trial_type]).normal(counts[trial_type], means[trial_type]))
        for trial_type in TrialType
    }

    records = tuple(
        ScoreRecord(trial, drawn[trial.trial_type][index])
        for trial, index in zip(synth.protocol, synth.local_index, strict=True)
    )
    logger.debug(f"Synthetic scores: {len(records)} trials, d'_sv {spec.dprime_sv}, d'_spf {spec.dprime_spf}")
    return synth.protocol, ScoreSet(records)

def _unit(vector: np.ndarray) -> np.ndarray:
    return vector / math.sqrt(math.fsum(vector * vector))

def _speaker_centers(spec: SynthSpec, rng: PortableRng) -> np.ndarray:
    """Unit centres, one row per speaker, mutually orthogonal while n_speakers <= spk_dim.

    Gram-Schmidt with correctly rounded sums, so the centres are bit-identical on every platform.
    """
    raw = rng.normal(spec.n_speakers * spec.spk_dim).reshape(spec.n_speakers, spec.spk_dim)
    if spec.n_speakers > spec.spk_dim:
        return np.array([_unit(row) for row in raw])

    centers: list[np.ndarray] = []
    for row in raw:
        vector = row.copy()
        for center in centers:
            vector -= math.fsum(vector * center) * center
        centers.append(_unit(vector))
    return np.array(centers)

def synth_embeddings(spec: SynthSpec) -> SyntheticEmbeddings:
    synth = _synth_trials(spec)
    root = PortableRng(spec.seed)
    speakers = speaker_ids(spec)
    speaker_row = {s: k for k, s in enumerate(speakers)}

    labels: dict[str, UtteranceLabel] = {}
    assert synth.protocol.enrollment is not None
    for speaker in speakers:
        for utt in synth.protocol.enrollment[speaker]:
            labels[utt] = UtteranceLabel(speaker, bonafide=True)
    for trial, true_speaker in zip(synth.protocol, synth.true_speakers, strict=True):
        labels[trial.test_utterance] = UtteranceLabel(true_speaker, bonafide=trial.is_bonafide)

    utts = list(labels)
    centers = _speaker_centers(spec, root.spawn(_STREAM_CENTERS))
    spk_noise = root.spawn(_STREAM_SPK_NOISE).normal(len(utts) * spec.spk_dim).reshape(len(utts), spec.spk_dim)
    spk_vectors = spec.dprime_sv * centers[[speaker_row[labels[u].speaker] for u in utts]] + spk_noise

    axis = root.spawn(_STREAM_CM_AXIS).normal(spec.cm_dim)
    axis = _unit(axis)
    sign = np.array([1.0 if labels[u].bonafide else -1.0 for u in utts])
    cm_noise = root.spawn(_STREAM_CM_NOISE).normal(len(utts) * spec.cm_dim).reshape(len(utts), spec.cm_dim)
    cm_vectors = (spec.dprime_spf / 2.0) * sign[:, None] * axis[None, :] + cm_noise

    stores = EmbeddingStores(
        speaker=EmbeddingStore(spec.spk_dim, dict(zip(utts, spk_vectors))),
        cm=EmbeddingStore(spec.cm_dim, dict(zip(utts, cm_vectors))),
    )
    logger.debug(f"Synthetic embeddings: {len(utts)} utterances, {spec.n_speakers} speakers")
    return SyntheticEmbeddings(synth.protocol, stores, labels)
