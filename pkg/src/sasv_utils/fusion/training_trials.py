"""Labelled (enrollment, test) pairs for training the MLP back-end."""

import logging
from collections import Counter
from collections.abc import Mapping

import numpy as np

from ..portable_rng import PortableRng
from ..protocol import EnrollmentMap, TrialType, UtteranceLabel
from .mlp_backend import STREAM_SAMPLING, TrainingConfig, TrainingTrial

logger = logging.getLogger(__name__)

_CATEGORIES = (TrialType.TARGET, TrialType.NONTARGET, TrialType.SPOOF)


def _pool_pairs(labels: Mapping[str, UtteranceLabel]) -> dict[TrialType, list[tuple[tuple[str, ...], str]]]:
    """Unordered bona fide pairs (single-utterance enrollment) plus spoofs against their claimed speaker."""
    utts = sorted(labels)
    bonafide = [u for u in utts if labels[u].bonafide]
    spoofs = [u for u in utts if not labels[u].bonafide]
    speakers = np.array([labels[u].speaker for u in bonafide])

    first, second = np.triu_indices(len(bonafide), k=1)
    same = speakers[first] == speakers[second]

    pairs: dict[TrialType, list[tuple[tuple[str, ...], str]]] = {c: [] for c in _CATEGORIES}
    for i, j, is_same in zip(first.tolist(), second.tolist(), same.tolist()):
        category = TrialType.TARGET if is_same else TrialType.NONTARGET
        pairs[category].append(((bonafide[i],), bonafide[j]))

    for spoof in spoofs:
        claimed = labels[spoof].speaker
        for enrol in bonafide:
            if labels[enrol].speaker == claimed:
                pairs[TrialType.SPOOF].append(((enrol,), spoof))

    per_speaker = Counter(labels[u].speaker for u in bonafide)
    lonely = sorted(s for s, n in per_speaker.items() if n < 2)
    if lonely:
        logger.warning(f"{len(lonely)} speaker(s) with fewer than 2 bona fide utterances give no positive pairs: "
                       f"{', '.join(lonely)}")
    return pairs

def _enrolled_pairs(labels: Mapping[str, UtteranceLabel],
                    enrollment: EnrollmentMap) -> dict[TrialType, list[tuple[tuple[str, ...], str]]]:
    """Every enrolled speaker model against every pool utterance outside its enrollment list."""
    utts = sorted(labels)
    pairs: dict[TrialType, list[tuple[tuple[str, ...], str]]] = {c: [] for c in _CATEGORIES}
    lonely = []

    for speaker in enrollment.speakers():
        enrol_utts = enrollment[speaker]
        excluded = set(enrol_utts)
        n_targets = 0
        for utt in utts:
            if utt in excluded:
                continue
            label = labels[utt]
            if label.bonafide:
                category = TrialType.TARGET if label.speaker == speaker else TrialType.NONTARGET
                n_targets += category is TrialType.TARGET
            elif label.speaker == speaker:
                category = TrialType.SPOOF
            else:
                continue
            pairs[category].append((enrol_utts, utt))
        if n_targets == 0:
            lonely.append(speaker)

    if lonely:
        logger.warning(f"{len(lonely)} speaker model(s) without bona fide target utterances: {', '.join(lonely)}")
    return pairs

def _quotas(available: dict[TrialType, int], config: TrainingConfig) -> dict[TrialType, int]:
    if config.sampling_ratios is None:
        quotas = dict(available)
    else:
        ratios = dict(zip(_CATEGORIES, config.sampling_ratios))
        usable = [c for c in _CATEGORIES if ratios[c] > 0 and available[c] > 0]
        for c in _CATEGORIES:
            if ratios[c] > 0 and available[c] == 0:
                logger.warning(f"No {c} training pairs available, sampling without them")
        scale = min((available[c] / ratios[c] for c in usable), default=0.0)
        quotas = {c: int(np.floor(scale * ratios[c])) if c in usable else 0 for c in _CATEGORIES}

    total = sum(quotas.values())
    if config.max_trials is not None and total > config.max_trials:
        factor = config.max_trials / total
        quotas = {c: int(np.floor(q * factor)) for c, q in quotas.items()}
    return quotas

def build_training_trials(labels: Mapping[str, UtteranceLabel], config: TrainingConfig,
                          enrollment: EnrollmentMap | None = None) -> list[TrainingTrial]:
    """Label 1 for same-speaker bona fide pairs, 0 for different-speaker and spoofed-test pairs.

    Without an enrollment map every unordered pair of bona fide pool
    utterances is a candidate (one enrolls, the other tests), and every
    spoof is paired with each bona fide utterance of its claimed speaker.
    Candidates are then sampled per category with ``config.sampling_ratios``.
    """
    pairs = _enrolled_pairs(labels, enrollment) if enrollment is not None else _pool_pairs(labels)
    quotas = _quotas({c: len(pairs[c]) for c in _CATEGORIES}, config)

    rng = PortableRng(config.seed).spawn(STREAM_SAMPLING)
    trials: list[TrainingTrial] = []
    for category in _CATEGORIES:
        candidates = pairs[category]
        chosen = np.sort(rng.choice(len(candidates), quotas[category]))
        label = int(category is TrialType.TARGET)
        trials.extend(TrainingTrial(tuple(candidates[i][0]), candidates[i][1], label, category) for i in chosen.tolist())

    logger.info(f"Training trials: {', '.join(f'{c} {quotas[c]}/{len(pairs[c])}' for c in _CATEGORIES)}")
    return trials
