import logging

import pytest
from sasv_utils.fusion.mlp_backend import TrainingConfig
from sasv_utils.fusion.training_trials import build_training_trials
from sasv_utils.protocol import EnrollmentMap, TrialType, UtteranceLabel


@pytest.fixture
def two_speakers():
    return {
        "a1": UtteranceLabel("spkA", True),
        "a2": UtteranceLabel("spkA", True),
        "b1": UtteranceLabel("spkB", True),
        "b2": UtteranceLabel("spkB", True),
    }

@pytest.fixture
def exhaustive():
    return TrainingConfig(sampling_ratios=None)


def test_exhaustive_pairs_of_two_speakers(two_speakers, exhaustive):
    trials = build_training_trials(two_speakers, exhaustive)
    positives = [t for t in trials if t.label == 1]
    negatives = [t for t in trials if t.label == 0]

    assert len(positives) == 2
    assert len(negatives) == 4
    assert {(t.enrol_utts, t.test_utt) for t in positives} == {(("a1",), "a2"), (("b1",), "b2")}
    assert all(t.trial_type is TrialType.NONTARGET for t in negatives)

def test_spoofed_tests_are_always_negative(two_speakers, exhaustive):
    labels = {**two_speakers, "s1": UtteranceLabel("spkA", False), "s2": UtteranceLabel("spkB", False)}
    trials = build_training_trials(labels, exhaustive)
    spoofed = [t for t in trials if t.test_utt in ("s1", "s2")]

    assert len(spoofed) == 4
    assert all(t.label == 0 and t.trial_type is TrialType.SPOOF for t in spoofed)
    # spoofs are paired with bona fide utterances of the speaker they claim
    assert {t.enrol_utts[0][0] for t in spoofed if t.test_utt == "s1"} == {"a"}

def test_sampling_is_deterministic(two_speakers):
    labels = {**two_speakers, **{f"a{i}": UtteranceLabel("spkA", True) for i in range(3, 9)},
              "s1": UtteranceLabel("spkA", False)}
    config = TrainingConfig(seed=7, sampling_ratios=(1.0, 1.0, 2.0))
    assert build_training_trials(labels, config) == build_training_trials(labels, config)

def test_sampling_ratios_are_respected():
    labels = {f"{speaker}{i}": UtteranceLabel(speaker, True) for speaker in ("p", "q", "r") for i in range(6)}
    labels |= {f"x{speaker}{i}": UtteranceLabel(speaker, False) for speaker in ("p", "q", "r") for i in range(20)}

    trials = build_training_trials(labels, TrainingConfig(seed=1, sampling_ratios=(1.0, 1.0, 2.0)))
    counts = {c: sum(1 for t in trials if t.trial_type is c) for c in TrialType}
    # 45 target pairs available, so 45 : 45 : 90
    assert counts == {TrialType.TARGET: 45, TrialType.NONTARGET: 45, TrialType.SPOOF: 90}

def test_max_trials_caps_every_category():
    labels = {f"{speaker}{i}": UtteranceLabel(speaker, True) for speaker in ("p", "q") for i in range(10)}
    trials = build_training_trials(labels, TrainingConfig(sampling_ratios=None, max_trials=38))
    # 90 target and 100 nontarget pairs scaled by 38 / 190
    assert sum(t.label for t in trials) == 18
    assert len(trials) == 38

def test_lonely_speaker_is_reported(two_speakers, exhaustive, caplog):
    labels = {**two_speakers, "c1": UtteranceLabel("spkC", True)}
    with caplog.at_level(logging.WARNING):
        trials = build_training_trials(labels, exhaustive)

    assert "spkC" in caplog.text
    assert sum(t.label for t in trials) == 2

def test_enrolled_speaker_models(two_speakers, exhaustive):
    labels = {**two_speakers, "a3": UtteranceLabel("spkA", True), "s1": UtteranceLabel("spkA", False)}
    enrollment = EnrollmentMap({"spkA": ("a1", "a2"), "spkB": ("b1",)})
    trials = build_training_trials(labels, exhaustive, enrollment)

    by_model = {(t.enrol_utts, t.test_utt): t for t in trials}
    assert by_model[(("a1", "a2"), "a3")].label == 1
    assert by_model[(("a1", "a2"), "b2")].trial_type is TrialType.NONTARGET
    assert by_model[(("a1", "a2"), "s1")].trial_type is TrialType.SPOOF
    assert by_model[(("b1",), "b2")].label == 1
    # enrollment utterances never test their own model, spoofs only test the claimed speaker
    assert (("a1", "a2"), "a1") not in by_model
    assert (("b1",), "s1") not in by_model
