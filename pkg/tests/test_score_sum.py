import io
import logging

import pytest
from sasv_utils.data_verification import ValidationError
from sasv_utils.fusion.score_sum import (
    IdentityNormalizer,
    MinMaxNormalizer,
    NormalizerKind,
    ScoreNormalizer,
    fit_normalizer,
    score_sum,
)
from sasv_utils.metrics import evaluate
from sasv_utils.portable_rng import PortableRng
from sasv_utils.protocol import Trial, TrialType, parse_protocol
from sasv_utils.score_io import ScoreRecord, ScoreSet, scored_copy
from sasv_utils.synthetic import SynthSpec, synth_scores


@pytest.fixture
def protocol():
    return parse_protocol(io.StringIO(
        "S1 T1 bonafide target\n"
        "S1 N1 bonafide nontarget\n"
        "S1 P1 A07 spoof\n"
    ))

@pytest.fixture
def synthetic():
    return synth_scores(SynthSpec(n_target=300, n_nontarget=200, n_spoof=200, seed=12))


def test_score_sum_adds_per_trial(protocol):
    asv = scored_copy(protocol, lambda t: 0.5)
    cm = scored_copy(protocol, lambda t: 0.3)
    fused = score_sum(asv, cm)
    assert fused.scores() == [0.5 + 0.3] * 3
    assert fused.trials() == asv.trials()

def test_score_sum_follows_asv_order(protocol):
    asv = scored_copy(protocol, lambda t: float(len(t.test_utterance)))
    cm = ScoreSet(tuple(reversed(scored_copy(protocol, lambda t: 1.0).records)))
    assert score_sum(asv, cm).trials() == list(protocol.trials)

def test_zero_cm_reproduces_asv_eers(synthetic):
    protocol, asv = synthetic
    cm = scored_copy(protocol, lambda t: 0.0)
    assert evaluate(score_sum(asv, cm), protocol) == evaluate(asv, protocol)

def test_score_sum_is_commutative(synthetic):
    protocol, asv = synthetic
    noise = iter(PortableRng(13).normal(len(protocol)).tolist())
    cm = scored_copy(protocol, lambda t: next(noise))
    assert score_sum(asv, cm).scores() == score_sum(cm, asv).scores()

def test_score_sum_rejects_different_trial_sets(protocol):
    asv = scored_copy(protocol, lambda t: 0.0)
    cm = ScoreSet(asv.records[:2])
    with pytest.raises(ValidationError, match="trial sets differ"):
        score_sum(asv, cm)

def test_score_sum_rejects_metadata_mismatch(protocol):
    asv = scored_copy(protocol, lambda t: 0.0)
    changed = tuple(
        ScoreRecord(Trial("S1", "P1", "A08", TrialType.SPOOF), r.score) if r.trial.test_utterance == "P1" else r
        for r in asv
    )
    with pytest.raises(ValidationError, match="metadata differs"):
        score_sum(asv, ScoreSet(changed))

@pytest.mark.parametrize("score, expected", [(-1.0, 0.0), (1.0, 1.0), (0.0, 0.5)])
def test_minmax_normalizer(score, expected):
    fitted = MinMaxNormalizer.fit(ScoreSet((
        ScoreRecord(Trial("S", "a", "bonafide", TrialType.TARGET), -1.0),
        ScoreRecord(Trial("S", "b", "bonafide", TrialType.NONTARGET), 0.25),
        ScoreRecord(Trial("S", "c", "A07", TrialType.SPOOF), 1.0),
    )))
    assert fitted(score) == expected

def test_degenerate_minmax_is_rejected(protocol):
    with pytest.raises(ValidationError, match="Degenerate"):
        MinMaxNormalizer(1.0, 1.0)
    constant = scored_copy(protocol, lambda t: 2.0)
    with pytest.raises(ValidationError):
        fit_normalizer(NormalizerKind.MINMAX, constant, constant)

def test_fit_normalizer_kinds(synthetic, caplog):
    _, scores = synthetic
    plain = fit_normalizer("none", scores, scores)
    assert plain.kind is ScoreNormalizer.none().kind
    assert isinstance(plain.asv, IdentityNormalizer) and isinstance(plain.cm, IdentityNormalizer)

    with caplog.at_level(logging.WARNING):
        normalizer = fit_normalizer("minmax", scores, scores)
    assert normalizer.kind is NormalizerKind.MINMAX
    assert normalizer.asv.get_name() == "minmax"
    assert "Min-max" in caplog.text

def test_minmax_keeps_standalone_eers(synthetic):
    protocol, scores = synthetic
    normalizer = MinMaxNormalizer.fit(scores)
    by_key = scores.by_key()
    normalized = scored_copy(protocol, lambda t: normalizer(by_key[t.key].score))

    before, after = evaluate(scores, protocol), evaluate(normalized, protocol)
    assert after.sasv.eer == pytest.approx(before.sasv.eer, abs=1e-12)
    assert after.sv.eer == pytest.approx(before.sv.eer, abs=1e-12)
    assert after.spf.eer == pytest.approx(before.spf.eer, abs=1e-12)
