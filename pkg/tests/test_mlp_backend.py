import io
import logging

import numpy as np
import pytest
from sasv_utils.data_verification import EmbeddingError, ParseError, TrainingError, ValidationError
from sasv_utils.embedding_store import EmbeddingStore, EmbeddingStores, cosine_scoring
from sasv_utils.fusion.mlp_backend import (
    LEAKY_SLOPE,
    MlpBackend,
    TrainingConfig,
    backend_score,
    build_features,
    init_backend,
    mlp_forward,
    mlp_forward_batch,
    mlp_loss_and_gradients,
    mlp_train,
    parse_model,
    protocol_training_trials,
    write_model,
)
from sasv_utils.fusion.score_sum import score_sum
from sasv_utils.fusion.training_trials import build_training_trials
from sasv_utils.metrics import evaluate
from sasv_utils.portable_rng import PortableRng
from sasv_utils.protocol import EnrollmentMap, TrialProtocol, TrialType, attach_enrollment, parse_protocol
from sasv_utils.score_io import scored_copy, validate_against_protocol
from sasv_utils.synthetic import SynthSpec, synth_embeddings

TINY_DIMS = (4, 3, 3, 3, 1)


def random_model(rng: PortableRng, dims=TINY_DIMS, spk_dim=1, cm_dim=2) -> MlpBackend:
    weights = tuple(rng.normal(a * b).reshape(a, b) for a, b in zip(dims[:-1], dims[1:]))
    biases = tuple(rng.normal(b, std=0.5) for b in dims[1:])
    return MlpBackend(dims, weights, biases, spk_dim, cm_dim)

def hand_forward(model: MlpBackend, x: list[float]) -> float:
    """Loop-by-loop forward pass."""
    activation = list(x)
    n_layers = len(model.weights)
    for layer in range(n_layers):
        w, b = model.weights[layer].tolist(), model.biases[layer].tolist()
        out = []
        for j in range(len(b)):
            z = b[j] + sum(activation[i] * w[i][j] for i in range(len(activation)))
            if layer < n_layers - 1:
                z = z if z > 0 else LEAKY_SLOPE * z
            out.append(z)
        activation = out
    return float(1.0 / (1.0 + np.exp(-activation[0])))

def flat_loss(model: MlpBackend, features: np.ndarray, labels: np.ndarray) -> float:
    return mlp_loss_and_gradients(model, features, labels)[0]

def with_parameter(model: MlpBackend, kind: str, layer: int, index: tuple, value: float) -> MlpBackend:
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    (weights if kind == "w" else biases)[layer][index] = value
    return MlpBackend(model.layer_dims, tuple(weights), tuple(biases), model.spk_dim, model.cm_dim)


@pytest.fixture(scope="module")
def separable():
    return synth_embeddings(SynthSpec(n_target=200, n_nontarget=200, n_spoof=200, dprime_sv=8.0, dprime_spf=8.0,
                                      spk_dim=8, cm_dim=4, seed=1))

@pytest.fixture(scope="module")
def learning_config():
    return TrainingConfig(seed=4, epochs=100, batch_size=32, learning_rate=0.02, hidden_dims=(64, 32, 16),
                          max_trials=6000)

@pytest.fixture(scope="module")
def held_out(separable):
    """Every second protocol trial; its test utterances never reach training."""
    return TrialProtocol(separable.protocol.trials[1::2], separable.protocol.enrollment)

@pytest.fixture(scope="module")
def trained(separable, held_out, learning_config):
    unseen = {t.test_utterance for t in held_out}
    pool = {utt: label for utt, label in separable.labels.items() if utt not in unseen}
    trials = build_training_trials(pool, learning_config)
    return trials, mlp_train(trials, separable.stores, learning_config)


def test_zero_model_scores_one_half():
    dims = TINY_DIMS
    model = MlpBackend(dims, tuple(np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])),
                       tuple(np.zeros(b) for b in dims[1:]), 1, 2)
    assert mlp_forward(model, [0.3], [-2.0], [1.0, 5.0]) == 0.5

def test_forward_matches_hand_rolled_pass():
    rng = PortableRng(21)
    model = random_model(rng)
    for _ in range(10):
        x = rng.uniform_range(-3.0, 3.0, 4)
        assert mlp_forward(model, x[:1], x[1:2], x[2:]) == pytest.approx(hand_forward(model, x.tolist()), rel=1e-12)

def test_forward_is_order_sensitive():
    model = random_model(PortableRng(22))
    assert mlp_forward(model, [1.0], [-1.0], [0.5, 0.5]) != mlp_forward(model, [-1.0], [1.0], [0.5, 0.5])

def test_forward_checks_dimensions():
    model = random_model(PortableRng(23))
    with pytest.raises(EmbeddingError):
        mlp_forward(model, [1.0, 2.0], [1.0], [0.0, 0.0])
    with pytest.raises(EmbeddingError):
        mlp_forward_batch(model, np.zeros((2, 5)))

def test_forward_stays_finite_on_bounded_inputs():
    rng = PortableRng(24)
    model = init_backend(8, 4, (32, 16, 8), seed=0)
    features = rng.uniform_range(-10.0, 10.0, 200 * model.d_in).reshape(200, model.d_in)
    assert np.all(np.isfinite(mlp_forward_batch(model, features)))

def test_analytic_gradients_match_finite_differences():
    rng = PortableRng(31)
    eps = 1e-5
    worst = 0.0

    for draw in range(20):
        model = random_model(rng.spawn(draw))
        features = rng.spawn(100 + draw).uniform_range(-2.0, 2.0, 5 * 4).reshape(5, 4)
        labels = (rng.spawn(200 + draw).uniform(5) < 0.5).astype(np.float64)
        _, grad_w, grad_b = mlp_loss_and_gradients(model, features, labels)

        for kind, params, grads in (("w", model.weights, grad_w), ("b", model.biases, grad_b)):
            for layer, (param, grad) in enumerate(zip(params, grads)):
                for index in np.ndindex(param.shape):
                    value = float(param[index])
                    plus = flat_loss(with_parameter(model, kind, layer, index, value + eps), features, labels)
                    minus = flat_loss(with_parameter(model, kind, layer, index, value - eps), features, labels)
                    numeric = (plus - minus) / (2 * eps)
                    analytic = float(grad[index])
                    worst = max(worst, abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6))

    assert worst < 1e-4

def test_model_file_round_trip():
    rng = PortableRng(41)
    for instance in range(100):
        draw = rng.spawn(instance)
        spk_dim, cm_dim = 1 + int(draw.uniform(1)[0] * 4), 1 + int(draw.uniform(1)[0] * 3)
        hidden = tuple(1 + int(v * 5) for v in draw.uniform(3))
        model = random_model(draw, (2 * spk_dim + cm_dim, *hidden, 1), spk_dim, cm_dim)

        first = io.StringIO()
        write_model(model, first)
        parsed = parse_model(io.StringIO(first.getvalue()))
        second = io.StringIO()
        write_model(parsed, second)

        assert second.getvalue() == first.getvalue()
        assert all(np.array_equal(a, b) for a, b in zip(parsed.weights, model.weights))
        assert all(np.array_equal(a, b) for a, b in zip(parsed.biases, model.biases))

def test_model_file_header():
    sink = io.StringIO()
    write_model(init_backend(1, 2, (3, 3, 3), seed=0), sink)
    assert sink.getvalue().splitlines()[:4] == [
        "sasv-mlp 1",
        "layer_dims 4 3 3 3 1",
        "input_split 1 1 2",
        "activation leaky_relu 0.01 sigmoid",
    ]

@pytest.mark.parametrize("old, new, message", [
    ("sasv-mlp 1", "sasv-mlp 2", "unsupported model format version"),
    ("activation leaky_relu 0.01 sigmoid", "activation relu", "unsupported activation"),
    ("input_split 1 1 2", "input_split 1 2 2", "input_split"),
    ("bias 3 ", "weights 3 ", "expected 'bias'"),
])
def test_parse_model_errors(old, new, message):
    sink = io.StringIO()
    write_model(init_backend(1, 2, (3, 3, 3), seed=0), sink)
    with pytest.raises(ParseError, match=message):
        parse_model(io.StringIO(sink.getvalue().replace(old, new)))

def test_parse_model_rejects_trailing_content():
    sink = io.StringIO()
    write_model(init_backend(1, 2, (3, 3, 3), seed=0), sink)
    with pytest.raises(ParseError, match="trailing"):
        parse_model(io.StringIO(sink.getvalue() + "bias 4 0.0\n"))

def test_parse_model_skips_comment_lines():
    model = random_model(PortableRng(12))
    sink = io.StringIO()
    write_model(model, sink)
    lines = sink.getvalue().splitlines()
    commented = ["# trained on LA train, seed 12", *lines[:5], "", "# hidden layers", *lines[5:], "# end"]

    parsed = parse_model(io.StringIO("\n".join(commented) + "\n"))
    assert all(np.array_equal(a, b) for a, b in zip(parsed.weights, model.weights))
    assert all(np.array_equal(a, b) for a, b in zip(parsed.biases, model.biases))

def test_backend_rejects_inconsistent_dimensions():
    with pytest.raises(ValidationError, match="Input dimension"):
        MlpBackend((5, 1), (np.zeros((5, 1)),), (np.zeros(1),), 1, 2)

@pytest.mark.parametrize("kwargs", [
    {"hidden_dims": (8, 8)},
    {"learning_rate": -0.1},
    {"epochs": 0},
    {"sampling_ratios": (1.0, 1.0)},
    {"max_trials": 0},
])
def test_training_config_validation(kwargs):
    with pytest.raises(ValidationError):
        TrainingConfig(**kwargs)

def test_training_needs_trials(separable):
    with pytest.raises(TrainingError, match="Empty"):
        mlp_train([], separable.stores, TrainingConfig())

def test_diverging_training_names_epoch_and_batch(separable):
    trials = build_training_trials(separable.labels, TrainingConfig(seed=0, max_trials=200))
    config = TrainingConfig(seed=0, epochs=5, batch_size=16, learning_rate=1e300, hidden_dims=(8, 8, 8), max_trials=200)
    with pytest.raises(TrainingError, match="epoch .*batch"):
        mlp_train(trials, separable.stores, config)

def test_zero_learning_rate_keeps_initial_parameters(separable):
    config = TrainingConfig(seed=9, epochs=2, learning_rate=0.0, hidden_dims=(8, 4, 2), max_trials=300)
    trials = build_training_trials(separable.labels, config)
    model = mlp_train(trials, separable.stores, config)
    initial = init_backend(separable.stores.spk_dim, separable.stores.cm_dim, config.hidden_dims, config.seed)

    assert all(np.array_equal(a, b) for a, b in zip(model.weights, initial.weights))
    assert all(np.array_equal(a, b) for a, b in zip(model.biases, initial.biases))

def test_training_is_deterministic(separable):
    config = TrainingConfig(seed=5, epochs=3, batch_size=16, learning_rate=0.01, hidden_dims=(8, 4, 2), max_trials=400)
    first = mlp_train(build_training_trials(separable.labels, config), separable.stores, config)
    second = mlp_train(build_training_trials(separable.labels, config), separable.stores, config)

    assert all(np.array_equal(a, b) for a, b in zip(first.weights, second.weights))
    assert all(np.array_equal(a, b) for a, b in zip(first.biases, second.biases))

def test_first_epoch_reduces_training_loss(separable):
    config = TrainingConfig(seed=2, epochs=1, batch_size=32, learning_rate=0.01, hidden_dims=(16, 8, 4), max_trials=2000)
    trials = build_training_trials(separable.labels, config)
    features = build_features(((t.enrol_utts, t.test_utt) for t in trials), separable.stores)
    labels = np.array([t.label for t in trials], dtype=np.float64)

    before = init_backend(separable.stores.spk_dim, separable.stores.cm_dim, config.hidden_dims, config.seed)
    after = mlp_train(trials, separable.stores, config)
    assert flat_loss(after, features, labels) < flat_loss(before, features, labels)

def test_backend_learns_separable_embeddings(separable, held_out, trained):
    trials, model = trained
    features = build_features(((t.enrol_utts, t.test_utt) for t in trials), separable.stores)
    labels = np.array([t.label for t in trials])
    accuracy = np.mean((mlp_forward_batch(model, features) >= 0.5) == (labels == 1))
    assert accuracy >= 0.99

    scores = backend_score(model, held_out, separable.stores)
    assert validate_against_protocol(scores, held_out).is_empty
    assert evaluate(scores, held_out).sasv.eer <= 0.01

def test_backend_ignores_cm_scale_that_breaks_score_sum(separable, held_out, trained):
    _, model = trained
    stores, labels = separable.stores, separable.labels

    asv = cosine_scoring(held_out, stores.enrol_store, stores.speaker)
    bonafide = stores.cm.rows(u for u in stores.cm.ids() if labels[u].bonafide).mean(axis=0)
    spoof = stores.cm.rows(u for u in stores.cm.ids() if not labels[u].bonafide).mean(axis=0)
    direction = bonafide - spoof
    # CM scores on a scale 100 times the cosine range
    cm = scored_copy(held_out, lambda t: 100.0 * float(stores.cm[t.test_utterance] @ direction))

    asv_only = evaluate(asv, held_out)
    summed = evaluate(score_sum(asv, cm), held_out)
    learned = evaluate(backend_score(model, held_out, stores), held_out)

    assert summed.sv.eer > asv_only.sv.eer + 0.05
    assert learned.sv.eer <= asv_only.sv.eer + 0.01
    assert learned.sasv.eer < summed.sasv.eer

def test_backend_stays_at_chance_without_separation():
    # test utterances of the first 400 trials train, the rest are scored
    synth = synth_embeddings(SynthSpec(n_target=8000, n_nontarget=4000, n_spoof=4000, dprime_sv=0.0,
                                       dprime_spf=0.0, spk_dim=8, cm_dim=4, seed=5))
    scored = TrialProtocol(synth.protocol.trials[400:], synth.protocol.enrollment)
    unseen = {t.test_utterance for t in scored}
    pool = {utt: label for utt, label in synth.labels.items() if utt not in unseen}

    config = TrainingConfig(seed=6, epochs=5, batch_size=32, learning_rate=0.01, hidden_dims=(16, 8, 4),
                            max_trials=2000)
    model = mlp_train(build_training_trials(pool, config), synth.stores, config)

    report = evaluate(backend_score(model, scored, synth.stores), scored)
    assert report.sasv.eer == pytest.approx(0.5, abs=0.03)

def test_identical_inputs_get_identical_scores(separable, trained):
    _, model = trained
    enrol_utts = separable.protocol.enrollment[separable.protocol.trials[0].speaker_model]
    test_utt = separable.protocol.trials[0].test_utterance
    protocol = attach_enrollment(
        parse_protocol(io.StringIO(f"S1 {test_utt} bonafide target\nS2 {test_utt} bonafide nontarget\n")),
        EnrollmentMap({"S1": enrol_utts, "S2": tuple(reversed(enrol_utts))}),
    )
    first, second = backend_score(model, protocol, separable.stores).scores()
    assert first == second

def test_backend_score_names_missing_embedding(separable, trained):
    _, model = trained
    stores = EmbeddingStores(
        speaker=EmbeddingStore(separable.stores.spk_dim, dict(list(separable.stores.speaker.items())[:-1])),
        cm=separable.stores.cm,
    )
    missing = separable.stores.speaker.ids()[-1]
    with pytest.raises(EmbeddingError, match=missing):
        backend_score(model, separable.protocol, stores)

def test_held_out_patience_stops_training(separable, caplog):
    # with a zero learning rate the held-out loss never improves after the first epoch
    config = TrainingConfig(seed=3, epochs=40, batch_size=16, learning_rate=0.0, hidden_dims=(8, 4, 2),
                            max_trials=300, patience=2)
    trials = build_training_trials(separable.labels, config)
    held_out = protocol_training_trials(separable.protocol)[:100]

    with caplog.at_level(logging.INFO):
        model = mlp_train(trials, separable.stores, config, held_out=held_out)

    assert "stopping at epoch 3" in caplog.text
    assert "epoch 4/40" not in caplog.text
    initial = init_backend(separable.stores.spk_dim, separable.stores.cm_dim, config.hidden_dims, config.seed)
    assert all(np.array_equal(a, b) for a, b in zip(model.weights, initial.weights))

def test_held_out_trials_follow_protocol_labels(separable):
    held_out = protocol_training_trials(separable.protocol)
    assert len(held_out) == len(separable.protocol)
    for trial, labelled in zip(separable.protocol, held_out):
        assert labelled.label == int(trial.trial_type is TrialType.TARGET)
        assert labelled.enrol_utts == separable.protocol.enrollment[trial.speaker_model]
