"""Three-embedding MLP back-end: [enrol, test, cm] -> P(bona fide target).

Hidden layers use a leaky rectifier (slope 0.01), the output a logistic
unit. Training minimizes mean binary cross-entropy with plain mini-batch
gradient descent; every random choice comes from the seeded portable
generator, so identical (config, data) give bit-identical parameters.
"""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Final, TextIO

import numpy as np

from ..data_verification import EmbeddingError, ParseError, TrainingError, ValidationError
from ..embedding_store import EmbeddingStores, enrollment_embedding
from ..portable_rng import PortableRng
from ..protocol import TrialProtocol, TrialType, iter_fields
from ..score_io import ScoreRecord, ScoreSet

logger = logging.getLogger(__name__)

LEAKY_SLOPE: Final = 0.01
MODEL_FORMAT: Final = "sasv-mlp"
MODEL_VERSION: Final = 1
ACTIVATION_TAG: Final = f"leaky_relu {LEAKY_SLOPE} sigmoid"

# sub-streams of the training seed
STREAM_INIT: Final = 1
STREAM_SHUFFLE: Final = 2
STREAM_SAMPLING: Final = 3


@dataclass(frozen=True)
class TrainingConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    hidden_dims: tuple[int, ...] = (256, 128, 64)
    # target : nontarget : spoof; None keeps every candidate pair
    sampling_ratios: tuple[float, float, float] | None = (1.0, 1.0, 2.0)
    max_trials: int | None = None
    # held-out epochs without improvement before stopping
    patience: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.sampling_ratios is not None:
            object.__setattr__(self, "sampling_ratios", tuple(float(r) for r in self.sampling_ratios))

        if self.seed < 0:
            raise ValidationError(f"seed must be non-negative, got {self.seed}")
        for name in ("epochs", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if len(self.hidden_dims) != 3 or min(self.hidden_dims) < 1:
            raise ValidationError(f"hidden_dims must be three positive sizes, got {self.hidden_dims}")
        if self.sampling_ratios is not None and (
            len(self.sampling_ratios) != 3 or min(self.sampling_ratios) < 0 or sum(self.sampling_ratios) == 0
        ):
            raise ValidationError(f"sampling_ratios must be three non-negative weights, got {self.sampling_ratios}")
        if self.max_trials is not None and self.max_trials < 1:
            raise ValidationError(f"max_trials must be positive, got {self.max_trials}")


@dataclass(frozen=True, eq=False)
class MlpBackend:
    layer_dims: tuple[int, ...]
    # weights[i] has shape (layer_dims[i], layer_dims[i + 1]); x @ W + b
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    spk_dim: int
    cm_dim: int

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)

        if len(dims) < 2 or dims[-1] != 1:
            raise ValidationError(f"Invalid layer dimensions {dims}")
        if dims[0] != 2 * self.spk_dim + self.cm_dim:
            raise ValidationError(f"Input dimension {dims[0]} != 2 * {self.spk_dim} + {self.cm_dim}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValidationError("Parameter count does not match layer dimensions")

        weights, biases = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases, strict=True)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValidationError(f"Layer {i} parameters have shapes {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"Non-finite parameters in layer {i}")
            w.flags.writeable = False
            b.flags.writeable = False
            weights.append(w)
            biases.append(b)
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "biases", tuple(biases))

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]


@dataclass
class _Params:
    """Mutable parameter copy used while training."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def of(cls, model: MlpBackend) -> "_Params":
        return cls([w.copy() for w in model.weights], [b.copy() for b in model.biases])

    def freeze(self, model: MlpBackend) -> MlpBackend:
        return MlpBackend(model.layer_dims, tuple(self.weights), tuple(self.biases), model.spk_dim, model.cm_dim)


@dataclass(frozen=True)
class TrainingTrial:
    enrol_utts: tuple[str, ...]
    test_utt: str
    label: int
    trial_type: TrialType = field(default=TrialType.TARGET)


def _leaky_relu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, z, LEAKY_SLOPE * z)

def _leaky_relu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, LEAKY_SLOPE)

def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over='ignore'):
        return 1.0 / (1.0 + np.exp(-z))

def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    # mean of softplus(z) - y * z, stable for large |z|
    return float(np.mean(np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))))

def init_backend(spk_dim: int, cm_dim: int, hidden_dims: Sequence[int], seed: int) -> MlpBackend:
    """Uniform init in +-sqrt(6 / fan_in) drawn row-major per layer; zero biases."""
    dims = (2 * spk_dim + cm_dim, *hidden_dims, 1)
    rng = PortableRng(seed).spawn(STREAM_INIT)

    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform_range(-limit, limit, fan_in * fan_out).reshape(fan_in, fan_out))
        biases.append(np.zeros(fan_out))

    return MlpBackend(dims, tuple(weights), tuple(biases), spk_dim, cm_dim)

def _forward(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Pre-activations and activations of every layer; activations[0] is the input."""
    activations = [x]
    pre_activations = []
    for i, (w, b) in enumerate(zip(weights, biases, strict=True)):
        z = activations[-1] @ w + b
        pre_activations.append(z)
        if i < len(weights) - 1:
            activations.append(_leaky_relu(z))
    return pre_activations, activations

def mlp_forward_batch(model: MlpBackend, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != model.d_in:
        raise EmbeddingError(f"Input dimension {features.shape[1]} != model input {model.d_in}")
    pre_activations, _ = _forward(model.weights, model.biases, features)
    return _sigmoid(pre_activations[-1][:, 0])

def mlp_forward(model: MlpBackend, enrol_emb: np.ndarray, test_emb: np.ndarray, cm_emb: np.ndarray) -> float:
    enrol_emb, test_emb, cm_emb = (np.asarray(v, dtype=np.float64).ravel() for v in (enrol_emb, test_emb, cm_emb))
    if enrol_emb.size != model.spk_dim or test_emb.size != model.spk_dim or cm_emb.size != model.cm_dim:
        raise EmbeddingError(
            f"Embedding sizes ({enrol_emb.size}, {test_emb.size}, {cm_emb.size}) do not match "
            f"model ({model.spk_dim}, {model.spk_dim}, {model.cm_dim})",
        )
    return float(mlp_forward_batch(model, np.concatenate((enrol_emb, test_emb, cm_emb)))[0])

def _loss_and_gradients(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                        x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    pre_activations, activations = _forward(weights, biases, x)
    logits = pre_activations[-1][:, 0]
    loss = _bce_from_logits(logits, y)

    delta = ((_sigmoid(logits) - y) / x.shape[0])[:, None]
    grad_w: list[np.ndarray] = [np.empty(0)] * len(weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(weights)

    for i in range(len(weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * _leaky_relu_grad(pre_activations[i - 1])

    return loss, grad_w, grad_b

def mlp_loss_and_gradients(model: MlpBackend, features: np.ndarray,
                           labels: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean binary cross-entropy and its gradients w.r.t. every weight matrix and bias vector."""
    return _loss_and_gradients(model.weights, model.biases,
                               np.atleast_2d(np.asarray(features, dtype=np.float64)),
                               np.asarray(labels, dtype=np.float64).ravel())

def build_features(pairs: Iterable[tuple[Sequence[str], str]], stores: EmbeddingStores) -> np.ndarray:
    """[mean enrollment, test speaker, test CM] rows for (enrollment utterances, test utterance) pairs."""
    enrolled: dict[tuple[str, ...], np.ndarray] = {}
    rows = []
    for enrol_utts, test_utt in pairs:
        key = tuple(enrol_utts)
        if key not in enrolled:
            enrolled[key] = enrollment_embedding(stores.enrol_store, key)
        rows.append(np.concatenate((enrolled[key], stores.speaker[test_utt], stores.cm[test_utt])))

    if not rows:
        return np.zeros((0, 2 * stores.spk_dim + stores.cm_dim))
    return np.vstack(rows)

def protocol_training_trials(protocol: TrialProtocol) -> list[TrainingTrial]:
    """Labelled trials from a protocol with enrollment: 1 for target, 0 otherwise."""
    if protocol.enrollment is None:
        raise ValidationError("Protocol has no enrollment map")
    return [
        TrainingTrial(protocol.enrollment[t.speaker_model], t.test_utterance,
                      int(t.trial_type is TrialType.TARGET), t.trial_type)
        for t in protocol
    ]

def _trial_arrays(trials: Sequence[TrainingTrial], stores: EmbeddingStores) -> tuple[np.ndarray, np.ndarray]:
    features = build_features(((t.enrol_utts, t.test_utt) for t in trials), stores)
    labels = np.array([t.label for t in trials], dtype=np.float64)
    return features, labels

def mlp_train(trials: Sequence[TrainingTrial], stores: EmbeddingStores, config: TrainingConfig,
              held_out: Sequence[TrainingTrial] | None = None) -> MlpBackend:
    if not trials:
        raise TrainingError("Empty training trial list")

    features, labels = _trial_arrays(trials, stores)
    model = init_backend(stores.spk_dim, stores.cm_dim, config.hidden_dims, config.seed)
    params = _Params.of(model)

    held_features = held_labels = None
    if held_out:
        held_features, held_labels = _trial_arrays(held_out, stores)

    shuffle_rng = PortableRng(config.seed).spawn(STREAM_SHUFFLE)
    n = features.shape[0]
    best_loss = np.inf
    best_params = _Params.of(model)
    stale_epochs = 0

    logger.info(f"Training on {n} trials ({int(labels.sum())} positive), layers {model.layer_dims}")

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0

        for batch, start in enumerate(range(0, n, config.batch_size), start=1):
            index = order[start:start + config.batch_size]
            loss, grad_w, grad_b = _loss_and_gradients(params.weights, params.biases, features[index], labels[index])

            if not np.isfinite(loss):
                raise TrainingError(f"Non-finite loss {loss} at epoch {epoch}, batch {batch} "
                                    f"(learning rate {config.learning_rate})")

            for i in range(len(params.weights)):
                params.weights[i] -= config.learning_rate * grad_w[i]
                params.biases[i] -= config.learning_rate * grad_b[i]

            epoch_loss += loss * index.size

        message = f"epoch {epoch}/{config.epochs}: train loss {epoch_loss / n:.6f}"

        if held_features is not None:
            held_loss, _, _ = _loss_and_gradients(params.weights, params.biases, held_features, held_labels)
            message += f", held-out loss {held_loss:.6f}"
            if held_loss < best_loss:
                best_loss = held_loss
                best_params = _Params([w.copy() for w in params.weights], [b.copy() for b in params.biases])
                stale_epochs = 0
            else:
                stale_epochs += 1

        logger.info(message)

        if held_features is not None and stale_epochs >= config.patience:
            logger.info(f"Held-out loss did not improve for {stale_epochs} epochs, stopping at epoch {epoch}")
            break

    if held_features is not None:
        params = best_params

    return params.freeze(model)

def backend_score(model: MlpBackend, protocol: TrialProtocol, stores: EmbeddingStores) -> ScoreSet:
    if protocol.enrollment is None:
        raise ValidationError("Back-end scoring needs an enrollment map")
    if stores.spk_dim != model.spk_dim or stores.cm_dim != model.cm_dim:
        raise EmbeddingError(f"Store dimensions ({stores.spk_dim}, {stores.cm_dim}) do not match "
                             f"model ({model.spk_dim}, {model.cm_dim})")

    features = build_features(((protocol.enrollment[t.speaker_model], t.test_utterance) for t in protocol), stores)
    # each distinct input row is evaluated once
    unique_rows, inverse = np.unique(features, axis=0, return_inverse=True)
    scores = mlp_forward_batch(model, unique_rows)[inverse.ravel()]
    return ScoreSet(tuple(ScoreRecord(trial, float(s)) for trial, s in zip(protocol, scores, strict=True)))


def _format_values(values: np.ndarray) -> str:
    return " ".join(f"{float(v):.17g}" for v in values.ravel())

def write_model(model: MlpBackend, sink: TextIO) -> None:
    sink.write(f"{MODEL_FORMAT} {MODEL_VERSION}\n")
    sink.write(f"layer_dims {' '.join(str(d) for d in model.layer_dims)}\n")
    sink.write(f"input_split {model.spk_dim} {model.spk_dim} {model.cm_dim}\n")
    sink.write(f"activation {ACTIVATION_TAG}\n")
    for i, (w, b) in enumerate(zip(model.weights, model.biases, strict=True)):
        sink.write(f"weights {i} {_format_values(w)}\n")
        sink.write(f"bias {i} {_format_values(b)}\n")

def parse_model(text_stream: Iterable[str], source: str = "<stream>") -> MlpBackend:
    lines = list(iter_fields(text_stream))

    def expect(position: int, keyword: str) -> tuple[int, list[str]]:
        if position >= len(lines):
            raise ParseError(f"unexpected end of model file, expected {keyword!r}", source=source)
        line_number, fields = lines[position]
        if fields[0] != keyword:
            raise ParseError(f"expected {keyword!r}, found {fields[0]!r}", source=source, line=line_number, column=1)
        return line_number, fields[1:]

    def numbers(line_number: int, tokens: list[str], kind: type) -> list:
        try:
            return [kind(t) for t in tokens]
        except ValueError as err:
            raise ParseError(str(err), source=source, line=line_number) from None

    line_number, version = expect(0, MODEL_FORMAT)
    if version != [str(MODEL_VERSION)]:
        raise ParseError(f"unsupported model format version {' '.join(version)}", source=source, line=line_number)

    line_number, tokens = expect(1, "layer_dims")
    dims = numbers(line_number, tokens, int)

    line_number, tokens = expect(2, "input_split")
    split = numbers(line_number, tokens, int)
    if len(split) != 3 or split[0] != split[1]:
        raise ParseError("input_split must be 'spk spk cm'", source=source, line=line_number)

    line_number, tokens = expect(3, "activation")
    if " ".join(tokens) != ACTIVATION_TAG:
        raise ParseError(f"unsupported activation {' '.join(tokens)!r}", source=source, line=line_number)

    weights, biases = [], []
    position = 4
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        for keyword, shape, store in (("weights", (fan_in, fan_out), weights), ("bias", (fan_out,), biases)):
            line_number, tokens = expect(position, keyword)
            position += 1
            if not tokens or tokens[0] != str(i):
                raise ParseError(f"expected {keyword} of layer {i}", source=source, line=line_number, column=2)
            values = numbers(line_number, tokens[1:], float)
            if len(values) != int(np.prod(shape)):
                raise ParseError(f"{keyword} {i}: expected {int(np.prod(shape))} values, found {len(values)}",
                                 source=source, line=line_number)
            store.append(np.array(values, dtype=np.float64).reshape(shape))

    if position != len(lines):
        raise ParseError("trailing content after last layer", source=source, line=lines[position][0])

    try:
        return MlpBackend(tuple(dims), tuple(weights), tuple(biases), split[0], split[2])
    except ValidationError as err:
        raise ParseError(str(err), source=source) from None

def load_model(path: Path | str) -> MlpBackend:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_model(handle, source=path.name)

def save_model(model: MlpBackend, path: Path | str) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        write_model(model, handle)
