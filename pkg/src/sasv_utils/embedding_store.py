"""Pre-extracted utterance embeddings, enrollment averaging and cosine ASV scoring."""

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import TextIO

import numpy as np

from .data_verification import EmbeddingError, ParseError, ValidationError
from .protocol import TrialProtocol
from .score_io import ScoreRecord, ScoreSet

logger = logging.getLogger(__name__)

DIM_HEADER = "#dim"


class EmbeddingStore:
    """Utterance ID -> float64 vector of a fixed dimension. Read-only after construction."""

    def __init__(self, dim: int, vectors: Mapping[str, Sequence[float] | np.ndarray]) -> None:
        if dim < 1:
            raise ValidationError(f"Embedding dimension must be positive, got {dim}")

        self.dim = dim
        self._index = {utt: row for row, utt in enumerate(vectors)}
        matrix = np.zeros((len(self._index), dim), dtype=np.float64)

        for utt, row in self._index.items():
            vector = np.asarray(vectors[utt], dtype=np.float64)
            if vector.shape != (dim,):
                raise ValidationError(f"Embedding {utt!r} has shape {vector.shape}, expected ({dim},)")
            if not np.all(np.isfinite(vector)):
                raise ValidationError(f"Non-finite component in embedding {utt!r}")
            matrix[row] = vector

        matrix.flags.writeable = False
        self._matrix = matrix

    def __contains__(self, utt: object) -> bool:
        return utt in self._index

    def __len__(self) -> int:
        return len(self._index)

    def __getitem__(self, utt: str) -> np.ndarray:
        try:
            return self._matrix[self._index[utt]]
        except KeyError:
            raise EmbeddingError(f"No embedding for utterance {utt!r}") from None

    def ids(self) -> list[str]:
        return list(self._index)

    def rows(self, utts: Iterable[str]) -> np.ndarray:
        """Stacked vectors for ``utts``, shape (n, dim)."""
        utts = list(utts)
        missing = [u for u in utts if u not in self._index]
        if missing:
            raise EmbeddingError(f"No embedding for utterance {missing[0]!r}"
                                 + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
        return self._matrix[[self._index[u] for u in utts]]

    def items(self) -> Iterable[tuple[str, np.ndarray]]:
        for utt, row in self._index.items():
            yield utt, self._matrix[row]

    def merged(self, other: "EmbeddingStore") -> "EmbeddingStore":
        """Union of two stores of the same dimension; shared IDs must carry identical vectors."""
        if other.dim != self.dim:
            raise EmbeddingError(f"Cannot merge stores of dimension {self.dim} and {other.dim}")
        vectors: dict[str, np.ndarray] = dict(self.items())
        for utt, vector in other.items():
            if utt in vectors and not np.array_equal(vectors[utt], vector):
                raise EmbeddingError(f"Conflicting embeddings for utterance {utt!r}")
            vectors[utt] = vector
        return EmbeddingStore(self.dim, vectors)


def parse_embeddings(text_stream: Iterable[str], source: str = "<stream>") -> EmbeddingStore:
    dim: int | None = None
    vectors: dict[str, list[float]] = {}

    for line_number, line in enumerate(text_stream, start=1):
        fields = line.split()
        if not fields:
            continue

        if fields[0].startswith('#') and (fields[0] != DIM_HEADER or dim is not None):
            continue

        if dim is None:
            if fields[0] != DIM_HEADER or len(fields) != 2:
                raise ParseError(f"expected header '{DIM_HEADER} D'", source=source, line=line_number)
            try:
                dim = int(fields[1])
            except ValueError:
                raise ParseError(f"invalid dimension {fields[1]!r}", source=source, line=line_number, column=2) from None
            if dim < 1:
                raise ParseError(f"dimension must be positive, got {dim}", source=source, line=line_number, column=2)
            continue

        utt, components = fields[0], fields[1:]
        if len(components) != dim:
            raise ParseError(f"expected {dim} components, found {len(components)}", source=source, line=line_number)
        if utt in vectors:
            raise ParseError(f"duplicate utterance {utt!r}", source=source, line=line_number, column=1)

        vector = []
        for column, token in enumerate(components, start=2):
            try:
                value = float(token)
            except ValueError:
                raise ParseError(f"unparsable component {token!r}", source=source, line=line_number, column=column) from None
            if not math.isfinite(value):
                raise ParseError(f"non-finite component {token!r}", source=source, line=line_number, column=column)
            vector.append(value)
        vectors[utt] = vector

    if dim is None:
        raise ParseError(f"missing '{DIM_HEADER} D' header", source=source)

    logger.debug(f"{source}: {len(vectors)} embeddings of dimension {dim}")
    return EmbeddingStore(dim, vectors)

def write_embeddings(store: EmbeddingStore, sink: TextIO) -> None:
    sink.write(f"{DIM_HEADER} {store.dim}\n")
    for utt, vector in store.items():
        sink.write(" ".join((utt, *(repr(float(v)) for v in vector))) + "\n")

def load_embeddings(path: Path | str) -> EmbeddingStore:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_embeddings(handle, source=path.name)

def save_embeddings(store: EmbeddingStore, path: Path | str) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        write_embeddings(store, handle)

def enrollment_embedding(store: EmbeddingStore, utts: Sequence[str]) -> np.ndarray:
    """Componentwise mean of the enrollment utterances' embeddings."""
    if not utts:
        raise EmbeddingError("Empty enrollment utterance list")
    # sorted so the mean is bit-identical for any ordering of utts
    return store.rows(sorted(utts)).mean(axis=0)

def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)

    if a.shape != b.shape:
        raise EmbeddingError(f"Dimension mismatch: {a.shape} vs {b.shape}")

    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise EmbeddingError("Cosine score of a zero-norm vector")

    return float(np.dot(a, b)) / (norm_a * norm_b)

def cosine_scoring(protocol: TrialProtocol, enrol_store: EmbeddingStore, test_store: EmbeddingStore) -> ScoreSet:
    """ASV scores: cosine between the averaged enrollment and the test embedding of every trial."""
    if protocol.enrollment is None:
        raise ValidationError("Cosine scoring needs an enrollment map")

    enrolled: dict[str, np.ndarray] = {}
    records = []
    for trial in protocol:
        if trial.speaker_model not in enrolled:
            enrolled[trial.speaker_model] = enrollment_embedding(enrol_store, protocol.enrollment[trial.speaker_model])
        records.append(ScoreRecord(trial, cosine_score(enrolled[trial.speaker_model], test_store[trial.test_utterance])))

    return ScoreSet(tuple(records))


class EmbeddingStores:
    """Speaker embeddings (test and, optionally, separate enrollment) plus CM embeddings of test utterances."""

    def __init__(self, speaker: EmbeddingStore, cm: EmbeddingStore, enrollment: EmbeddingStore | None = None) -> None:
        self.speaker = speaker
        self.cm = cm
        self.enrollment = enrollment

    @property
    def enrol_store(self) -> EmbeddingStore:
        return self.enrollment if self.enrollment is not None else self.speaker

    @property
    def spk_dim(self) -> int:
        return self.speaker.dim

    @property
    def cm_dim(self) -> int:
        return self.cm.dim
