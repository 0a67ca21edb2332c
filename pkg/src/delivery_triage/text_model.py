"""Comment normalization, featurization, and the linear text classifier.

The classifier is multinomial logistic regression over counts, TF-IDF, or
averaged word embeddings, trained with mini-batch Adam on softmax
cross-entropy. Feature matrices are sparse; a fitted model is immutable and
safe to share across threads.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .datasets import LabelTaxonomy
from .numerics import AdamState, OptimizerConfig, adam_step, cross_entropy, seeded_rng, softmax

FEATURIZER_KINDS = ("counts", "tfidf", "embedding_average")

# Fixed repair table for UTF-8 text mis-decoded as Latin-1/cp1252. Longest
# patterns first so prefixes ("â€") cannot shadow full sequences.
_MOJIBAKE_TABLE = (
    ("â€™", "'"),
    ("â€˜", "'"),
    ("â€œ", '"'),
    ("â€\x9d", '"'),
    ("â€“", "-"),
    ("â€”", "-"),
    ("â€¦", "..."),
    ("â€", '"'),
    ("Ã©", "e"),
    ("Ã¨", "e"),
    ("Ã\xa0", "a"),
    ("Â", ""),
)


def normalize(comment: str) -> list[str]:
    """Repair mojibake, lowercase, strip punctuation, split on whitespace.

    Apostrophes and hyphens survive only between alphanumerics, so
    contractions and compounds stay single tokens.
    """
    for bad, good in _MOJIBAKE_TABLE:
        comment = comment.replace(bad, good)
    comment = comment.lower()
    chars = list(comment)
    for i, ch in enumerate(chars):
        if ch.isalnum() or ch.isspace():
            continue
        if ch in "'-":
            prev_ok = i > 0 and chars[i - 1].isalnum()
            next_ok = i + 1 < len(chars) and chars[i + 1].isalnum()
            if prev_ok and next_ok:
                continue
        chars[i] = " "
    return "".join(chars).split()


@dataclass(frozen=True)
class Vocabulary:
    """Token index plus the document frequencies behind the idf weights."""

    token_to_index: dict[str, int]
    document_frequency: dict[str, int]
    total_documents: int

    def __post_init__(self):
        indices = sorted(self.token_to_index.values())
        if indices != list(range(len(indices))):
            raise ValueError("token indices must be dense 0..V-1")
        for token, df in self.document_frequency.items():
            if df > self.total_documents:
                raise ValueError(f"df({token!r}) exceeds total documents")

    def __len__(self) -> int:
        return len(self.token_to_index)

    def idf(self, token: str) -> float:
        df = self.document_frequency[token]
        return float(np.log((1.0 + self.total_documents) / (1.0 + df)) + 1.0)


def fit_vocabulary(token_docs: list[list[str]], min_df: int = 2) -> Vocabulary:
    """Learn the token index from tokenized documents.

    Tokens in fewer than min_df documents are dropped; surviving tokens get
    indices in lexicographic order so refits are reproducible.
    """
    if not token_docs:
        raise ValueError("empty corpus: no documents to fit a vocabulary on")
    df: dict[str, int] = {}
    for tokens in token_docs:
        for token in set(tokens):
            df[token] = df.get(token, 0) + 1
    kept = sorted(t for t, n in df.items() if n >= min_df)
    if not kept:
        raise ValueError(f"no tokens appear in at least {min_df} documents")
    return Vocabulary(
        token_to_index={t: i for i, t in enumerate(kept)},
        document_frequency={t: df[t] for t in kept},
        total_documents=len(token_docs),
    )


def counts_vector(tokens: list[str], vocab: Vocabulary) -> sp.csr_array:
    """Raw in-document counts over the vocabulary, shape (1, V)."""
    data: dict[int, float] = {}
    for token in tokens:
        idx = vocab.token_to_index.get(token)
        if idx is not None:
            data[idx] = data.get(idx, 0.0) + 1.0
    cols = sorted(data)
    return sp.csr_array(
        ([data[c] for c in cols], ([0] * len(cols), cols)),
        shape=(1, len(vocab)),
        dtype=np.float64,
    )


def tfidf_vector(tokens: list[str], vocab: Vocabulary) -> sp.csr_array:
    """L2-normalized tf-idf over the vocabulary, shape (1, V).

    idf(t) = ln((1+N)/(1+df(t))) + 1; out-of-vocabulary tokens are ignored
    and an all-OOV document yields the zero vector.
    """
    vec = counts_vector(tokens, vocab)
    inverse = {i: t for t, i in vocab.token_to_index.items()}
    vec.data *= np.asarray([vocab.idf(inverse[c]) for c in vec.indices], dtype=np.float64)
    norm = float(np.sqrt((vec.data**2).sum()))
    if norm > 0.0:
        vec.data /= norm
    return vec


def embedding_average(tokens: list[str], table: dict[str, np.ndarray]) -> np.ndarray:
    """Mean embedding of in-table tokens; zero vector when none match."""
    if not table:
        raise ValueError("embedding table is empty")
    dim = len(next(iter(table.values())))
    hits = [table[t] for t in tokens if t in table]
    if not hits:
        return np.zeros(dim, dtype=np.float64)
    return np.mean(np.asarray(hits, dtype=np.float64), axis=0)


def load_embedding_table(path) -> dict[str, np.ndarray]:
    """Parse a word-vector text file: one 'token v1 v2 ... vD' line per token."""
    table: dict[str, np.ndarray] = {}
    dim: int | None = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        token, values = parts[0], parts[1:]
        if not values:
            raise ValueError(f"{path}:{lineno}: no vector components")
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise ValueError(f"{path}:{lineno}: expected {dim} components, found {len(values)}")
        try:
            table[token] = np.asarray([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad float: {exc}") from exc
    if not table:
        raise ValueError(f"{path}: empty embedding table")
    return table


@dataclass
class TextModel:
    """A fitted linear classifier plus everything needed to featurize."""

    featurizer: str
    taxonomy: LabelTaxonomy
    weights: np.ndarray  # (classes, features)
    bias: np.ndarray  # (classes,)
    vocabulary: Vocabulary | None = None
    embedding_table: dict[str, np.ndarray] | None = None
    epoch_losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.featurizer not in FEATURIZER_KINDS:
            raise ValueError(f"unknown featurizer {self.featurizer!r}")
        if self.weights.shape[0] != len(self.taxonomy.classes):
            raise ValueError("weight rows must match taxonomy class count")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError("bias length must match weight rows")
        if self.featurizer in ("counts", "tfidf") and self.vocabulary is None:
            raise ValueError(f"{self.featurizer} featurizer requires a vocabulary")
        if self.featurizer == "embedding_average" and not self.embedding_table:
            raise ValueError("embedding_average featurizer requires an embedding table")

    def featurize(self, comment: str):
        tokens = normalize(comment)
        if self.featurizer == "embedding_average":
            return embedding_average(tokens, self.embedding_table).reshape(1, -1)
        if self.featurizer == "counts":
            return counts_vector(tokens, self.vocabulary)
        return tfidf_vector(tokens, self.vocabulary)


@dataclass
class EvalReport:
    """Overall accuracy, per-class recall, and a gold-by-predicted matrix."""

    accuracy: float
    per_class_accuracy: dict[str, float]
    confusion_matrix: np.ndarray
    classes: tuple[str, ...]


def text_loss_and_gradient(
    weights: np.ndarray, bias: np.ndarray, features, labels: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy and its exact gradient for one batch.

    `features` may be a dense array or a sparse matrix of shape (n, F).
    Kept as a standalone function so the gradient can be finite-difference
    checked without running the optimizer.
    """
    n = features.shape[0]
    logits = features @ weights.T + bias
    logits = np.asarray(logits, dtype=np.float64)
    probs = np.vstack([softmax(row) for row in logits])
    loss = float(np.mean([cross_entropy(probs[i], int(labels[i])) for i in range(n)]))
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grad_w = np.asarray((features.T @ delta).T, dtype=np.float64)
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


def _feature_matrix(model_kind: str, token_docs, vocab, table):
    if model_kind == "embedding_average":
        return np.vstack([embedding_average(t, table).reshape(1, -1) for t in token_docs])
    builder = counts_vector if model_kind == "counts" else tfidf_vector
    return sp.vstack([builder(t, vocab) for t in token_docs], format="csr")


def train_text(
    records,
    featurizer: str = "tfidf",
    optimizer: OptimizerConfig | None = None,
    epochs: int = 20,
    batch_size: int = 32,
    seed: int = 0,
    taxonomy: LabelTaxonomy | None = None,
    min_df: int = 2,
    embedding_table: dict[str, np.ndarray] | None = None,
) -> TextModel:
    """Fit the classifier with mini-batch Adam; deterministic per seed."""
    if featurizer not in FEATURIZER_KINDS:
        raise ValueError(f"unknown featurizer {featurizer!r}")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if featurizer == "embedding_average" and not embedding_table:
        raise ValueError("embedding_average requires an embedding table")
    taxonomy = taxonomy or LabelTaxonomy()
    optimizer = optimizer or OptimizerConfig(l2_penalty=1e-4)

    labels = np.asarray([taxonomy.index_of(r.label) for r in records], dtype=np.int64)
    present = set(labels.tolist())
    for i, name in enumerate(taxonomy.classes):
        if i not in present:
            raise ValueError(f"class {name!r} absent from training data")

    token_docs = [normalize(r.comment) for r in records]
    vocab = None
    if featurizer in ("counts", "tfidf"):
        vocab = fit_vocabulary(token_docs, min_df=min_df)
    features = _feature_matrix(featurizer, token_docs, vocab, embedding_table)

    n, n_features = features.shape
    n_classes = len(taxonomy.classes)
    weights = np.zeros((n_classes, n_features), dtype=np.float64)
    bias = np.zeros(n_classes, dtype=np.float64)
    state_w = AdamState.zeros(weights.shape)
    state_b = AdamState.zeros(bias.shape)
    bias_config = dataclasses.replace(optimizer, l2_penalty=0.0)

    rng = seeded_rng(seed)
    epoch_losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            loss, grad_w, grad_b = text_loss_and_gradient(
                weights, bias, features[batch], labels[batch]
            )
            total += loss * len(batch)
            weights, state_w = adam_step(weights, grad_w, state_w, optimizer)
            bias, state_b = adam_step(bias, grad_b, state_b, bias_config)
        epoch_losses.append(total / n)

    return TextModel(
        featurizer=featurizer,
        taxonomy=taxonomy,
        weights=weights,
        bias=bias,
        vocabulary=vocab,
        embedding_table=embedding_table,
        epoch_losses=epoch_losses,
    )


def predict_text(model: TextModel, comment: str) -> tuple[str, np.ndarray]:
    """Class name plus the full softmax distribution; ties pick the lowest index."""
    features = model.featurize(comment)
    logits = np.asarray(features @ model.weights.T + model.bias, dtype=np.float64).ravel()
    probs = softmax(logits)
    return model.taxonomy.classes[int(np.argmax(probs))], probs


def evaluate_text(model: TextModel, records) -> EvalReport:
    """Overall accuracy, per-class recall, and confusion counts on a test set."""
    if not records:
        raise ValueError("empty test set")
    classes = model.taxonomy.classes
    matrix = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for r in records:
        if not model.taxonomy.is_model_class(r.label):
            raise ValueError(f"record {r.id}: label {r.label!r} is not a model class")
        gold = model.taxonomy.index_of(r.label)
        predicted, _ = predict_text(model, r.comment)
        matrix[gold, classes.index(predicted)] += 1
    total = int(matrix.sum())
    accuracy = float(np.trace(matrix)) / total
    per_class: dict[str, float] = {}
    for i, name in enumerate(classes):
        gold_count = int(matrix[i].sum())
        if gold_count:
            per_class[name] = float(matrix[i, i]) / gold_count
    return EvalReport(accuracy, per_class, matrix, classes)


def merge_classes(taxonomy: LabelTaxonomy, class_a: str, class_b: str) -> LabelTaxonomy:
    """Collapse two classes into one named '<a>/<b>'; old names become aliases."""
    for name in (class_a, class_b):
        if name not in taxonomy.classes:
            raise ValueError(f"unknown class {name!r}")
    if class_a == class_b:
        raise ValueError("cannot merge a class with itself")
    merged = f"{class_a}/{class_b}"
    classes = tuple(
        merged if c == class_a else c for c in taxonomy.classes if c != class_b
    )
    aliases = {
        old: (merged if new in (class_a, class_b) else new)
        for old, new in taxonomy.merged_aliases.items()
    }
    aliases[class_a] = merged
    aliases[class_b] = merged
    return LabelTaxonomy(classes=classes, merged_aliases=aliases)


def save_text_model(model: TextModel, path) -> None:
    """Persist to versioned JSON; floats round-trip exactly."""
    payload: dict = {
        "format": "text-model/1",
        "featurizer": model.featurizer,
        "taxonomy": {
            "classes": list(model.taxonomy.classes),
            "merged_aliases": model.taxonomy.merged_aliases,
        },
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "epoch_losses": model.epoch_losses,
    }
    if model.vocabulary is not None:
        ordered = sorted(model.vocabulary.token_to_index, key=model.vocabulary.token_to_index.get)
        payload["vocabulary"] = {
            "tokens": ordered,
            "document_frequency": [model.vocabulary.document_frequency[t] for t in ordered],
            "total_documents": model.vocabulary.total_documents,
        }
    if model.embedding_table is not None:
        payload["embedding_table"] = {t: v.tolist() for t, v in model.embedding_table.items()}
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_text_model(path) -> TextModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != "text-model/1":
        raise ValueError(f"{path}: not a text model file")
    vocab = None
    if "vocabulary" in payload:
        spec = payload["vocabulary"]
        vocab = Vocabulary(
            token_to_index={t: i for i, t in enumerate(spec["tokens"])},
            document_frequency=dict(zip(spec["tokens"], spec["document_frequency"])),
            total_documents=spec["total_documents"],
        )
    table = None
    if "embedding_table" in payload:
        table = {t: np.asarray(v, dtype=np.float64) for t, v in payload["embedding_table"].items()}
    return TextModel(
        featurizer=payload["featurizer"],
        taxonomy=LabelTaxonomy(
            classes=tuple(payload["taxonomy"]["classes"]),
            merged_aliases=dict(payload["taxonomy"]["merged_aliases"]),
        ),
        weights=np.asarray(payload["weights"], dtype=np.float64),
        bias=np.asarray(payload["bias"], dtype=np.float64),
        vocabulary=vocab,
        embedding_table=table,
        epoch_losses=list(payload["epoch_losses"]),
    )
