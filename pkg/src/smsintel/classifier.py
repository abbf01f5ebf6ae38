"""Report-text classifier: bag-of-words features into a small MLP.

The network is input -> tanh hidden layer -> softmax over two classes,
trained with mini-batch gradient descent on mean cross-entropy. Everything
is seeded so that training is bit-reproducible.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[\W_]+")  # splits on anything non-alphanumeric

# Output layer convention: column 0 = OTHER, column 1 = SPAM_REPORT.
_SPAM_COLUMN = 1


class Label(Enum):
    SPAM_REPORT = "spam_report"
    OTHER = "other"


@dataclass(frozen=True)
class LabeledText:
    text: str
    label: Label

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("text must be non-empty")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


@dataclass(frozen=True)
class Vocabulary:
    """Dense token index in lexicographic order, built from training text only."""

    index: dict[str, int]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        tokens = sorted({t for text in texts for t in tokenize(text)})
        return cls(index={token: i for i, token in enumerate(tokens)})

    def __len__(self) -> int:
        return len(self.index)

    @property
    def tokens(self) -> list[str]:
        return sorted(self.index, key=self.index.__getitem__)


def featurize(text: str, vocab: Vocabulary) -> Counter[int]:
    """Sparse token counts keyed by vocabulary index; OOV tokens are dropped."""
    counts: Counter[int] = Counter()
    for token in tokenize(text):
        index = vocab.index.get(token)
        if index is not None:
            counts[index] += 1
    return counts


def dense_features(texts: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    matrix = np.zeros((len(texts), len(vocab)), dtype=np.float64)
    for row, text in enumerate(texts):
        for index, count in featurize(text, vocab).items():
            matrix[row, index] = count
    return matrix


def oversample(data: Sequence[LabeledText]) -> list[LabeledText]:
    """Duplicate every minority-class example once.

    The output is the original list followed by the duplicated minority
    block; an exactly balanced input is returned unchanged. Raises if either
    class is absent.
    """
    counts = Counter(item.label for item in data)
    if len(counts) < 2:
        raise ValueError("oversample requires both labels to be present")
    if counts[Label.SPAM_REPORT] == counts[Label.OTHER]:
        return list(data)
    minority = min(Label, key=lambda lb: counts[lb])
    return list(data) + [item for item in data if item.label is minority]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 50
    hidden_size: int = 32
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.hidden_size <= 0 or self.batch_size <= 0:
            raise ValueError("hidden_size and batch_size must be positive")


@dataclass
class MlpModel:
    """Two weight matrices and two bias vectors; immutable once trained."""

    vocab: Vocabulary
    w1: np.ndarray  # (V, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, 2)
    b2: np.ndarray  # (2,)
    rng_seed: int

    @property
    def layer_sizes(self) -> tuple[int, int, int]:
        return (self.w1.shape[0], self.w1.shape[1], self.w2.shape[1])


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def forward(model: MlpModel, features: np.ndarray) -> np.ndarray:
    hidden = np.tanh(features @ model.w1 + model.b1)
    return _softmax(hidden @ model.w2 + model.b2)


def loss_and_gradients(
    model: MlpModel, features: np.ndarray, labels: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its analytic gradients.

    ``labels`` holds class column indices (0 = other, 1 = spam report).
    """
    n = features.shape[0]
    hidden = np.tanh(features @ model.w1 + model.b1)
    probs = _softmax(hidden @ model.w2 + model.b2)
    loss = float(-np.log(probs[np.arange(n), labels] + 1e-300).mean())

    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    d_w2 = hidden.T @ d_logits
    d_b2 = d_logits.sum(axis=0)
    d_hidden = (d_logits @ model.w2.T) * (1.0 - hidden**2)
    d_w1 = features.T @ d_hidden
    d_b1 = d_hidden.sum(axis=0)
    return loss, {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2}


def _init_model(vocab: Vocabulary, config: TrainConfig) -> MlpModel:
    rng = np.random.default_rng(config.seed)
    v, h = len(vocab), config.hidden_size
    return MlpModel(
        vocab=vocab,
        w1=rng.uniform(-0.1, 0.1, size=(v, h)),
        b1=rng.uniform(-0.1, 0.1, size=h),
        w2=rng.uniform(-0.1, 0.1, size=(h, 2)),
        b2=rng.uniform(-0.1, 0.1, size=2),
        rng_seed=config.seed,
    )


def train(data: Sequence[LabeledText], config: TrainConfig = TrainConfig()) -> MlpModel:
    """Train from scratch; identical data + config + seed give identical bits."""
    labels_present = {item.label for item in data}
    if len(labels_present) < 2:
        raise ValueError("training data must contain both labels")
    vocab = Vocabulary.build(item.text for item in data)
    if len(vocab) == 0:
        raise ValueError("training data produced an empty vocabulary")
    model = _init_model(vocab, config)
    features = dense_features([item.text for item in data], vocab)
    targets = np.array(
        [_SPAM_COLUMN if item.label is Label.SPAM_REPORT else 0 for item in data],
        dtype=np.int64,
    )
    rng = np.random.default_rng(config.seed + 1)
    n = len(data)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            _, grads = loss_and_gradients(model, features[batch], targets[batch])
            model.w1 -= config.learning_rate * grads["w1"]
            model.b1 -= config.learning_rate * grads["b1"]
            model.w2 -= config.learning_rate * grads["w2"]
            model.b2 -= config.learning_rate * grads["b2"]
    return model


def predict(model: MlpModel, text: str) -> tuple[Label, float]:
    """Return (label, probability of the spam-report class)."""
    features = dense_features([text], model.vocab)
    probs = forward(model, features)[0]
    p_spam = float(probs[_SPAM_COLUMN])
    return (Label.SPAM_REPORT if p_spam >= 0.5 else Label.OTHER, p_spam)


@dataclass
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0


def kfold_evaluate(
    data: Sequence[LabeledText], k: int = 5, config: TrainConfig = TrainConfig()
) -> Metrics:
    """K-fold cross validation with pooled (micro-averaged) confusion counts.

    A seeded shuffle is split into contiguous folds of floor(n/k) items with
    the remainder spread over the first folds; each fold's vocabulary comes
    from its training split only.
    """
    n = len(data)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds dataset size {n}")
    rng = np.random.default_rng(config.seed)
    order = list(rng.permutation(n))
    base, remainder = divmod(n, k)
    folds: list[list[int]] = []
    cursor = 0
    for fold_index in range(k):
        size = base + (1 if fold_index < remainder else 0)
        folds.append(order[cursor : cursor + size])
        cursor += size
    counts = Metrics(tp=0, fp=0, tn=0, fn=0)
    for fold in folds:
        held_out = set(fold)
        train_items = [data[i] for i in order if i not in held_out]
        model = train(train_items, config)
        for i in fold:
            predicted, _ = predict(model, data[i].text)
            actual = data[i].label
            if actual is Label.SPAM_REPORT:
                if predicted is Label.SPAM_REPORT:
                    counts.tp += 1
                else:
                    counts.fn += 1
            else:
                if predicted is Label.SPAM_REPORT:
                    counts.fp += 1
                else:
                    counts.tn += 1
    return counts


def save_model(model: MlpModel, path: str | Path) -> None:
    """Serialize to JSON; float values round-trip exactly via repr."""
    payload = {
        "layer_sizes": list(model.layer_sizes),
        "vocabulary": model.vocab.tokens,
        "rng_seed": model.rng_seed,
        "w1": model.w1.tolist(),
        "b1": model.b1.tolist(),
        "w2": model.w2.tolist(),
        "b2": model.b2.tolist(),
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True), encoding="utf-8"
    )


def load_model(path: str | Path) -> MlpModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    vocab = Vocabulary(index={t: i for i, t in enumerate(payload["vocabulary"])})
    return MlpModel(
        vocab=vocab,
        w1=np.array(payload["w1"], dtype=np.float64),
        b1=np.array(payload["b1"], dtype=np.float64),
        w2=np.array(payload["w2"], dtype=np.float64),
        b2=np.array(payload["b2"], dtype=np.float64),
        rng_seed=int(payload["rng_seed"]),
    )


class Translator(Protocol):
    """Text translation hook; the default adapter passes text through."""

    def translate(self, text: str, target_lang: str) -> str: ...


class IdentityTranslator:
    def translate(self, text: str, target_lang: str) -> str:
        return text


def read_labeled(path: str | Path) -> list[LabeledText]:
    """Load NDJSON lines of ``{"text": str, "label": "spam_report" | "other"}``."""
    items: list[LabeledText] = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            items.append(LabeledText(text=obj["text"], label=Label(obj["label"])))
    return items
