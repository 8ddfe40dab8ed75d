"""Bag-of-words corpora, a planted-term generator and per-term leakage scores."""

from __future__ import annotations

import csv
import io
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import DataFormatError, InvalidParameterError, ShapeMismatchError
from ..estimators import TideModel, TrainConfig, tide_train

_URL = re.compile(r"(?:https?://|www\.)\S+")
_HANDLE = re.compile(r"@\w+")
_NON_ALNUM = re.compile(r"[^a-z0-9]+")

PLANTED_TERM = "alpha"
TEXT_HIDDEN = (32, 32)
TEXT_TRAIN = TrainConfig(epochs=60, batch_size=64, learning_rate=0.01, weight_decay=0.01,
                         initial_accumulator=1e-4, attribute_init_scale=1.0)


def tokenize(text: str) -> list:
    """Fixed preprocessing rules.

    ASCII-fold, lowercase, drop URLs and @handles, keep the word of a
    #hashtag, split on anything that is not a letter or digit, drop tokens
    shorter than two characters.
    """
    text = unicodedata.normalize("NFKD", text).encode("ascii", "ignore").decode("ascii").lower()
    text = _HANDLE.sub(" ", _URL.sub(" ", text)).replace("#", " ")
    return [t for t in _NON_ALNUM.sub(" ", text).split() if len(t) >= 2]


@dataclass
class Corpus:
    """Term-count matrix over a frequency-ordered vocabulary.

    ``counts[i, j]`` counts term ``vocabulary[j]`` in document i; column j
    is also the j-th feature revealed to the estimator.
    """

    counts: np.ndarray
    vocabulary: list
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[1] != len(self.vocabulary):
            raise ShapeMismatchError("counts must be (documents, vocabulary)")
        if np.any(self.counts < 0):
            raise InvalidParameterError("counts must be non-negative")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.counts.shape[0],):
                raise ShapeMismatchError("one label per document required")

    @property
    def label_balance(self) -> Optional[float]:
        """Fraction of documents with label 1."""
        return None if self.labels is None else float(np.mean(self.labels == 1))

    def features(self) -> np.ndarray:
        """Estimator inputs: log(1 + count)."""
        return np.log1p(self.counts.astype(np.float64))


def tokenize_bow(raw_docs: Sequence[str], vocab_size: int, labels=None) -> Corpus:
    """Count the ``vocab_size`` most frequent terms; ties break alphabetically."""
    if len(raw_docs) == 0:
        raise InvalidParameterError("corpus is empty")
    if vocab_size < 1:
        raise InvalidParameterError("vocab_size must be >= 1")
    tokens = [tokenize(d) for d in raw_docs]
    freq = Counter(t for doc in tokens for t in doc)
    if not freq:
        raise InvalidParameterError("no terms survive preprocessing")
    vocab = [t for t, _ in sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:vocab_size]]
    index = {t: j for j, t in enumerate(vocab)}
    counts = np.zeros((len(tokens), len(vocab)), dtype=np.int64)
    for i, doc in enumerate(tokens):
        for t in doc:
            j = index.get(t)
            if j is not None:
                counts[i, j] += 1
    return Corpus(counts, vocab, labels)


def read_labeled_text(path) -> tuple:
    """Parse ``label<TAB>text`` lines; returns (labels, documents)."""
    labels, docs = [], []
    try:
        with open(path, encoding="utf-8") as f:
            for k, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                label, sep, text = line.partition("\t")
                if not sep:
                    raise DataFormatError(f"{path}: line {k}: missing TAB after the label")
                try:
                    labels.append(int(label))
                except ValueError as exc:
                    raise DataFormatError(f"{path}: line {k}: label {label!r} is not an integer") from exc
                docs.append(text)
    except (OSError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not docs:
        raise DataFormatError(f"{path}: no documents")
    return np.array(labels), docs


def write_labeled_text(path, labels, docs) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for lab, doc in zip(labels, docs):
            f.write(f"{int(lab)}\t{doc}\n")


_SYLLABLES = ["ka", "lo", "mi", "ne", "ru", "ta", "po", "se", "vi", "do", "ga", "ze"]


def planted_corpus(n: int, seed: int, plant: str = PLANTED_TERM, n_filler: int = 120,
                   plant_rate: float = 0.6) -> tuple:
    """Short noisy posts whose only attribute signal is one planted term.

    Filler words are drawn from a Zipf-like law independent of the label.
    A document with label 1 contains ``plant`` with probability
    ``plant_rate``; label-0 documents never do. URLs, @handles, #tags and
    punctuation are sprinkled in to exercise the tokenizer.

    Returns
    -------
    labels : ndarray of int
    docs : list of str
    """
    if n < 10:
        raise InvalidParameterError("generate at least 10 documents")
    rng = np.random.default_rng(seed)
    words = sorted({a + b + c for a in _SYLLABLES for b in _SYLLABLES for c in _SYLLABLES})
    words = [w for w in rng.permutation(words)[:n_filler] if w != plant]
    weights = 1.0 / np.arange(1, len(words) + 1) ** 0.9
    weights /= weights.sum()
    labels = rng.integers(0, 2, size=n)
    docs = []
    for lab in labels:
        toks = list(rng.choice(words, size=rng.integers(6, 16), p=weights))
        if lab == 1 and rng.random() < plant_rate:
            toks.insert(int(rng.integers(0, len(toks) + 1)), plant)
        r = rng.random()
        if r < 0.2:
            toks.append(f"https://t.co/{rng.integers(10**6)}")
        elif r < 0.35:
            toks.insert(0, f"@user{rng.integers(1000)}")
        elif r < 0.5:
            k = int(rng.integers(0, len(toks)))
            toks[k] = "#" + toks[k].capitalize()
        docs.append(" ".join(toks) + rng.choice(["", "!", ".", "?!"]))
    return labels, docs


def train_text_tide(corpus: Corpus, M: float = 5.0, hidden: Sequence[int] = TEXT_HIDDEN,
                    config: Optional[TrainConfig] = None, rows=None) -> TideModel:
    """Prefix-masked TIDE over the frequency-ordered term features."""
    if corpus.labels is None:
        raise InvalidParameterError("training needs labelled documents")
    idx = np.arange(corpus.counts.shape[0]) if rows is None else np.asarray(rows)
    x = corpus.features()[idx]
    model = tide_train(corpus.labels[idx, None].astype(np.float64), x, hidden, M, config or TEXT_TRAIN,
                       n_features=x.shape[1], prefix=True)
    model.metadata.update({"vocabulary": list(corpus.vocabulary),
                           "s_alphabet": sorted({int(v) for v in corpus.labels})})
    return model


@dataclass
class TermScore:
    term: str
    position: int
    score: float
    signed: float
    s_star: int


def score_terms(model: TideModel, corpus: Corpus, rows=None, s_alphabet: Sequence = (0, 1),
                max_docs: int = 400) -> list:
    """Rank terms by the largest |conditional density| over documents and s.

    For each term j the score is max over the scored documents and over
    s of |i-hat(s; x_j | x^{j-1})|. ``signed`` is that conditional density
    with its sign and ``s_star`` the attribute value attaining it. Sorted
    by descending score.
    """
    if model.n_features != len(corpus.vocabulary) or model.feature_dim != 1:
        raise ShapeMismatchError(f"model expects {model.n_features} terms, corpus has {len(corpus.vocabulary)}")
    idx = np.arange(corpus.counts.shape[0]) if rows is None else np.asarray(rows)
    x = corpus.features()[idx[:max_docs]]
    n, m = x.shape
    s_vals = np.asarray(s_alphabet, dtype=np.float64)
    k = len(s_vals)
    pre = np.tile(np.arange(m + 1), n * k)
    s_rows = np.tile(np.repeat(s_vals, m + 1), n)
    x_rows = np.repeat(x, k * (m + 1), axis=0)
    vals = model.evaluate(s_rows[:, None], x_rows, pre).reshape(n, k, m + 1)
    cond = np.diff(vals, axis=2).reshape(n * k, m)
    best = np.argmax(np.abs(cond), axis=0)
    out = []
    for j in range(m):
        v = float(cond[best[j], j])
        out.append(TermScore(corpus.vocabulary[j], j, abs(v), v, int(s_alphabet[best[j] % k])))
    out.sort(key=lambda t: (-t.score, t.position))
    return out


def term_scores_csv(scores: Sequence[TermScore]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "term", "position", "score", "signed", "s_star"])
    for r, t in enumerate(scores, start=1):
        w.writerow([r, t.term, t.position, f"{t.score:.8g}", f"{t.signed:.8g}", t.s_star])
    return buf.getvalue()
