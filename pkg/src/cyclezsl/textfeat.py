"""TF-IDF semantic vectors from one raw text document per class."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class Corpus:
    """Ordered mapping of class id to raw document text."""

    class_ids: tuple[str, ...]
    texts: tuple[str, ...]

    def __post_init__(self):
        if not self.class_ids:
            raise ValueError("corpus needs at least one document")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("class ids must be unique")
        if len(self.class_ids) != len(self.texts):
            raise ValueError("one text per class id")

    @classmethod
    def from_mapping(cls, docs: Mapping[str, str]) -> "Corpus":
        return cls(tuple(docs), tuple(docs.values()))

    @classmethod
    def from_texts(cls, texts) -> "Corpus":
        texts = list(texts)
        return cls(tuple(str(i) for i in range(len(texts))), tuple(texts))

    def __len__(self) -> int:
        return len(self.texts)


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: Mapping[str, int]
    df: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TfidfMatrix:
    matrix: np.ndarray
    vocab: Vocabulary


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def build_vocab(corpus: Corpus, min_df: int = 1) -> Vocabulary:
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df: Counter[str] = Counter()
    for text in corpus.texts:
        df.update(set(tokenize(text)))
    tokens = tuple(sorted(t for t, n in df.items() if n >= min_df))
    if not tokens:
        raise ValueError(f"no token appears in at least {min_df} documents")
    return Vocabulary(tokens, {t: i for i, t in enumerate(tokens)}, tuple(df[t] for t in tokens))


def smooth_idf(n_docs: int, df: np.ndarray) -> np.ndarray:
    return np.log((1.0 + n_docs) / (1.0 + df)) + 1.0


IDF_STRATEGIES: dict[str, Callable[[int, np.ndarray], np.ndarray]] = {"smooth": smooth_idf}


def tfidf(corpus: Corpus, vocab: Vocabulary, idf: str = "smooth", normalize: bool = True) -> TfidfMatrix:
    """tf = count / document length, weighted by idf, rows L2-normalised."""
    n = len(corpus)
    weights = IDF_STRATEGIES[idf](n, np.asarray(vocab.df, dtype=np.float64))
    mat = np.zeros((n, len(vocab)), dtype=np.float64)
    for row, text in enumerate(corpus.texts):
        toks = tokenize(text)
        if not toks:
            continue
        for tok, count in Counter(toks).items():
            col = vocab.index.get(tok)
            if col is not None:
                mat[row, col] = count / len(toks)
    mat *= weights
    if normalize:
        norms = np.sqrt((mat * mat).sum(axis=1, keepdims=True))
        np.divide(mat, norms, out=mat, where=norms > 0)
    return TfidfMatrix(mat, vocab)


def read_corpus(directory: str | Path, suffix: str = ".txt") -> Corpus:
    """One UTF-8 file per class; the file stem is the class id."""
    files = sorted(p for p in Path(directory).iterdir() if p.is_file() and p.name.endswith(suffix))
    if not files:
        raise FileNotFoundError(f"no *{suffix} documents in {directory}")
    ids = tuple(p.name[: -len(suffix)] if suffix else p.name for p in files)
    return Corpus(ids, tuple(p.read_text(encoding="utf-8") for p in files))

