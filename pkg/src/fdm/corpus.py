"""Corpus ingestion: tokenization, vocabulary construction, bag-of-words documents.

Input convention is one document per line of UTF-8 text. The on-disk corpus
format is a plain text file:

    N D
    <id>\t<token>            (N lines, ids dense 0..N-1)
    <doc_id> <id>:<count> ...  (D lines, doc ids sequential 0..D-1)
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyCorpus, FormatError
from .stemmer import porter_stem

_SPLIT = re.compile(r"[^a-z0-9]+")
_NON_ALPHA = re.compile(r"[^a-z]+")


@dataclass(frozen=True)
class PreprocessConfig:
    """Tokenization rules applied to every input line."""

    min_token_len: int = 3
    stopwords: frozenset[str] = frozenset()
    stem: bool = False
    keep_digits: bool = False  # synthetic token names like "t00042" need digits


def tokenize(text: str, config: PreprocessConfig = PreprocessConfig()) -> list[str]:
    """Split a line into lowercase tokens.

    Splitting happens at any character outside [a-z] (numbers and non-ASCII
    act as separators), optional stemming is applied, then tokens shorter
    than ``min_token_len`` and stopwords are dropped.
    """
    splitter = _SPLIT if config.keep_digits else _NON_ALPHA
    parts = splitter.split(text.lower())
    if config.stem:
        parts = [porter_stem(t) for t in parts]
    return [
        t
        for t in parts
        if len(t) >= config.min_token_len and t not in config.stopwords
    ]


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional token <-> dense-id map."""

    tokens: tuple[str, ...]
    index: dict[str, int] = field(repr=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        toks = tuple(tokens)
        idx = {t: i for i, t in enumerate(toks)}
        if len(idx) != len(toks):
            raise ValueError("duplicate token in vocabulary")
        return cls(tokens=toks, index=idx)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index[token]

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]


@dataclass
class BowDocument:
    """Sparse count vector of one document."""

    counts: dict[int, int]
    length: int

    @classmethod
    def from_ids(cls, ids: Iterable[int]) -> "BowDocument":
        c = Counter(ids)
        return cls(counts=dict(c), length=sum(c.values()))

    @classmethod
    def from_counts(cls, counts: dict[int, int]) -> "BowDocument":
        counts = {u: int(c) for u, c in counts.items() if c > 0}
        return cls(counts=counts, length=sum(counts.values()))

    def unigram(self, n: int) -> np.ndarray:
        """Empirical token distribution of the document over n token ids."""
        d = np.zeros(n)
        for u, c in self.counts.items():
            d[u] = c
        return d / self.length


@dataclass
class Corpus:
    docs: list[BowDocument]
    vocab: Vocabulary

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @property
    def n_tokens(self) -> int:
        return len(self.vocab)

    def unigram(self) -> np.ndarray:
        """Corpus-level empirical token distribution."""
        d = np.zeros(self.n_tokens)
        total = 0
        for doc in self.docs:
            for u, c in doc.counts.items():
                d[u] += c
            total += doc.length
        return d / total


def build_corpus(
    token_streams: Iterable[Sequence[str]],
    min_token_count: int = 1,
    min_doc_len: int = 2,
    drop_top_k: int = 0,
) -> Corpus:
    """Build a corpus from per-document token lists.

    Tokens with corpus frequency below ``min_token_count`` are removed from
    the vocabulary, optionally followed by the ``drop_top_k`` most frequent
    tokens. Documents shorter than ``min_doc_len`` after filtering are
    dropped entirely.
    """
    if min_doc_len < 2:
        raise ValueError("min_doc_len must be >= 2 (pair statistics need 2 tokens)")
    streams = [list(s) for s in token_streams]
    freq = Counter()
    for s in streams:
        freq.update(s)

    kept = {t for t, c in freq.items() if c >= min_token_count}
    if drop_top_k > 0:
        # ties broken by token string for determinism
        top = sorted(kept, key=lambda t: (-freq[t], t))[:drop_top_k]
        kept -= set(top)

    vocab = Vocabulary.from_tokens(sorted(kept))
    docs = []
    for s in streams:
        ids = [vocab.index[t] for t in s if t in vocab.index]
        if len(ids) >= min_doc_len:
            docs.append(BowDocument.from_ids(ids))
    if not docs:
        raise EmptyCorpus("no document survived filtering")
    return Corpus(docs=docs, vocab=vocab)


def corpus_from_lines(
    lines: Iterable[str],
    config: PreprocessConfig = PreprocessConfig(),
    min_token_count: int = 1,
    min_doc_len: int = 2,
    drop_top_k: int = 0,
) -> Corpus:
    """Tokenize raw lines (one document each) and build a corpus."""
    return build_corpus(
        (tokenize(line, config) for line in lines),
        min_token_count=min_token_count,
        min_doc_len=min_doc_len,
        drop_top_k=drop_top_k,
    )


def split_holdout(corpus: Corpus, fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Random disjoint train/test split; test gets round(fraction * D) docs."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    d = corpus.n_docs
    n_test = int(round(fraction * d))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d)
    test_ids = set(perm[:n_test].tolist())
    train_docs = [corpus.docs[i] for i in range(d) if i not in test_ids]
    test_docs = [corpus.docs[i] for i in range(d) if i in test_ids]
    return (
        Corpus(docs=train_docs, vocab=corpus.vocab),
        Corpus(docs=test_docs, vocab=corpus.vocab),
    )


def save_corpus(path: str, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{corpus.n_tokens} {corpus.n_docs}\n")
        for i, tok in enumerate(corpus.vocab.tokens):
            fh.write(f"{i}\t{tok}\n")
        for doc_id, doc in enumerate(corpus.docs):
            cells = " ".join(f"{u}:{c}" for u, c in sorted(doc.counts.items()))
            fh.write(f"{doc_id} {cells}\n")


def load_corpus(path: str) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: bad corpus header")
        n, d = int(header[0]), int(header[1])
        tokens = []
        for i in range(n):
            line = fh.readline().rstrip("\n")
            tid, _, tok = line.partition("\t")
            if not tok or int(tid) != i:
                raise FormatError(f"{path}: bad vocabulary line {i}")
            tokens.append(tok)
        vocab = Vocabulary.from_tokens(tokens)
        docs = []
        for j in range(d):
            parts = fh.readline().split()
            if not parts or int(parts[0]) != j:
                raise FormatError(f"{path}: bad document line {j}")
            counts = {}
            for cell in parts[1:]:
                u, _, c = cell.partition(":")
                counts[int(u)] = int(c)
            if any(u >= n or u < 0 for u in counts):
                raise FormatError(f"{path}: token id out of range in doc {j}")
            docs.append(BowDocument.from_counts(counts))
    return Corpus(docs=docs, vocab=vocab)


def load_stopwords(path: str) -> frozenset[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip())
