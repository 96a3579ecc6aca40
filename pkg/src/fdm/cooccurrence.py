"""Token co-occurrence statistics.

For a document with count vector c and length l, the pair-probability
estimate is

    M_d[u, v] = c(u) * c(v) / (l * (l - 1))        for u != v
    M_d[u, u] = c(u) * (c(u) - 1) / (l * (l - 1))

which equals the fraction of ordered position pairs (i, j), i != j, holding
tokens (u, v). The corpus matrix is the plain average of the per-document
matrices. Subtracting the diagonal removes the self-pairing bias, making
each M_d an unbiased estimate of the outer product of the document's
underlying token distribution with itself.

Binary file format: magic b"FDM1", u32 n, u64 entry count, then entry
records (u32 u, u32 v, f64 weight) sorted by (u, v), all little-endian.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import BowDocument, Corpus
from .errors import DegenerateDocument, FormatError

_MAGIC = b"FDM1"
_ENTRY_DTYPE = np.dtype([("u", "<u4"), ("v", "<u4"), ("w", "<f8")])
_DENSE_LIMIT = 2048  # accumulate densely below this dictionary size
_DOC_BLOCK = 256  # docs per reduction block; fixed so thread count never changes results


@dataclass
class CoocMatrix:
    """Sparse symmetric pair-probability matrix in coordinate form.

    Entries are sorted by (u, v) and include both (u, v) and (v, u) for
    off-diagonal mass; zero entries are never stored.
    """

    n: int
    us: np.ndarray
    vs: np.ndarray
    ws: np.ndarray

    @property
    def nnz(self) -> int:
        return len(self.ws)

    def total_mass(self) -> float:
        return float(self.ws.sum())

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        m[self.us, self.vs] = self.ws
        return m

    def marginal(self) -> np.ndarray:
        """Row sums: the corpus token distribution induced by the pairs."""
        out = np.zeros(self.n)
        np.add.at(out, self.us, self.ws)
        return out


def _doc_block(doc: BowDocument) -> tuple[np.ndarray, np.ndarray]:
    if doc.length < 2:
        raise DegenerateDocument(f"document of length {doc.length} has no pairs")
    ids = np.fromiter(doc.counts.keys(), dtype=np.int64, count=len(doc.counts))
    c = np.fromiter(doc.counts.values(), dtype=np.float64, count=len(doc.counts))
    w = np.outer(c, c)
    np.fill_diagonal(w, c * (c - 1.0))
    w /= doc.length * (doc.length - 1.0)
    return ids, w


def doc_cooc(doc: BowDocument) -> dict[tuple[int, int], float]:
    """Pair-probability matrix of one document as a dict; zeros omitted."""
    ids, w = _doc_block(doc)
    out = {}
    for a in range(len(ids)):
        for b in range(len(ids)):
            if w[a, b] != 0.0:
                out[(int(ids[a]), int(ids[b]))] = w[a, b]
    return out


def _accumulate_block(docs: list[BowDocument], n: int):
    if n <= _DENSE_LIMIT:
        acc = np.zeros((n, n))
        for doc in docs:
            ids, w = _doc_block(doc)
            acc[np.ix_(ids, ids)] += w
        return acc
    acc: dict[tuple[int, int], float] = {}
    for doc in docs:
        ids, w = _doc_block(doc)
        for a in range(len(ids)):
            for b in range(len(ids)):
                if w[a, b] != 0.0:
                    key = (int(ids[a]), int(ids[b]))
                    acc[key] = acc.get(key, 0.0) + w[a, b]
    return acc


def corpus_cooc(corpus: Corpus, threads: int = 1) -> CoocMatrix:
    """Average the per-document matrices over the whole corpus.

    Documents are processed in fixed-size blocks reduced in index order, so
    the result is identical for any thread count.
    """
    n = corpus.n_tokens
    d = corpus.n_docs
    blocks = [corpus.docs[i : i + _DOC_BLOCK] for i in range(0, d, _DOC_BLOCK)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(lambda b: _accumulate_block(b, n), blocks))
    else:
        partials = [_accumulate_block(b, n) for b in blocks]

    if n <= _DENSE_LIMIT:
        total = partials[0]
        for p in partials[1:]:
            total += p
        us, vs = np.nonzero(total)
        ws = total[us, vs] / d
    else:
        merged: dict[tuple[int, int], float] = {}
        for p in partials:
            for key, w in p.items():
                merged[key] = merged.get(key, 0.0) + w
        items = sorted(merged.items())
        us = np.array([k[0] for k in items], dtype=np.int64)
        vs = np.array([k[1] for k in items], dtype=np.int64)
        ws = np.array([w for _, w in items]) / d

    if ws.size and ws.min() < -1e-12:
        raise AssertionError(f"negative co-occurrence weight {ws.min()}")
    np.clip(ws, 0.0, None, out=ws)
    keep = ws > 0.0
    us, vs, ws = us[keep], vs[keep], ws[keep]
    order = np.lexsort((vs, us))
    return CoocMatrix(n=n, us=us[order], vs=vs[order], ws=ws[order])


class PairSampler:
    """Alias-method sampler over the entries of a CoocMatrix.

    Setup is O(entries); each draw is O(1). The sampling distribution is
    exactly the normalized entry weights.
    """

    def __init__(self, cooc: CoocMatrix, seed: int = 0):
        if cooc.nnz == 0:
            raise ValueError("cannot sample from an empty matrix")
        self._us = cooc.us
        self._vs = cooc.vs
        probs = cooc.ws / cooc.ws.sum()
        self._alias, self._accept = _alias_setup(probs)
        self._rng = np.random.default_rng(seed)

    def sample(self, b: int, rng: np.random.Generator | None = None):
        """Draw b i.i.d. (u, v) pairs; returns two int arrays."""
        if b < 1:
            raise ValueError("batch size must be >= 1")
        rng = rng if rng is not None else self._rng
        k = len(self._accept)
        idx = rng.integers(0, k, size=b)
        keep = rng.random(b) < self._accept[idx]
        idx = np.where(keep, idx, self._alias[idx])
        return self._us[idx], self._vs[idx]


def _alias_setup(probs: np.ndarray):
    k = len(probs)
    accept = probs * k
    alias = np.arange(k, dtype=np.int64)
    small = [i for i in range(k) if accept[i] < 1.0]
    large = [i for i in range(k) if accept[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        alias[s] = l
        accept[l] -= 1.0 - accept[s]
        if accept[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    # float drift can leave residents in either stack; their cells are full
    for i in small + large:
        accept[i] = 1.0
    return alias, accept


def sample_pairs(sampler: PairSampler, b: int) -> np.ndarray:
    """Draw b pairs from the sampler's own stream; returns a (b, 2) array."""
    us, vs = sampler.sample(b)
    return np.column_stack([us, vs])


def unbiasedness_probe(
    nu: np.ndarray, l: int, reps: int, seed: int = 0, chunk: int = 50_000
) -> float:
    """Monte-Carlo check that the per-document estimator is unbiased.

    Generates ``reps`` documents of length ``l`` i.i.d. from ``nu``, averages
    their pair matrices, and returns the max absolute entrywise deviation
    from the outer product nu (x) nu.
    """
    if l < 2:
        raise ValueError("documents need length >= 2")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    nu = np.asarray(nu, dtype=np.float64)
    n = len(nu)
    rng = np.random.default_rng(seed)
    cross = np.zeros((n, n))
    col = np.zeros(n)
    done = 0
    while done < reps:
        m = min(chunk, reps - done)
        counts = rng.multinomial(l, nu, size=m).astype(np.float64)
        cross += counts.T @ counts
        col += counts.sum(axis=0)
        done += m
    cross[np.diag_indices(n)] -= col
    mean = cross / (reps * l * (l - 1.0))
    return float(np.abs(mean - np.outer(nu, nu)).max())


def save_cooc(path: str, cooc: CoocMatrix) -> None:
    entries = np.empty(cooc.nnz, dtype=_ENTRY_DTYPE)
    entries["u"] = cooc.us
    entries["v"] = cooc.vs
    entries["w"] = cooc.ws
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", cooc.n, cooc.nnz))
        fh.write(entries.tobytes())


def load_cooc(path: str) -> CoocMatrix:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != _MAGIC:
            raise FormatError(f"{path}: not a co-occurrence file")
        n, nnz = struct.unpack("<IQ", head[4:])
        payload = fh.read()
    if len(payload) != nnz * _ENTRY_DTYPE.itemsize:
        raise FormatError(f"{path}: truncated entry block")
    entries = np.frombuffer(payload, dtype=_ENTRY_DTYPE)
    return CoocMatrix(
        n=n,
        us=entries["u"].astype(np.int64),
        vs=entries["v"].astype(np.int64),
        ws=entries["w"].astype(np.float64),
    )


def export_cooc_text(path: str, cooc: CoocMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, v, w in zip(cooc.us, cooc.vs, cooc.ws):
            fh.write(f"{u} {v} {w:.17e}\n")
