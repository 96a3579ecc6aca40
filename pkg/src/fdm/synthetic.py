"""Synthetic corpora with known ground-truth topics.

Documents follow the mixed-membership generative process: per document a
topic-weight vector theta is drawn from the configured prior, then tokens
are sampled i.i.d. from the induced mixture sum_t theta(t) mu_t. Randomness
is counter-based (one Philox stream per document index), so generation is
reproducible independently of iteration order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BowDocument, Corpus, Vocabulary
from .evaluation import TopicSet


@dataclass
class DirichletPrior:
    """Dirichlet document-weight prior, sampled as normalized gamma draws."""

    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if np.any(self.alpha <= 0):
            raise ValueError("Dirichlet concentrations must be positive")

    @classmethod
    def symmetric(cls, concentration: float, t: int) -> "DirichletPrior":
        return cls(np.full(t, concentration))

    @property
    def n_topics(self) -> int:
        return len(self.alpha)

    def theta_for_doc(self, doc_index: int, rng: np.random.Generator) -> np.ndarray:
        g = rng.standard_gamma(self.alpha)
        total = g.sum()
        if total <= 0.0:  # all-zero draw possible for very small concentrations
            return np.full(len(self.alpha), 1.0 / len(self.alpha))
        return g / total

    def theta_moment(self) -> np.ndarray:
        """Closed-form E[theta theta^T]: (a a^T + diag(a)) / (a0 (a0 + 1))."""
        a = self.alpha
        a0 = a.sum()
        return (np.outer(a, a) + np.diag(a)) / (a0 * (a0 + 1.0))


@dataclass
class FixedThetas:
    """Deterministic weights: document d uses row d mod K of the list."""

    thetas: np.ndarray

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=np.float64))
        if np.any(self.thetas < 0):
            raise ValueError("theta entries must be nonnegative")
        sums = self.thetas.sum(axis=1)
        if not np.allclose(sums, 1.0):
            raise ValueError("each theta must sum to 1")

    @property
    def n_topics(self) -> int:
        return self.thetas.shape[1]

    def theta_for_doc(self, doc_index: int, rng: np.random.Generator) -> np.ndarray:
        return self.thetas[doc_index % len(self.thetas)]

    def theta_moment(self) -> np.ndarray:
        return (self.thetas.T @ self.thetas) / len(self.thetas)


@dataclass
class GroundTruth:
    topics: TopicSet
    prior: DirichletPrior | FixedThetas
    tokens_per_doc: int
    n_docs: int
    seed: int = 0

    def __post_init__(self):
        if self.tokens_per_doc < 2:
            raise ValueError("documents need at least 2 tokens")
        if self.n_docs < 1:
            raise ValueError("need at least one document")
        if self.prior.n_topics != self.topics.n_topics:
            raise ValueError("prior and topic set disagree on the topic count")


def _doc_rng(seed: int, doc_index: int) -> np.random.Generator:
    key = np.array([seed, doc_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def synthetic_vocab(n: int) -> Vocabulary:
    width = len(str(max(n - 1, 1)))
    return Vocabulary.from_tokens([f"t{i:0{width}d}" for i in range(n)])


def gen_corpus(gt: GroundTruth) -> Corpus:
    """Generate the full corpus; deterministic in gt.seed."""
    mu = gt.topics.probs
    n = gt.topics.n_tokens
    docs = []
    for d in range(gt.n_docs):
        rng = _doc_rng(gt.seed, d)
        theta = gt.prior.theta_for_doc(d, rng)
        nu = theta @ mu
        nu = nu / nu.sum()
        counts = rng.multinomial(gt.tokens_per_doc, nu)
        ids = np.nonzero(counts)[0]
        docs.append(
            BowDocument(
                counts={int(u): int(counts[u]) for u in ids},
                length=int(gt.tokens_per_doc),
            )
        )
    return Corpus(docs=docs, vocab=synthetic_vocab(n))


def interval_topics(n: int, intervals) -> TopicSet:
    """Topics uniform on 1-based inclusive token ranges [a, b]."""
    rows = []
    for a, b in intervals:
        if not (1 <= a <= b <= n):
            raise ValueError(f"interval [{a}, {b}] outside [1, {n}]")
        row = np.zeros(n)
        row[a - 1 : b] = 1.0 / (b - a + 1)
        rows.append(row)
    return TopicSet(np.array(rows))


def estimate_theta_moment(
    prior, n_samples: int, seed: int = 0
) -> np.ndarray:
    """Monte-Carlo estimate of E[theta theta^T] from prior draws."""
    rng = np.random.default_rng(seed)
    t = prior.n_topics
    acc = np.zeros((t, t))
    for i in range(n_samples):
        theta = prior.theta_for_doc(i, rng)
        acc += np.outer(theta, theta)
    return acc / n_samples


def expected_cooc(
    gt: GroundTruth, theta_samples: int = 0, seed: int | None = None
) -> np.ndarray:
    """Dense population pair matrix sum_ij Theta_ij mu_i (x) mu_j.

    Theta comes from the prior's closed form by default, or from
    ``theta_samples`` Monte-Carlo draws when requested.
    """
    if theta_samples > 0:
        theta = estimate_theta_moment(
            gt.prior, theta_samples, seed=gt.seed if seed is None else seed
        )
    else:
        theta = gt.prior.theta_moment()
    mu = gt.topics.probs
    return mu.T @ theta @ mu
