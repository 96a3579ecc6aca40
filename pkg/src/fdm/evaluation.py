"""Scoring learned topics.

Three independent measurements:

* holdout log-likelihood: each test document gets the mixture weights
  theta minimizing KL(dhat || sum_t theta_t mu_t) (a convex problem, solved
  by multiplicative EM updates), then is scored by the mixture it induces;
* matching error: mean L1 distance to a reference topic set under the
  optimal one-to-one assignment;
* anchor diagnostics: tokens owned (almost) exclusively by one topic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import Corpus
from .errors import DimensionMismatch, VocabMismatch

_TINY = np.finfo(np.float64).tiny


@dataclass
class TopicSet:
    """T topics, each a probability distribution over N tokens."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))

    @property
    def n_topics(self) -> int:
        return self.probs.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.probs.shape[1]

    def validate(self, tol: float = 1e-9) -> None:
        assert np.all(self.probs >= 0.0)
        assert np.allclose(self.probs.sum(axis=1), 1.0, atol=tol)


@dataclass
class EvalReport:
    per_doc: np.ndarray
    mean: float
    n_excluded: int = 0
    smoothing: float = 0.0
    matching_err: float | None = None
    per_topic_distances: np.ndarray | None = None
    anchors: list[np.ndarray] | None = None


def smooth_topics(probs: np.ndarray, eps: float = 1e-10) -> np.ndarray:
    """Mix eps of uniform mass into each topic so every token has support."""
    n = probs.shape[-1]
    return (1.0 - eps) * probs + eps / n


def kl_project(
    dhat: np.ndarray,
    topics: TopicSet,
    max_iter: int = 1000,
    tol: float = 1e-10,
    return_objectives: bool = False,
):
    """Mixture weights theta minimizing KL(dhat || theta @ topics).

    Multiplicative updates theta_t <- theta_t * sum_u dhat(u) mu_t(u) / m(u)
    (renormalized) decrease the objective monotonically; iteration stops
    when the improvement drops below ``tol`` or at ``max_iter``.
    """
    dhat = np.asarray(dhat, dtype=np.float64)
    mu = topics.probs
    t = topics.n_topics
    support = dhat > 0.0
    d = dhat[support]
    m_cols = mu[:, support]  # (T, S)
    theta = np.full(t, 1.0 / t)
    base = float(np.dot(d, np.log(d)))  # constant part of the KL divergence

    objectives = []
    prev = np.inf
    for _ in range(max_iter):
        mix = np.maximum(theta @ m_cols, _TINY)
        obj = base - float(np.dot(d, np.log(mix)))
        objectives.append(obj)
        if prev - obj < tol:
            break
        prev = obj
        theta = theta * (m_cols @ (d / mix))
        theta /= theta.sum()

    if return_objectives:
        return theta, objectives
    return theta


def holdout_loglik(
    test: Corpus,
    topics: TopicSet,
    smoothing: float = 1e-10,
    max_iter: int = 1000,
    tol: float = 1e-10,
    threads: int = 1,
) -> EvalReport:
    """Mean per-token holdout log-likelihood (natural log).

    Each document is scored by L_d = sum_u dhat(u) log m(theta_d)(u) with
    theta_d from kl_project against the smoothed topics. Documents with no
    in-vocabulary mass are excluded and counted.
    """
    if test.n_docs == 0:
        raise ValueError("empty test corpus")
    if topics.n_tokens != test.n_tokens:
        raise VocabMismatch(
            f"topics over {topics.n_tokens} tokens, corpus over {test.n_tokens}"
        )
    smoothed = TopicSet(smooth_topics(topics.probs, smoothing))

    def score(doc) -> float | None:
        if doc.length == 0 or not doc.counts:
            return None
        dhat = doc.unigram(test.n_tokens)
        theta = kl_project(dhat, smoothed, max_iter=max_iter, tol=tol)
        mix = theta @ smoothed.probs
        support = dhat > 0.0
        return float(np.dot(dhat[support], np.log(np.maximum(mix[support], _TINY))))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(score, test.docs))
    else:
        raw = [score(doc) for doc in test.docs]

    per_doc = np.array([r for r in raw if r is not None])
    n_excluded = sum(1 for r in raw if r is None)
    if per_doc.size == 0:
        raise ValueError("all test documents were excluded")
    return EvalReport(
        per_doc=per_doc,
        mean=float(per_doc.mean()),
        n_excluded=n_excluded,
        smoothing=smoothing,
    )


def matching_error(reference: TopicSet, learned: TopicSet):
    """Optimal-assignment mean L1 distance between two topic sets.

    Returns (err, permutation tau, per-topic matched distances) where
    learned topic tau[t] is matched to reference topic t.
    """
    if reference.probs.shape != learned.probs.shape:
        raise DimensionMismatch(
            f"reference {reference.probs.shape} vs learned {learned.probs.shape}"
        )
    t = reference.n_topics
    cost = np.empty((t, t))
    for i in range(t):
        cost[i] = np.abs(learned.probs - reference.probs[i]).sum(axis=1)
    rows, cols = linear_sum_assignment(cost)
    tau = np.empty(t, dtype=np.int64)
    tau[rows] = cols
    per_topic = cost[rows, cols]
    return float(per_topic.mean()), tau, per_topic


def anchor_check(topics: TopicSet, eps: float = 1e-4, pmin: float = 1e-3):
    """Per-topic lists of eps-anchor tokens.

    Token u anchors topic t when mu_t(u) >= pmin while every other topic
    puts at most eps on u. With eps = 0 this is the exact exclusive-support
    predicate.
    """
    if eps < 0 or pmin <= 0:
        raise ValueError("need eps >= 0 and pmin > 0")
    p = topics.probs
    t = topics.n_topics
    anchors = []
    for i in range(t):
        if t == 1:
            others = np.zeros(topics.n_tokens)
        else:
            others = np.delete(p, i, axis=0).max(axis=0)
        mask = (p[i] >= pmin) & (others <= eps)
        anchors.append(np.nonzero(mask)[0])
    return anchors
