"""Full dependence mixture over token pairs.

The model assigns a pair (u, v) probability

    M[u, v] = sum_{i,j <= T} alpha[i, j] * mu[i, u] * mu[j, v]

where each topic mu[i] is a distribution over N tokens and alpha is a
symmetric nonnegative T x T mixing matrix summing to 1. Both are softmax
images of unconstrained free variables; alpha's free variables are stored
as the upper triangle only, so symmetry holds structurally.

All entry evaluations run in log space (log-sum-exp over the T^2 terms);
gradients are analytic, with the chain rule through both softmaxes and the
triangle symmetrization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .cooccurrence import CoocMatrix
from .errors import DimensionMismatch, FormatError


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def tri_length(t: int) -> int:
    return t * (t + 1) // 2


def tri_to_symmetric(tri: np.ndarray, t: int) -> np.ndarray:
    """Expand an upper-triangle vector into the full symmetric matrix."""
    if len(tri) != tri_length(t):
        raise DimensionMismatch(f"triangle vector has {len(tri)} != {tri_length(t)} entries")
    a = np.zeros((t, t))
    iu = np.triu_indices(t)
    a[iu] = tri
    a.T[iu] = tri
    return a


def fold_symmetric_grad(g: np.ndarray) -> np.ndarray:
    """Collapse a full-matrix gradient onto the upper-triangle free variables.

    Off-diagonal free variables feed two mirrored cells, so their gradients
    add; diagonal ones feed a single cell.
    """
    t = g.shape[0]
    iu = np.triu_indices(t)
    folded = g[iu] + g.T[iu]
    diag = iu[0] == iu[1]
    folded[diag] = g[iu[0][diag], iu[1][diag]]
    return folded


@dataclass
class FdmParams:
    """Unconstrained free variables of the model."""

    n_topics: int
    n_tokens: int
    mu_free: np.ndarray  # (T, N)
    alpha_free: np.ndarray  # (T*(T+1)//2,)

    def __post_init__(self):
        self.mu_free = np.asarray(self.mu_free, dtype=np.float64)
        self.alpha_free = np.asarray(self.alpha_free, dtype=np.float64)
        if self.mu_free.shape != (self.n_topics, self.n_tokens):
            raise DimensionMismatch("mu_free shape mismatch")
        if self.alpha_free.shape != (tri_length(self.n_topics),):
            raise DimensionMismatch("alpha_free length mismatch")

    def copy(self) -> "FdmParams":
        return FdmParams(
            self.n_topics, self.n_tokens, self.mu_free.copy(), self.alpha_free.copy()
        )

    def alpha_matrix(self) -> np.ndarray:
        return tri_to_symmetric(self.alpha_free, self.n_topics)


class FdmDist:
    """Realized model: row-stochastic topics and the symmetric mixing matrix.

    Log-probabilities are cached at construction; entries of mu/alpha may be
    exactly zero when constructed directly (e.g. reference topic sets), in
    which case the corresponding log is -inf.
    """

    def __init__(self, mu, alpha, *, log_mu=None, log_alpha=None):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.alpha = np.asarray(alpha, dtype=np.float64)
        with np.errstate(divide="ignore"):
            self.log_mu = np.log(self.mu) if log_mu is None else log_mu
            self.log_alpha = np.log(self.alpha) if log_alpha is None else log_alpha

    @property
    def n_topics(self) -> int:
        return self.mu.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.mu.shape[1]

    def validate(self, tol: float = 1e-9) -> None:
        assert np.allclose(self.mu.sum(axis=1), 1.0, atol=tol)
        assert np.all(self.mu >= 0.0)
        assert np.allclose(self.alpha, self.alpha.T)
        assert np.all(self.alpha >= 0.0)
        assert abs(self.alpha.sum() - 1.0) <= tol


def realize(params: FdmParams) -> FdmDist:
    """Map free variables to distributions via row/matrix softmax."""
    log_mu = log_softmax(params.mu_free, axis=1)
    a = params.alpha_matrix()
    log_alpha = log_softmax(a.reshape(-1)).reshape(a.shape)
    return FdmDist(
        np.exp(log_mu), np.exp(log_alpha), log_mu=log_mu, log_alpha=log_alpha
    )


def params_from_probs(
    mu: np.ndarray, alpha: np.ndarray, floor: float = 1e-300
) -> FdmParams:
    """Free variables whose realization reproduces the given distributions.

    Zeros are floored so the free variables stay finite; the softmax image
    then carries negligible (but positive) mass there.
    """
    mu = np.asarray(mu, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    t, n = mu.shape
    mu_free = np.log(np.maximum(mu, floor))
    log_a = np.log(np.maximum(alpha, floor))
    return FdmParams(t, n, mu_free, log_a[np.triu_indices(t)])


def _pair_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pairs, tuple) and len(pairs) == 2:
        return np.asarray(pairs[0], dtype=np.int64), np.asarray(pairs[1], dtype=np.int64)
    arr = np.asarray(pairs, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0), arr.reshape(0)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DimensionMismatch("pairs must be (B, 2) or a (us, vs) tuple")
    return arr[:, 0], arr[:, 1]


def log_pair_probs(dist: FdmDist, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """log M[u, v] for each pair, via log-sum-exp over the T^2 terms."""
    lu = dist.log_mu[:, us].T  # (B, T)
    lv = dist.log_mu[:, vs].T  # (B, T)
    terms = dist.log_alpha[None, :, :] + lu[:, :, None] + lv[:, None, :]
    return logsumexp(terms, axis=(1, 2))


def fdm_entry(dist: FdmDist, u: int, v: int) -> float:
    """Model probability of the ordered token pair (u, v)."""
    return float(np.exp(log_pair_probs(dist, np.array([u]), np.array([v]))[0]))


def batch_loss(dist: FdmDist, pairs) -> float:
    """Sum of log pair probabilities over a sampled batch (ascent objective)."""
    us, vs = _pair_arrays(pairs)
    if len(us) == 0:
        raise ValueError("batch must be nonempty")
    return float(log_pair_probs(dist, us, vs).sum())


def full_loss(dist: FdmDist, cooc: CoocMatrix, chunk: int = 65536) -> float:
    """Exact cross-entropy -sum w * log M[u, v] over the stored entries.

    This is the evaluation-time objective; training never forms it.
    """
    if cooc.n != dist.n_tokens:
        raise DimensionMismatch(
            f"matrix over {cooc.n} tokens vs model over {dist.n_tokens}"
        )
    total = 0.0
    for lo in range(0, cooc.nnz, chunk):
        hi = min(lo + chunk, cooc.nnz)
        lp = log_pair_probs(dist, cooc.us[lo:hi], cooc.vs[lo:hi])
        total -= float(np.dot(cooc.ws[lo:hi], lp))
    return total


def batch_loss_and_gradient(params: FdmParams, pairs):
    """Batch objective and its exact gradient in the free variables.

    Responsibilities r_b[i, j] = alpha[i,j] mu[i,u_b] mu[j,v_b] / M[u_b,v_b]
    drive both pieces: the mixing-matrix gradient (pre-softmax) is
    sum_b r_b - B * alpha, and topic row t of the mu gradient accumulates
    its row/column responsibility mass at the batch tokens minus the softmax
    normalization term mu[t, :] * (total mass assigned to t).
    """
    us, vs = _pair_arrays(pairs)
    if len(us) == 0:
        raise ValueError("batch must be nonempty")
    b = len(us)
    dist = realize(params)
    t, n = params.n_topics, params.n_tokens

    lu = dist.log_mu[:, us].T
    lv = dist.log_mu[:, vs].T
    terms = dist.log_alpha[None, :, :] + lu[:, :, None] + lv[:, None, :]
    logp = logsumexp(terms, axis=(1, 2))
    objective = float(logp.sum())

    resp = np.exp(terms - logp[:, None, None])  # (B, T, T)
    resp_total = resp.sum(axis=0)  # (T, T)
    row_mass = resp.sum(axis=2)  # (B, T): topic explaining u_b
    col_mass = resp.sum(axis=1)  # (B, T): topic explaining v_b

    acc = np.zeros((n, t))
    np.add.at(acc, us, row_mass)
    np.add.at(acc, vs, col_mass)
    topic_mass = row_mass.sum(axis=0) + col_mass.sum(axis=0)  # (T,)
    grad_mu = acc.T - dist.mu * topic_mass[:, None]

    grad_alpha_full = resp_total - b * dist.alpha
    grad_alpha = fold_symmetric_grad(grad_alpha_full)
    return objective, grad_mu, grad_alpha


def batch_gradient(params: FdmParams, pairs):
    """Gradient of batch_loss(realize(params), pairs) in the free variables."""
    _, grad_mu, grad_alpha = batch_loss_and_gradient(params, pairs)
    return grad_mu, grad_alpha


def dense_matrix(dist: FdmDist) -> np.ndarray:
    """Materialize the full N x N pair matrix (test scale only)."""
    return dist.mu.T @ dist.alpha @ dist.mu


def save_prob_matrix(path: str, mat: np.ndarray) -> None:
    """Text matrix format: header "rows cols", one row per line, 17-digit
    scientific notation (lossless for 64-bit floats)."""
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]}\n")
        for row in mat:
            fh.write(" ".join(f"{x:.17e}" for x in row) + "\n")


def load_prob_matrix(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: bad matrix header")
        rows, cols = int(header[0]), int(header[1])
        out = np.empty((rows, cols))
        for i in range(rows):
            vals = fh.readline().split()
            if len(vals) != cols:
                raise FormatError(f"{path}: row {i} has {len(vals)} != {cols} values")
            out[i] = [float(x) for x in vals]
    return out


def export_top_tokens(path: str, mu: np.ndarray, tokens, k: int = 10) -> None:
    """Human-readable per-topic list of the k highest-probability tokens."""
    with open(path, "w", encoding="utf-8") as fh:
        for t, row in enumerate(mu):
            top = np.argsort(row)[::-1][:k]
            cells = " ".join(f"{tokens[u]}:{row[u]:.4f}" for u in top)
            fh.write(f"topic {t}: {cells}\n")
