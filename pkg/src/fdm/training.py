"""Stochastic training loop.

Each step samples a fresh batch of token pairs from the co-occurrence
matrix, computes the analytic gradient of the batch objective, and applies
a bias-corrected adaptive-moment (Adam) ascent update to the free
variables. Convergence is declared when the exponential moving average of
the per-pair objective stays flat across a window of periodic checks.

Batch randomness is counter-based: step s draws from a Philox stream keyed
by (seed, s), so a resumed run replays the exact trajectory of an
uninterrupted one.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .cooccurrence import CoocMatrix, PairSampler
from .errors import FormatError, NonFiniteLoss
from .model import (
    FdmParams,
    batch_loss_and_gradient,
    full_loss,
    realize,
    tri_length,
)

_CKPT_MAGIC = b"FDMCKPT1"


@dataclass
class TrainConfig:
    n_topics: int
    batch_size: int = 1024
    learning_rate: float = 1e-3
    max_steps: int = 200_000
    conv_window: int = 20
    conv_tol: float = 1e-4
    check_every: int = 500
    init_scale: float = 0.1
    seed: int = 0
    ema_decay: float = 0.99
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    checkpoint_path: str | None = None
    full_loss_every: int = 0  # record exact loss in the trace (diagnostics)
    freeze_topics: bool = False  # fit the mixing matrix only

    def validate(self) -> None:
        if self.n_topics < 1:
            raise ValueError("need at least one topic")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.conv_window < 2:
            raise ValueError("convergence window must be >= 2")
        if self.init_scale < 0:
            raise ValueError("init scale must be >= 0")
        if not 0 <= self.seed < 2**63:
            raise ValueError("seed must be a nonnegative 63-bit integer")


@dataclass
class AdamState:
    m_mu: np.ndarray
    v_mu: np.ndarray
    m_alpha: np.ndarray
    v_alpha: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: FdmParams) -> "AdamState":
        return cls(
            m_mu=np.zeros_like(params.mu_free),
            v_mu=np.zeros_like(params.mu_free),
            m_alpha=np.zeros_like(params.alpha_free),
            v_alpha=np.zeros_like(params.alpha_free),
        )


@dataclass
class TrainTrace:
    ema_objective: list[float] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)
    full_loss_checks: list[tuple[int, float]] = field(default_factory=list)
    converged: bool = False
    converged_step: int | None = None

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step,ema_objective,seconds\n")
            for i, (e, s) in enumerate(zip(self.ema_objective, self.step_seconds)):
                fh.write(f"{i},{e:.17e},{s:.6e}\n")


def init_params(t: int, n: int, init_scale: float, seed: int) -> FdmParams:
    """Gaussian(0, init_scale^2) free variables, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    mu_free = rng.normal(0.0, init_scale, size=(t, n)) if init_scale > 0 else np.zeros((t, n))
    alpha_free = (
        rng.normal(0.0, init_scale, size=tri_length(t))
        if init_scale > 0
        else np.zeros(tri_length(t))
    )
    return FdmParams(t, n, mu_free, alpha_free)


def optimizer_step(
    state: AdamState,
    params: FdmParams,
    grad_mu: np.ndarray,
    grad_alpha: np.ndarray,
    lr: float,
):
    """One bias-corrected adaptive-moment ascent update, in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for m, v, g, target in (
        (state.m_mu, state.v_mu, grad_mu, params.mu_free),
        (state.m_alpha, state.v_alpha, grad_alpha, params.alpha_free),
    ):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        target += lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def _step_rng(seed: int, step: int) -> np.random.Generator:
    key = np.array([seed, step], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def train(
    cooc: CoocMatrix,
    config: TrainConfig,
    init: FdmParams | None = None,
    resume: str | None = None,
) -> tuple[FdmParams, TrainTrace]:
    """Run the sampled-batch ascent loop until convergence or max_steps.

    ``init`` supplies starting free variables (copied, not mutated);
    ``resume`` continues from a checkpoint file instead.
    """
    config.validate()
    if cooc.nnz == 0:
        raise ValueError("empty co-occurrence matrix")

    ema = None
    last_check = None
    streak = 0
    if resume is not None:
        params, state, ema, last_check, streak = load_checkpoint(resume)
        if params.n_tokens != cooc.n:
            raise FormatError(
                f"checkpoint over {params.n_tokens} tokens, matrix over {cooc.n}"
            )
    else:
        params = (
            init.copy()
            if init is not None
            else init_params(config.n_topics, cooc.n, config.init_scale, config.seed)
        )
        state = AdamState.for_params(params)

    sampler = PairSampler(cooc)
    trace = TrainTrace()
    tiny = np.finfo(np.float64).tiny

    for step in range(state.step, config.max_steps):
        t0 = time.perf_counter()
        us, vs = sampler.sample(config.batch_size, rng=_step_rng(config.seed, step))
        objective, grad_mu, grad_alpha = batch_loss_and_gradient(params, (us, vs))
        if not np.isfinite(objective):
            raise NonFiniteLoss(
                f"objective {objective} at step {step}; try a lower learning rate"
            )
        if config.freeze_topics:
            grad_mu[:] = 0.0
        optimizer_step(state, params, grad_mu, grad_alpha, config.learning_rate)

        per_pair = objective / config.batch_size
        ema = per_pair if ema is None else config.ema_decay * ema + (1.0 - config.ema_decay) * per_pair
        trace.ema_objective.append(ema)
        trace.step_seconds.append(time.perf_counter() - t0)

        done = step + 1
        if config.full_loss_every > 0 and done % config.full_loss_every == 0:
            trace.full_loss_checks.append((done, full_loss(realize(params), cooc)))
        converged = False
        if done % config.check_every == 0:
            if last_check is not None:
                rel = abs(ema - last_check) / max(abs(last_check), tiny)
                streak = streak + 1 if rel < config.conv_tol else 0
            last_check = ema
            converged = streak >= config.conv_window
        if config.checkpoint_every > 0 and config.checkpoint_path is not None:
            if done % config.checkpoint_every == 0:
                save_checkpoint(config.checkpoint_path, params, state, ema, last_check, streak)
        if converged:
            trace.converged = True
            trace.converged_step = done
            break

    return params, trace


def save_checkpoint(
    path: str,
    params: FdmParams,
    state: AdamState,
    ema: float | None = None,
    last_check: float | None = None,
    streak: int = 0,
) -> None:
    """Versioned binary dump of free variables and optimizer accumulators."""
    header = _CKPT_MAGIC + struct.pack(
        "<IIIQdddddI",
        1,  # format version
        params.n_topics,
        params.n_tokens,
        state.step,
        state.beta1,
        state.beta2,
        state.eps,
        np.nan if ema is None else ema,
        np.nan if last_check is None else last_check,
        streak,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (
            params.mu_free,
            params.alpha_free,
            state.m_mu,
            state.v_mu,
            state.m_alpha,
            state.v_alpha,
        ):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str):
    header_fmt = "<IIIQdddddI"
    header_len = len(_CKPT_MAGIC) + struct.calcsize(header_fmt)
    with open(path, "rb") as fh:
        head = fh.read(header_len)
        if len(head) != header_len or head[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        version, t, n, step, b1, b2, eps, ema, last_check, streak = struct.unpack(
            header_fmt, head[len(_CKPT_MAGIC) :]
        )
        if version != 1:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        payload = np.frombuffer(fh.read(), dtype="<f8")
    tri = tri_length(t)
    expected = 3 * t * n + 3 * tri
    if payload.size != expected:
        raise FormatError(
            f"{path}: payload has {payload.size} values, expected {expected}"
        )
    off = 0

    def take(count: int, shape) -> np.ndarray:
        nonlocal off
        out = payload[off : off + count].reshape(shape).copy()
        off += count
        return out

    params = FdmParams(t, n, take(t * n, (t, n)), take(tri, (tri,)))
    state = AdamState(
        m_mu=take(t * n, (t, n)),
        v_mu=take(t * n, (t, n)),
        m_alpha=take(tri, (tri,)),
        v_alpha=take(tri, (tri,)),
        step=step,
        beta1=b1,
        beta2=b2,
        eps=eps,
    )
    ema_val = None if np.isnan(ema) else ema
    check_val = None if np.isnan(last_check) else last_check
    return params, state, ema_val, check_val, streak
