"""Trainer: initialization, the adaptive-moment update, the training loop,
and checkpoint round-trips."""

import numpy as np
import pytest

import fdm.training as training
from fdm.cooccurrence import CoocMatrix, corpus_cooc
from fdm.errors import FormatError, NonFiniteLoss
from fdm.evaluation import TopicSet, matching_error
from fdm.model import FdmParams, dense_matrix, full_loss, params_from_probs, realize
from fdm.synthetic import (
    DirichletPrior,
    GroundTruth,
    estimate_theta_moment,
    gen_corpus,
    interval_topics,
)
from fdm.training import (
    AdamState,
    TrainConfig,
    init_params,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
    train,
)


def cooc_from_dense(arr):
    arr = np.asarray(arr, dtype=np.float64)
    us, vs = np.nonzero(arr)
    return CoocMatrix(n=arr.shape[0], us=us, vs=vs, ws=arr[us, vs])


class TestInitParams:
    def test_zero_scale_gives_uniform_model(self):
        params = init_params(3, 5, 0.0, seed=0)
        assert not params.mu_free.any()
        assert not params.alpha_free.any()
        dist = realize(params)
        np.testing.assert_allclose(dist.mu, 0.2)
        np.testing.assert_allclose(dist.alpha, 1 / 9)

    def test_deterministic(self):
        a = init_params(4, 100, 0.1, seed=5)
        b = init_params(4, 100, 0.1, seed=5)
        np.testing.assert_array_equal(a.mu_free, b.mu_free)
        np.testing.assert_array_equal(a.alpha_free, b.alpha_free)

    def test_realized_rows_normalized(self):
        dist = realize(init_params(4, 100, 0.1, seed=1))
        np.testing.assert_allclose(dist.mu.sum(axis=1), 1.0, atol=1e-9)


class TestOptimizerStep:
    def test_zero_gradient_no_change(self):
        params = init_params(2, 4, 0.1, seed=3)
        before_mu = params.mu_free.copy()
        before_alpha = params.alpha_free.copy()
        state = AdamState.for_params(params)
        optimizer_step(state, params, np.zeros((2, 4)), np.zeros(3), lr=0.01)
        np.testing.assert_array_equal(params.mu_free, before_mu)
        np.testing.assert_array_equal(params.alpha_free, before_alpha)

    def test_first_step_hand_formula(self):
        # bias correction makes the first update lr * g / (|g| + eps)
        params = FdmParams(1, 3, np.zeros((1, 3)), np.zeros(1))
        state = AdamState.for_params(params)
        g = np.array([[2.0, -0.5, 0.0]])
        optimizer_step(state, params, g, np.zeros(1), lr=0.1)
        want = 0.1 * g / (np.abs(g) + state.eps)
        np.testing.assert_allclose(params.mu_free, want, rtol=1e-12)

    def test_constant_gradient_step_magnitude(self):
        # for constant g the corrected moments stay m=g, v=g^2, so every
        # update has magnitude lr * |g| / (|g| + eps) ~ lr
        params = FdmParams(1, 2, np.zeros((1, 2)), np.zeros(1))
        state = AdamState.for_params(params)
        g = np.array([[3.0, -0.25]])
        prev = params.mu_free.copy()
        for _ in range(50):
            optimizer_step(state, params, g, np.zeros(1), lr=0.01)
            step = params.mu_free - prev
            np.testing.assert_allclose(np.abs(step), 0.01, rtol=1e-6)
            np.testing.assert_allclose(np.sign(step), np.sign(g))
            prev = params.mu_free.copy()


class TestTrainLoop:
    def _point_cooc(self):
        return CoocMatrix(
            n=3, us=np.array([0, 1]), vs=np.array([1, 0]), ws=np.array([0.5, 0.5])
        )

    def test_max_steps_zero_returns_init(self):
        cooc = self._point_cooc()
        cfg = TrainConfig(n_topics=2, max_steps=0, seed=1)
        init = init_params(2, 3, 0.1, seed=1)
        params, trace = train(cooc, cfg, init=init)
        np.testing.assert_array_equal(params.mu_free, init.mu_free)
        assert trace.ema_objective == []
        assert not trace.converged

    def test_deterministic_given_seed(self):
        cooc = self._point_cooc()
        cfg = TrainConfig(n_topics=2, batch_size=32, max_steps=200, seed=9)
        a, _ = train(cooc, cfg)
        b, _ = train(cooc, cfg)
        np.testing.assert_array_equal(a.mu_free, b.mu_free)
        np.testing.assert_array_equal(a.alpha_free, b.alpha_free)

    def test_single_topic_recovers_marginal(self):
        # with one topic the optimum is the matrix row marginal
        rng = np.random.default_rng(0)
        nu = rng.dirichlet(np.ones(6))
        cooc = cooc_from_dense(np.outer(nu, nu))
        cfg = TrainConfig(
            n_topics=1, batch_size=256, learning_rate=1e-3,
            max_steps=10_000, seed=1, conv_tol=0.0,
        )
        params, _ = train(cooc, cfg)
        mu = realize(params).mu[0]
        assert np.abs(mu - cooc.marginal()).sum() < 0.01

    def test_nonfinite_objective_raises(self, monkeypatch):
        cooc = self._point_cooc()
        monkeypatch.setattr(
            training,
            "batch_loss_and_gradient",
            lambda params, pairs: (float("nan"), 0, 0),
        )
        with pytest.raises(NonFiniteLoss):
            train(cooc, TrainConfig(n_topics=2, max_steps=5, seed=0))

    def test_config_validation(self):
        cooc = self._point_cooc()
        for bad in (
            TrainConfig(n_topics=0),
            TrainConfig(n_topics=1, batch_size=0),
            TrainConfig(n_topics=1, learning_rate=0.0),
            TrainConfig(n_topics=1, conv_window=1),
            TrainConfig(n_topics=1, init_scale=-1.0),
            TrainConfig(n_topics=1, seed=-3),
        ):
            with pytest.raises(ValueError):
                train(cooc, bad)

    def test_full_loss_settles(self):
        # exact loss evaluated every 500 steps stops decreasing once the
        # iterate reaches the noise floor
        rng = np.random.default_rng(3)
        target = realize(FdmParams(2, 6, rng.normal(0, 1, (2, 6)), rng.normal(0, 1, 3)))
        cooc = cooc_from_dense(dense_matrix(target))
        cfg = TrainConfig(
            n_topics=2, batch_size=512, learning_rate=5e-3, max_steps=5000,
            seed=7, conv_tol=0.0, full_loss_every=500,
        )
        _, trace = train(cooc, cfg)
        values = [v for step, v in trace.full_loss_checks if step >= 2000]
        assert len(values) >= 5
        for prev, cur in zip(values, values[1:]):
            assert cur <= prev + 1e-3

    def test_frozen_topics_only_move_alpha(self):
        cooc = self._point_cooc()
        init = init_params(2, 3, 0.1, seed=4)
        cfg = TrainConfig(n_topics=2, batch_size=16, max_steps=50, seed=4, freeze_topics=True)
        params, _ = train(cooc, cfg, init=init)
        np.testing.assert_array_equal(params.mu_free, init.mu_free)
        assert not np.array_equal(params.alpha_free, init.alpha_free)


class TestCheckpoint:
    def _run(self, tmp_path, steps, resume_at=None):
        cooc = CoocMatrix(
            n=4,
            us=np.array([0, 1, 2]),
            vs=np.array([1, 0, 2]),
            ws=np.array([0.4, 0.4, 0.2]),
        )
        cfg = TrainConfig(n_topics=2, batch_size=64, max_steps=steps, seed=11)
        if resume_at is None:
            return train(cooc, cfg)
        path = str(tmp_path / "ckpt.bin")
        cfg_first = TrainConfig(
            n_topics=2, batch_size=64, max_steps=resume_at, seed=11,
            checkpoint_every=resume_at, checkpoint_path=path,
        )
        train(cooc, cfg_first)
        return train(cooc, cfg, resume=path)

    def test_resume_matches_uninterrupted(self, tmp_path):
        direct, _ = self._run(tmp_path, steps=20)
        resumed, _ = self._run(tmp_path, steps=20, resume_at=10)
        np.testing.assert_array_equal(direct.mu_free, resumed.mu_free)
        np.testing.assert_array_equal(direct.alpha_free, resumed.alpha_free)

    def test_state_round_trip(self, tmp_path):
        params = init_params(3, 7, 0.2, seed=2)
        state = AdamState.for_params(params)
        state.step = 42
        state.m_mu += 0.5
        state.v_alpha += 0.25
        path = str(tmp_path / "ckpt.bin")
        save_checkpoint(path, params, state, ema=-1.25, last_check=-1.5, streak=3)
        p2, s2, ema, last_check, streak = load_checkpoint(path)
        np.testing.assert_array_equal(p2.mu_free, params.mu_free)
        np.testing.assert_array_equal(p2.alpha_free, params.alpha_free)
        np.testing.assert_array_equal(s2.m_mu, state.m_mu)
        np.testing.assert_array_equal(s2.v_alpha, state.v_alpha)
        assert s2.step == 42
        assert ema == -1.25 and last_check == -1.5 and streak == 3

    def test_missing_file(self):
        with pytest.raises(OSError):
            load_checkpoint("/nonexistent/ckpt.bin")

    def test_corrupted_magic(self, tmp_path):
        path = tmp_path / "ckpt.bin"
        path.write_bytes(b"BADMAGIC" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_checkpoint(str(path))

    def test_truncated_payload(self, tmp_path):
        params = init_params(2, 5, 0.1, seed=1)
        state = AdamState.for_params(params)
        path = str(tmp_path / "ckpt.bin")
        save_checkpoint(path, params, state)
        data = open(path, "rb").read()
        open(path, "wb").write(data[:-16])
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestLossDirection:
    def test_truth_beats_perturbed_topics(self):
        # generative check: at large D the exact loss of the true model is
        # below the loss of a model whose topics swap 20% of their mass
        topics = interval_topics(100, [(1, 40), (30, 70), (60, 100)])
        gt = GroundTruth(
            topics=topics,
            prior=DirichletPrior(np.array([2.0, 1.0, 1.5])),
            tokens_per_doc=30,
            n_docs=100_000,
            seed=11,
        )
        cooc = corpus_cooc(gen_corpus(gt))
        theta = estimate_theta_moment(gt.prior, 200_000, seed=5)
        truth = realize(params_from_probs(topics.probs, theta))

        mu_p = topics.probs.copy()
        mu_p[0] = 0.8 * topics.probs[0] + 0.2 * topics.probs[1]
        mu_p[1] = 0.8 * topics.probs[1] + 0.2 * topics.probs[0]
        perturbed = realize(params_from_probs(mu_p, theta))

        assert full_loss(truth, cooc) < full_loss(perturbed, cooc)
