import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vedgefl.core import ModelParams, WeightPolicy, compute_emd
from vedgefl.errors import DomainError, TrainingDivergedError
from vedgefl.fl import (MLP, Dataset, FLState, Participant, SoftmaxRegression, SyntheticTask, TrainerConfig,
                        accuracy, dirichlet_partition, generate_synthetic, local_train, run_round,
                        train_augmented)
from vedgefl.rng import substream
from oracles import binary_logistic_step, central_diff


def small_task(**kw):
    base = dict(n_classes=4, n_features=5, class_sep=1.0, n_train=400, n_test=200, seed=3)
    base.update(kw)
    return SyntheticTask(**base)


class TestLearners:
    def test_single_step_matches_hand_derivation(self):
        rng = np.random.default_rng(0)
        theta = rng.normal(size=6)
        x = rng.normal(size=2)
        learner = SoftmaxRegression(2, 2, l2=0.0)
        data = Dataset(x[None, :], np.array([1]))
        cfg = TrainerConfig(eta=0.3, local_steps=1, batch_size=None)
        out = local_train(learner, ModelParams(theta), data, cfg, substream(0, "t"))
        np.testing.assert_allclose(out.theta, binary_logistic_step(list(theta), list(x), 1, 0.3), rtol=1e-12)

    @pytest.mark.parametrize("learner", [SoftmaxRegression(5, 4, l2=1e-2), MLP(5, 4, hidden=6, l2=1e-2)],
                             ids=["softmax", "mlp"])
    def test_gradient_matches_finite_differences(self, learner):
        rng = np.random.default_rng(1)
        theta = rng.normal(scale=0.5, size=learner.dim)
        X = rng.normal(size=(12, 5))
        y = rng.integers(0, 4, 12)
        _, grad = learner.loss_grad(theta, X, y)
        for i in range(learner.dim):
            e = np.zeros(learner.dim)
            e[i] = 1.0
            fd = central_diff(lambda s: learner.loss_grad(theta + s * e, X, y)[0], 0.0, 1e-5)
            assert abs(fd - grad[i]) < 1e-4

    def test_zero_step_size_leaves_params(self):
        learner = SoftmaxRegression(5, 4)
        p = ModelParams(np.random.default_rng(2).normal(size=learner.dim))
        train, _ = small_task().split()
        out = local_train(learner, p, train, TrainerConfig(eta=0.0), substream(0, "t"))
        assert np.array_equal(out.theta, p.theta)

    def test_divergence_raises(self):
        learner = SoftmaxRegression(5, 4)
        train, _ = small_task().split()
        with pytest.raises(TrainingDivergedError, match="non-finite"):
            local_train(learner, learner.init(), train, TrainerConfig(eta=1e300, local_steps=5),
                        substream(0, "t"))


class TestPartition:
    def test_large_alpha_is_near_iid(self):
        labels = np.resize(np.arange(10), 10000)
        _, hists = dirichlet_partition(labels, 5, 1e6, 10, np.random.default_rng(0))
        for h in hists:
            assert h.total >= 1000
            assert compute_emd(h).emd < 0.05

    def test_small_alpha_is_more_skewed(self):
        labels = np.resize(np.arange(10), 2000)
        means = {}
        for alpha in (0.1, 1.0):
            vals = []
            for trial in range(100):
                _, hists = dirichlet_partition(labels, 5, alpha, 10, np.random.default_rng(trial))
                vals += [compute_emd(h).emd for h in hists if h.total > 0]
            means[alpha] = np.mean(vals)
        assert means[0.1] > means[1.0]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.floats(0.05, 10.0))
    def test_conserves_samples(self, seed, n_vehicles, alpha):
        labels = np.random.default_rng(seed).integers(0, 6, 300)
        idx, hists = dirichlet_partition(labels, n_vehicles, alpha, 6, np.random.default_rng(seed))
        allidx = np.concatenate(idx)
        assert sorted(allidx.tolist()) == list(range(300))
        assert sum(h.total for h in hists) == 300

    def test_deterministic(self):
        labels = np.resize(np.arange(10), 500)
        a, _ = dirichlet_partition(labels, 4, 0.3, 10, substream(5, "partition"))
        b, _ = dirichlet_partition(labels, 4, 0.3, 10, substream(5, "partition"))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_bad_alpha(self):
        with pytest.raises(DomainError):
            dirichlet_partition(np.zeros(3, dtype=int), 2, 0.0, 2, np.random.default_rng(0))


class TestGeneration:
    def test_zero_budget_is_empty(self):
        d = generate_synthetic(small_task(), [0, 1], 0, 0.0, np.random.default_rng(0))
        assert len(d) == 0 and d.X.shape == (0, 5)

    def test_equal_split_over_labels(self):
        task = small_task(n_classes=10)
        d = generate_synthetic(task, list(range(10)), 50, 0.0, np.random.default_rng(0))
        assert np.bincount(d.y, minlength=10).tolist() == [5] * 10

    def test_unshifted_generator_matches_real_data(self):
        gaps = []
        for seed in range(10):
            task = small_task(seed=seed, class_sep=0.8)
            train, test = task.split()
            learner = SoftmaxRegression(task.n_features, task.n_classes, l2=1e-3)
            cfg = TrainerConfig(eta=0.5, local_steps=200, batch_size=32)
            gen = generate_synthetic(task, range(task.n_classes), len(train), 0.0, substream(seed, "g"))
            real = local_train(learner, learner.init(), train, cfg, substream(seed, "a"))
            fake = local_train(learner, learner.init(), gen, cfg, substream(seed, "a"))
            gaps.append(accuracy(learner, real, test) - accuracy(learner, fake, test))
        assert abs(np.mean(gaps)) <= 0.03

    def test_shift_moves_means(self):
        task = small_task()
        mu = task.means
        np.testing.assert_allclose(task.generator_means(1.0), np.roll(mu, -1, axis=0))
        np.testing.assert_allclose(task.generator_means(0.0), mu)


class TestAugmentedTraining:
    def setup_method(self):
        self.task = small_task()
        self.train, self.test = self.task.split()
        self.learner = SoftmaxRegression(5, 4, l2=1e-3)

    def test_empty_set_is_identity(self):
        p = ModelParams(np.ones(self.learner.dim))
        out = train_augmented(self.learner, p, Dataset.empty(5), TrainerConfig(), substream(0, "a"))
        assert np.array_equal(out.theta, p.theta)

    def test_same_procedure_as_local_training(self):
        cfg = TrainerConfig(eta=0.2, local_steps=7, batch_size=16)
        a = train_augmented(self.learner, self.learner.init(), self.train, cfg, substream(4, "x"))
        b = local_train(self.learner, self.learner.init(), self.train, cfg, substream(4, "x"))
        assert np.array_equal(a.theta, b.theta)

    def test_small_step_full_batch_descends(self):
        cfg = TrainerConfig(eta=0.05, local_steps=1, batch_size=None)
        p = self.learner.init()
        losses = []
        for _ in range(20):
            losses.append(self.learner.loss_grad(p.theta, self.train.X, self.train.y)[0])
            p = train_augmented(self.learner, p, self.train, cfg, substream(0, "a"))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


class TestRound:
    def setup_method(self):
        self.task = small_task()
        self.train, self.test = self.task.split()
        self.learner = SoftmaxRegression(5, 4, l2=1e-3)
        idx, hists = dirichlet_partition(self.train.y, 3, 0.5, 4, substream(0, "partition"))
        self.parts = [Participant(v, self.train.subset(i), compute_emd(h).emd)
                      for v, (i, h) in enumerate(zip(idx, hists))]

    def state(self):
        return FLState(self.learner, self.learner.init(), Dataset.empty(5))

    def test_empty_selection_returns_augmented_model(self):
        cfg = TrainerConfig(eta=0.2, local_steps=5)
        s = self.state()
        out = run_round(s, self.task, [], 40, [0, 1, 2, 3], cfg, self.test, seed=9)
        expect = train_augmented(self.learner, self.learner.init(), s.generated, cfg, substream(9, "augment", 0))
        assert np.array_equal(s.params.theta, expect.theta)
        assert out.policy == WeightPolicy(0.0, 1.0) and "augmented-only" in out.flags
        assert out.n_generated == 40

    def test_idle_round(self):
        s = self.state()
        out = run_round(s, self.task, [], 0, [], TrainerConfig(), self.test, seed=9)
        assert "idle-round" in out.flags and np.array_equal(s.params.theta, self.learner.init().theta)

    def test_no_generation_is_fedavg(self):
        cfg = TrainerConfig(eta=0.2, local_steps=5)
        a, b = self.state(), self.state()
        for _ in range(3):
            oa = run_round(a, self.task, self.parts, 0, [0, 1], cfg, self.test, seed=2, scheme="genfv")
            ob = run_round(b, self.task, self.parts, 25, [0, 1], cfg, self.test, seed=2, scheme="fedavg")
        assert np.array_equal(a.params.theta, b.params.theta)
        assert oa.policy == ob.policy == WeightPolicy(1.0, 0.0)
        assert ob.cum_generated == 0

    def test_single_full_batch_step_is_centralized(self):
        cfg = TrainerConfig(eta=0.3, local_steps=1, batch_size=None)
        s = self.state()
        run_round(s, self.task, self.parts, 0, [], cfg, self.test, seed=1, scheme="fedavg")
        union = Dataset(np.concatenate([p.data.X for p in self.parts]), np.concatenate([p.data.y for p in self.parts]))
        _, g = self.learner.loss_grad(self.learner.init().theta, union.X, union.y)
        np.testing.assert_allclose(s.params.theta, -0.3 * g, atol=1e-12)

    def test_workers_do_not_change_result(self):
        cfg = TrainerConfig(eta=0.2, local_steps=5)
        a, b = self.state(), self.state()
        run_round(a, self.task, self.parts, 10, [0, 1, 2, 3], cfg, self.test, seed=4, workers=1)
        run_round(b, self.task, self.parts, 10, [0, 1, 2, 3], cfg, self.test, seed=4, workers=3)
        assert np.array_equal(a.params.theta, b.params.theta)

    def test_genfv_mixes_with_kappa(self):
        cfg = TrainerConfig(eta=0.2, local_steps=5)
        s = self.state()
        out = run_round(s, self.task, self.parts, 20, [0, 1, 2, 3], cfg, self.test, seed=4)
        emd = np.mean([p.emd for p in self.parts])
        assert out.policy.kappa2 == pytest.approx((emd / 2) ** 2)
        assert out.rho == pytest.approx([len(p.data) / len(self.train) for p in self.parts])

    def test_unknown_scheme(self):
        with pytest.raises(DomainError):
            run_round(self.state(), self.task, [], 0, [], TrainerConfig(), self.test, seed=0, scheme="x")
