import math

import numpy as np
import pytest

from rgan_lab import tensor as T
from rgan_lab.data import DataSource, TrainingData
from rgan_lab.gan_core import (
    DivergenceError,
    GanConfig,
    baseline_train_step,
    d_loss_baseline,
    g_loss_baseline,
    init_state,
    sample_latent,
    train,
    train_baseline,
)
from rgan_lab.tensor import Tape

from conftest import scalar_mlp
from _fd import numeric_grad, rel_err


def constant_disc(value):
    def D(x):
        n = T.as_tensor(x).shape[0]
        return T.Tensor(np.full((n, 1), value))

    return D


def split_disc(real_value, fake_value, m):
    """Returns real_value on the first m rows and fake_value on the rest."""

    def D(x):
        n = T.as_tensor(x).shape[0]
        out = np.full((n, 1), fake_value)
        out[:m] = real_value
        return T.Tensor(out)

    return D


class TestSampleLatent:
    def test_shape_and_determinism(self):
        a = sample_latent(5, 3, np.random.default_rng(1))
        b = sample_latent(5, 3, np.random.default_rng(1))
        assert a.shape == (5, 3) and np.array_equal(a, b)

    def test_moments(self):
        z = sample_latent(100_000, 1, np.random.default_rng(0))
        # 3 sigma bounds: mean sd = 0.0032, variance sd = 0.0045
        assert abs(z.mean()) < 0.02 and abs(z.var() - 1) < 0.02


class TestLosses:
    def test_half_discriminator(self):
        identity = lambda z: T.as_tensor(z)  # noqa: E731
        x = np.zeros((4, 2))
        s = d_loss_baseline(constant_disc(0.5), x, x, identity).item()
        assert s == pytest.approx(-2 * math.log(2), abs=1e-12)
        assert s == pytest.approx(-1.386294, abs=1e-6)

    def test_confident_discriminator(self):
        identity = lambda z: T.as_tensor(z)  # noqa: E731
        x = np.zeros((3, 2))
        s = d_loss_baseline(split_disc(0.9, 0.1, 3), x, x, identity).item()
        assert s == pytest.approx(2 * math.log(0.9), abs=1e-12)
        assert s == pytest.approx(-0.21072, abs=1e-5)

    def test_generator_half(self):
        identity = lambda z: T.as_tensor(z)  # noqa: E731
        z = np.zeros((4, 2))
        assert g_loss_baseline(constant_disc(0.5), z, identity, "minimax").item() == pytest.approx(-math.log(2))
        assert g_loss_baseline(constant_disc(0.5), z, identity, "non_saturating").item() == pytest.approx(math.log(2))

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            g_loss_baseline(constant_disc(0.5), np.zeros((2, 2)), lambda z: T.as_tensor(z), "hinge")

    def test_batch_sizes_must_match(self):
        with pytest.raises(ValueError):
            d_loss_baseline(constant_disc(0.5), np.zeros((3, 2)), np.zeros((4, 2)), lambda z: T.as_tensor(z))

    def test_losses_match_scalar_oracle(self, tiny_nets):
        rng = np.random.default_rng(0)
        for seed in range(10):
            G, D = tiny_nets(seed)
            x, z = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
            real = [scalar_mlp(D.params, D.spec, row)[0] for row in x]
            fake = [scalar_mlp(D.params, D.spec, scalar_mlp(G.params, G.spec, row))[0] for row in z]
            s_ref = sum(math.log(d) for d in real) / 6 + sum(math.log(1 - d) for d in fake) / 6
            g_ref = sum(math.log(1 - d) for d in fake) / 6
            ns_ref = -sum(math.log(d) for d in fake) / 6
            assert d_loss_baseline(D, x, z, G).item() == pytest.approx(s_ref, abs=1e-12)
            assert g_loss_baseline(D, z, G, "minimax").item() == pytest.approx(g_ref, abs=1e-12)
            assert g_loss_baseline(D, z, G, "non_saturating").item() == pytest.approx(ns_ref, abs=1e-12)

    def test_constant_half_maximizes_over_constants(self):
        # S at constant d is log d + log(1 - d); peak at d = 0.5
        identity = lambda z: T.as_tensor(z)  # noqa: E731
        x = np.zeros((2, 2))
        values = {d: d_loss_baseline(constant_disc(d), x, x, identity).item() for d in np.linspace(0.05, 0.95, 19)}
        assert max(values, key=values.get) == pytest.approx(0.5)

    def test_loss_gradients_match_finite_differences(self, tiny_nets):
        rng = np.random.default_rng(1)
        G, D = tiny_nets(3)
        for _ in range(100):
            x, z = rng.uniform(-2, 2, size=(4, 2)), rng.uniform(-2, 2, size=(4, 2))
            tape = Tape()
            bd = D.on(tape)
            gd = bd.grads(tape.backward(d_loss_baseline(bd, x, z, G)))
            tape = Tape()
            bg = G.on(tape)
            gg = bg.grads(tape.backward(g_loss_baseline(D, z, bg)))

            def d_obj(w):
                D.params.weights[0][...] = w
                return d_loss_baseline(D, x, z, G).item()

            def g_obj(w):
                G.params.weights[1][...] = w
                return g_loss_baseline(D, z, G).item()

            w0, w1 = D.params.weights[0].copy(), G.params.weights[1].copy()
            nd, ng = numeric_grad(d_obj, w0), numeric_grad(g_obj, w1)
            D.params.weights[0][...] = w0
            G.params.weights[1][...] = w1
            assert rel_err(gd.weights[0], nd) < 1e-5
            assert rel_err(gg.weights[1], ng) < 1e-5

    def test_losses_finite_for_saturated_discriminator(self):
        identity = lambda z: T.as_tensor(z)  # noqa: E731
        x = np.zeros((2, 2))
        for d in (0.0, 1.0):
            assert math.isfinite(d_loss_baseline(constant_disc(d), x, x, identity).item())
            assert math.isfinite(g_loss_baseline(constant_disc(d), x, identity).item())


class TestData:
    def test_ring_centers(self):
        c = DataSource().mode_centers()
        assert c.shape == (8, 2)
        np.testing.assert_allclose(np.linalg.norm(c, axis=1), 2.0)

    def test_grid_centers(self):
        c = DataSource(kind="grid_of_gaussians").mode_centers()
        assert c.shape == (25, 2) and c.min() == -4.0 and c.max() == 4.0

    def test_discrete_probabilities_validated(self):
        with pytest.raises(ValueError):
            DataSource(kind="discrete_1d", probs=(0.5, 0.6))
        with pytest.raises(ValueError):
            DataSource(sigma=0.0)
        x = DataSource(kind="discrete_1d", probs=(0.25, 0.75)).sample(40_000, np.random.default_rng(0))
        assert abs(x.mean() - 0.75) < 0.01

    def test_two_moons_shape(self):
        assert DataSource(kind="two_moons").sample(10, np.random.default_rng(0)).shape == (10, 2)

    def test_fixed_training_set(self):
        src = DataSource(train_size=16)
        a, b = TrainingData(src, 1), TrainingData(src, 1)
        assert np.array_equal(a.fixed, b.fixed)
        batch = a.batch(100, np.random.default_rng(0))
        assert all(any(np.array_equal(row, f) for f in a.fixed) for row in batch)


class TestTraining:
    CFG = GanConfig(m=16, steps=30, hidden=(8, 8), seed=4)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GanConfig(m=1)
        with pytest.raises(ValueError):
            GanConfig(d_steps_per_g_step=0)
        with pytest.raises(ValueError):
            GanConfig(loss_variant="wasserstein")

    def test_deterministic(self):
        a, _ = train_baseline(self.CFG, DataSource())
        b, _ = train_baseline(self.CFG, DataSource())
        assert a.G.params == b.G.params and a.D.params == b.D.params
        assert a.last_d_loss == b.last_d_loss and a.step == 30

    def test_seed_changes_trajectory(self):
        a, _ = train_baseline(self.CFG, DataSource())
        b, _ = train_baseline(GanConfig(m=16, steps=30, hidden=(8, 8), seed=5), DataSource())
        assert not a.G.params == b.G.params

    def test_eval_schedule(self):
        _, records = train_baseline(self.CFG, DataSource(), eval_fn=lambda s: {"step": s.step}, eval_interval=10)
        assert [r["step"] for r in records] == [0, 10, 20, 30]

    def test_eval_only(self):
        state = init_state(self.CFG, DataSource())
        before = state.G.params.copy()
        records = list(train(state, 0, lambda s: baseline_train_step(s, self.CFG), lambda s: {"step": s.step}))
        assert records == [{"step": 0}] and state.G.params == before

    def test_d_steps_per_g_step(self):
        cfg = GanConfig(m=16, steps=3, hidden=(8,), d_steps_per_g_step=3)
        state = init_state(cfg, DataSource())
        for _ in range(3):
            baseline_train_step(state, cfg)
        assert state.opt_d.t == 9 and state.opt_g.t == 3

    def test_divergence_is_reported(self):
        cfg = GanConfig(m=16, steps=5, hidden=(8,), lr_g=1e300, lr_d=1e300)
        with pytest.raises(DivergenceError):
            train_baseline(cfg, DataSource())
