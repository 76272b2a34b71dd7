import numpy as np
import pytest

from projtune.baselines import BaseOnlyOptimizer, Sgd
from projtune.errors import ConfigError, StateError
from projtune.ftp import make_managed
from projtune.hyperlr import ALPHA_FLOOR, HyperLrState, HyperSgd, hyper_sgd_lr_step
from projtune.model import Batch, MlpSpec, backward, init_params
from projtune.numerics import SeededRng


def quadratic_setup(seed=0, dim=4):
    # L(w) = mean_b |w x_b - y_b|^2 via a single linear layer
    spec = MlpSpec(widths=(dim, 2), loss="mse")
    rng = SeededRng(seed)
    values = init_params(spec, rng.derive(0))
    params = make_managed(values)
    batch = Batch(rng.derive(1).normal((12, dim)), rng.derive(2).normal((12, 2)))
    return spec, params, batch


def assign_grads(spec, params, batch):
    values = {name: p.value for name, p in params.items()}
    loss, grads = backward(spec, values, batch)
    for name, p in params.items():
        p.grad = grads[name]
    return loss


class TestAlphaUpdate:
    def make_params(self, g):
        params = make_managed({"w": np.zeros(len(g))})
        params["w"].grad = np.asarray(g, dtype=np.float64)
        return params

    def test_aligned_gradients_grow_alpha(self):
        state = HyperLrState(alpha=0.5, kappa_lr=0.1, prev_grad=np.array([1.0, 2.0]))
        hyper_sgd_lr_step(state, self.make_params([2.0, 1.0]))
        assert state.alpha == pytest.approx(0.9)  # dot = 4

    def test_orthogonal_gradients_keep_alpha(self):
        state = HyperLrState(alpha=0.5, kappa_lr=0.1, prev_grad=np.array([1.0, 0.0]))
        hyper_sgd_lr_step(state, self.make_params([0.0, 3.0]))
        assert state.alpha == 0.5

    def test_opposed_gradients_shrink_alpha(self):
        state = HyperLrState(alpha=0.5, kappa_lr=0.1, prev_grad=np.array([2.0, 2.0]))
        hyper_sgd_lr_step(state, self.make_params([-1.0, -1.0]))
        assert state.alpha == pytest.approx(0.1)  # dot = -4

    def test_alpha_floored(self):
        state = HyperLrState(alpha=0.01, kappa_lr=1.0, prev_grad=np.array([10.0]))
        hyper_sgd_lr_step(state, self.make_params([-10.0]))
        assert state.alpha == ALPHA_FLOOR

    def test_first_step_skips_alpha_update(self):
        state = HyperLrState(alpha=0.25, kappa_lr=0.1)
        params = self.make_params([1.0, 1.0])
        hyper_sgd_lr_step(state, params)
        assert state.alpha == 0.25
        np.testing.assert_allclose(params["w"].value, [-0.25, -0.25])
        assert state.prev_grad is not None

    def test_missing_grad_is_state_error(self):
        state = HyperLrState(alpha=0.1, kappa_lr=0.0)
        params = make_managed({"w": np.zeros(2)})
        with pytest.raises(StateError):
            hyper_sgd_lr_step(state, params)

    def test_nonpositive_alpha0_rejected(self):
        with pytest.raises(ConfigError):
            HyperLrState(alpha=0.0, kappa_lr=0.1)


class TestSignLaw:
    def test_strict_increase_iff_positive_dot(self):
        rng = SeededRng(123)
        state = HyperLrState(alpha=0.3, kappa_lr=0.01)
        params = make_managed({"w": np.zeros(5)})
        prev = None
        for t in range(1000):
            g = rng.normal((5,))
            params["w"].grad = g.copy()
            alpha_before = state.alpha
            hyper_sgd_lr_step(state, params)
            if prev is not None:
                dot = float(np.dot(g, prev))
                assert (state.alpha > alpha_before) == (dot > 0), t
            prev = g

    def test_kappa_zero_matches_fixed_lr_sgd_bitwise(self):
        spec, params_a, batch = quadratic_setup(seed=5)
        _, params_b, _ = quadratic_setup(seed=5)
        hyper = HyperSgd(params_a, alpha0=0.05, kappa=0.0)
        plain = BaseOnlyOptimizer(params_b, Sgd(lr=0.05))
        for _ in range(50):
            assign_grads(spec, params_a, batch)
            assign_grads(spec, params_b, batch)
            hyper.step()
            plain.step()
        assert hyper.alpha == 0.05
        for name in params_a:
            np.testing.assert_array_equal(params_a[name].value, params_b[name].value)


class TestConvexQuadratic:
    def test_alpha_stabilizes_and_loss_decreases(self):
        for seed in range(5):
            spec, params, batch = quadratic_setup(seed=100 + seed)
            opt = HyperSgd(params, alpha0=0.02, kappa=1e-4)
            losses, alphas = [], []
            for _ in range(120):
                losses.append(assign_grads(spec, params, batch))
                opt.step()
                alphas.append(opt.alpha)
            # monotone nonincreasing loss after a short burn-in
            tail = losses[10:]
            assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:])), seed
            # alpha settles: late-window variation is tiny vs its scale
            late = np.array(alphas[-20:])
            assert np.ptp(late) <= 0.05 * late.mean(), seed
