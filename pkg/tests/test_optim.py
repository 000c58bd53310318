"""Tests for Adam and SGD-with-momentum update rules."""

import numpy as np
import pytest

from frameweave.errors import NumericError, ShapeError
from frameweave.optim import adam_step, clip_gradients, make_optim_state, sgd_momentum_step
from frameweave.tensor import Rng


def _scalar(value):
    return [np.array([value], dtype=np.float64)]


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = _scalar(3.0)
        state = make_optim_state("adam", params, lr=0.1)
        out = adam_step(params, _scalar(0.0), state)
        assert out[0][0] == 3.0

    def test_first_step_is_signed_lr(self):
        # bias-corrected first step: -lr * g / (|g| + eps) which is -lr * sign(g)
        for g in (0.5, -2.0, 1e-3):
            params = _scalar(0.0)
            state = make_optim_state("adam", params, lr=0.1)
            out = adam_step(params, _scalar(g), state)
            assert out[0][0] == pytest.approx(-0.1 * np.sign(g), rel=1e-5)

    def test_quadratic_convergence(self):
        params = _scalar(5.0)
        state = make_optim_state("adam", params, lr=0.1)
        for _ in range(500):
            grads = [2.0 * params[0]]
            params = adam_step(params, grads, state)
        assert abs(params[0][0]) < 0.01

    def test_step_counter_increments(self):
        params = _scalar(1.0)
        state = make_optim_state("adam", params, lr=0.1)
        adam_step(params, _scalar(1.0), state)
        adam_step(params, _scalar(1.0), state)
        assert state.t == 2

    def test_non_finite_gradient_names_parameter(self):
        params = [np.zeros(2), np.zeros(3)]
        state = make_optim_state("adam", params, lr=0.1)
        grads = [np.zeros(2), np.array([1.0, np.nan, 0.0])]
        with pytest.raises(NumericError, match="parameter 1"):
            adam_step(params, grads, state)

    def test_shapes_preserved(self):
        rng = Rng(0)
        params = [rng.normal((2, 3, 3, 3)).data, rng.normal((1, 1, 1, 2)).data.reshape(2)]
        state = make_optim_state("adam", params, lr=1e-3)
        grads = [np.ones_like(p) for p in params]
        out = adam_step(params, grads, state)
        assert [p.shape for p in out] == [p.shape for p in params]

    def test_determinism(self):
        def run():
            rng = Rng(1)
            params = [rng.normal((2, 2, 3, 3)).data]
            state = make_optim_state("adam", params, lr=1e-3)
            for _ in range(5):
                params = adam_step(params, [0.1 * params[0]], state)
            return params[0]

        assert np.array_equal(run(), run())


class TestSgdMomentum:
    def test_zero_momentum_is_plain_gradient_descent(self):
        params = _scalar(1.0)
        state = make_optim_state("sgd", params, lr=0.1, momentum=0.0)
        out = sgd_momentum_step(params, _scalar(0.5), state)
        assert out[0][0] == pytest.approx(1.0 - 0.1 * 0.5)

    def test_zero_gradient_zero_velocity_is_identity(self):
        params = _scalar(2.0)
        state = make_optim_state("sgd", params, lr=0.1, momentum=0.9)
        out = sgd_momentum_step(params, _scalar(0.0), state)
        assert out[0][0] == 2.0

    def test_momentum_accelerates_quadratic(self):
        def steps_to_converge(momentum):
            params = _scalar(5.0)
            state = make_optim_state("sgd", params, lr=0.01, momentum=momentum)
            for step in range(1, 5001):
                params = sgd_momentum_step(params, [2.0 * params[0]], state)
                if abs(params[0][0]) < 0.01:
                    return step
            return 5001

        assert steps_to_converge(0.9) < steps_to_converge(0.0)

    def test_mismatched_shapes_rejected(self):
        params = [np.zeros(3)]
        state = make_optim_state("sgd", params, lr=0.1)
        with pytest.raises(ShapeError):
            sgd_momentum_step(params, [np.zeros(4)], state)


class TestDescentSanity:
    @pytest.mark.parametrize("kind", ["adam", "sgd"])
    def test_loss_decreases_on_quadratic_bowl(self, kind):
        rng = Rng(2)
        params = [rng.normal((1, 1, 4, 4)).data.astype(np.float64)]
        state = make_optim_state(kind, params, lr=0.01)
        start = float(np.sum(params[0] ** 2))
        step = adam_step if kind == "adam" else sgd_momentum_step
        for _ in range(100):
            params = step(params, [2.0 * params[0]], state)
        assert float(np.sum(params[0] ** 2)) < start


class TestClip:
    def test_clip_reduces_global_norm(self):
        grads = [np.full(4, 10.0), np.full(9, 10.0)]
        clipped = clip_gradients(grads, 1.0)
        norm = np.sqrt(sum(np.sum(g**2) for g in clipped))
        assert norm == pytest.approx(1.0, rel=1e-6)

    def test_small_gradients_untouched(self):
        grads = [np.array([0.1, 0.2])]
        clipped = clip_gradients(grads, 5.0)
        assert np.array_equal(clipped[0], grads[0])
