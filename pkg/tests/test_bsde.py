"""Backward-process drift, rollout, and sampling."""

import numpy as np
import pytest

from bsdegen import nn
from bsdegen.autodiff import Tape
from bsdegen.bsde import (
    GeneratorSpec,
    RolloutDivergenceError,
    generate_batch,
    generator_drift,
    make_z_provider,
    new_model,
    rollout_terminal_eval,
    rollout_y,
)
from bsdegen.rng import Rng, RowStreams, derive_many
from bsdegen.sde import TimeGrid, euler_forward_x
from bsdegen.verify import linear_bsde_check, rollout_gradient_check, telescoping_check


class TestGeneratorDrift:
    def test_all_zero_coefficients(self):
        spec = GeneratorSpec(a=np.zeros((2, 3)), b=np.zeros((2, 2)), kappa=0.0)
        tape = Tape()
        out = generator_drift(spec, np.zeros(3), tape.leaf([1.0, -1.0]), np.ones((2, 4)), tape)
        np.testing.assert_array_equal(out.value, [0.0, 0.0])

    def test_row_l1_term(self):
        spec = GeneratorSpec(a=np.zeros((2, 1)), b=np.zeros((2, 2)), kappa=1.0)
        tape = Tape()
        z = tape.leaf([[1.0, -2.0], [0.0, 3.0]])
        out = generator_drift(spec, np.zeros(1), tape.leaf([0.0, 0.0]), z, tape)
        np.testing.assert_array_equal(out.value, [3.0, 3.0])

    def test_identity_x_coupling(self):
        spec = GeneratorSpec(a=np.eye(2), b=np.zeros((2, 2)), kappa=0.0)
        tape = Tape()
        out = generator_drift(
            spec, np.array([1.0, 2.0]), tape.leaf([0.0, 0.0]), tape.leaf(np.zeros((2, 2))), tape
        )
        np.testing.assert_array_equal(out.value, [1.0, 2.0])

    def test_shape_mismatch(self):
        spec = GeneratorSpec(a=np.zeros((2, 3)), b=np.zeros((2, 2)), kappa=0.5)
        tape = Tape()
        with pytest.raises(ValueError, match="generator"):
            generator_drift(spec, np.zeros(3), tape.leaf([1.0, 2.0, 3.0]), np.ones((3, 2)), tape)


class TestRollout:
    def test_degenerate_dynamics_keep_y0(self):
        """Zero drift and zero control leave Y_T = Y_0."""
        d_y, d_w, n = 3, 2, 5
        spec = GeneratorSpec(a=np.zeros((d_y, 2)), b=np.zeros((d_y, d_y)), kappa=0.0)
        grid = TimeGrid(1.0, n)
        tape = Tape()
        zero_z = tape.const(np.zeros((d_y, d_w)))
        y0 = np.array([0.3, -0.7, 2.0])
        y_t = rollout_y(
            y0, lambda t, x: zero_z, np.zeros((n + 1, 2)), Rng(1).normal_matrix(n, d_w),
            spec, grid, tape,
        )
        np.testing.assert_array_equal(y_t.value, y0)

    def test_single_step_hand_value(self):
        """One explicit step: 1 - 0.4*0.005 + 2*0.1 = 1.198."""
        spec = GeneratorSpec(a=np.array([[0.4]]), b=np.zeros((1, 1)), kappa=0.0)
        grid = TimeGrid(0.005, 1)
        tape = Tape()
        z = tape.const([[2.0]])
        y_t = rollout_y(
            np.array([1.0]), lambda t, x: z, np.ones((2, 1)), np.array([[0.1]]),
            spec, grid, tape,
        )
        assert abs(y_t.value[0] - 1.198) < 1e-12

    def test_linear_closed_form(self):
        assert linear_bsde_check().passed

    def test_telescoping_identity(self):
        assert telescoping_check().passed

    def test_gradients_through_time(self):
        assert rollout_gradient_check().passed

    def test_divergence_guard_reports_step(self):
        spec = GeneratorSpec(a=np.zeros((1, 1)), b=np.array([[-40.0]]), kappa=0.0)
        grid = TimeGrid(1.0, 60)  # dt*|b| > 2: explicit scheme blows up
        tape = Tape()
        z = tape.const(np.zeros((1, 1)))
        with pytest.raises(RolloutDivergenceError, match="step"):
            rollout_y(
                np.array([1.0]), lambda t, x: z, np.zeros((61, 1)), np.zeros((60, 1)),
                spec, grid, tape,
            )

    def test_mismatched_increments_rejected(self):
        spec = GeneratorSpec(a=np.zeros((1, 1)), b=np.zeros((1, 1)), kappa=0.0)
        grid = TimeGrid(1.0, 5)
        tape = Tape()
        z = tape.const(np.zeros((1, 1)))
        with pytest.raises(ValueError, match="steps"):
            rollout_y(np.array([1.0]), lambda t, x: z, np.zeros((6, 1)), np.zeros((4, 1)),
                      spec, grid, tape)


class TestGenerateBatch:
    def test_empty_batch(self):
        model = new_model(d_x=2, d_y=3, grid=TimeGrid(1.0, 2), hidden=(4,), seed=0)
        out = generate_batch(model, 0, Rng(1))
        assert out.shape == (0, 3)

    def test_fixed_seed_bit_identical(self):
        model = new_model(d_x=3, d_y=4, grid=TimeGrid(1.0, 5), hidden=(6,), seed=2)
        a = generate_batch(model, 7, Rng(9))
        b = generate_batch(model, 7, Rng(9))
        np.testing.assert_array_equal(a, b)

    def test_successive_calls_differ(self):
        model = new_model(d_x=3, d_y=4, grid=TimeGrid(1.0, 5), hidden=(6,), seed=2)
        rng = Rng(9)
        a = generate_batch(model, 4, rng)
        b = generate_batch(model, 4, rng)
        assert not np.array_equal(a, b)

    def test_untrained_paper_scale_output(self):
        """Full-size geometry: 28x28 images from a 32-dim state over 200 steps."""
        model = new_model(d_x=32, d_y=784, d_w=32, grid=TimeGrid(1.0, 200), seed=1)
        out = generate_batch(model, 3, Rng(0))
        assert out.shape == (3, 784)
        assert np.all(np.isfinite(out))
        assert out.std() > 0.0

    def test_brownian_increments_shared_with_x_path(self):
        """Reconstructing the documented draw layout reproduces the batch exactly."""
        model = new_model(d_x=2, d_y=3, d_w=2, grid=TimeGrid(1.0, 4), hidden=(5,), seed=3)
        rng = Rng(31)
        batch = generate_batch(model, 6, rng)

        base = int(Rng(31).outputs(1)[0])
        streams = RowStreams(derive_many(base, count=6))
        zeta = streams.normals(2)
        dw = streams.normals(4 * 2).reshape(6, 4, 2) * np.sqrt(model.grid.dt)
        x_path = euler_forward_x(model.forward_spec, zeta, dw, model.grid)
        want = rollout_terminal_eval(model, zeta, x_path, dw)
        np.testing.assert_array_equal(batch, want)

    def test_eval_rollout_matches_tape_rollout(self):
        model = new_model(d_x=3, d_y=5, d_w=3, grid=TimeGrid(1.0, 7), hidden=(6, 6), seed=4)
        streams = RowStreams(derive_many(99, count=5))
        zeta = streams.normals(3)
        dw = streams.normals(7 * 3).reshape(5, 7, 3) * np.sqrt(model.grid.dt)
        x_path = euler_forward_x(model.forward_spec, zeta, dw, model.grid)
        tape = Tape()
        y0 = nn.mlp_apply(model.y0_config, model.y0_params, zeta, tape, "eval")
        provider = make_z_provider(model, tape, mode="eval")
        y_tape = rollout_y(y0, provider, x_path, dw, model.generator_spec, model.grid, tape)
        np.testing.assert_array_equal(
            y_tape.value, rollout_terminal_eval(model, zeta, x_path, dw)
        )

    def test_default_generator_is_stable(self):
        """Default coefficients keep |Y| bounded over the full grid."""
        model = new_model(d_x=8, d_y=16, grid=TimeGrid(1.0, 200), hidden=(32,), seed=5)
        out = generate_batch(model, 8, Rng(2))
        assert np.max(np.abs(out)) < 1e3
