import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import rel_err
from scatterconv import (GroupSpec, SteerableBasis, base_kernel_grad, conv_backward_weight, build_orientation_bank, finite_diff_check,
                         gaussian_derivative_basis, group_conv_gather, loss_mag, loss_orth, steer,
                         transform_kernel)
from scatterconv.steerable import (OrientationSet, loss_mag_grad, loss_orth_grad, regularizer_grads,
                                   steered_basis_grads, steered_group_conv, total_loss)


def random_basis(rng, co=2, ci=1, k=3):
    return SteerableBasis(rng.standard_normal((co, ci, k, k)), rng.standard_normal((co, ci, k, k)))


class TestSteer:
    def test_axis_angles(self, rng):
        b = random_basis(rng)
        assert np.array_equal(steer(b, 0.0), b.f_y)
        assert rel_err(steer(b, math.pi / 2), b.f_x) < 1e-15
        assert rel_err(steer(b, math.pi / 4), (b.f_x + b.f_y) / math.sqrt(2)) < 1e-15

    def test_basis_validation(self):
        with pytest.raises(ValueError):
            SteerableBasis(np.ones((1, 1, 3, 3)), np.ones((1, 1, 5, 5)))
        with pytest.raises(ValueError):
            SteerableBasis(np.ones((1, 1, 4, 4)), np.ones((1, 1, 4, 4)))
        with pytest.raises(ValueError):
            SteerableBasis(np.ones((3, 3)), np.ones((3, 3)))


class TestGaussianBasis:
    def test_odd_symmetry_and_norms(self):
        b = gaussian_derivative_basis(5, 1.0)
        assert np.all(b.f_x[..., :, 2] == 0)
        assert np.all(b.f_y[..., 2, :] == 0)
        assert math.isclose(np.linalg.norm(b.f_x), 1.0, rel_tol=1e-14)
        assert loss_mag(b) == 0.0

    def test_covariance_on_grid(self):
        b = gaussian_derivative_basis(7, 1.5, 2, 3)
        assert np.array_equal(transform_kernel(b.f_x, 1), -b.f_y)
        assert np.array_equal(transform_kernel(b.f_y, 1), b.f_x)

    @pytest.mark.parametrize("deg", [10, 30, 45, 60, 80])
    def test_steer_quarter_turn(self, deg):
        b = gaussian_derivative_basis(5, 1.2)
        t = math.radians(deg)
        assert np.max(np.abs(transform_kernel(steer(b, t), 1) - steer(b, t + math.pi / 2))) < 1e-12

    def test_bad_args(self):
        with pytest.raises(ValueError):
            gaussian_derivative_basis(4, 1.0)
        with pytest.raises(ValueError):
            gaussian_derivative_basis(3, 0.0)


class TestBank:
    def test_n4_is_p4_orbit_of_fy(self, rng):
        b = random_basis(rng)
        bank, tags = build_orientation_bank(b, 4)
        assert len(bank) == 4
        for r in range(4):
            assert np.array_equal(bank[r], transform_kernel(b.f_y, r))
            assert tags[r].quadrant == r and tags[r].base_angle == 0.0

    def test_n8_counts(self, rng):
        bank, tags = build_orientation_bank(random_basis(rng), 8)
        assert len(bank) == 8
        assert sorted({t.base_angle for t in tags}) == [0.0, math.pi / 4]

    def test_n16_matches_direct_steering(self):
        b = gaussian_derivative_basis(5, 1.0, 2, 2)
        bank, tags = build_orientation_bank(b, 16)
        for kern, tag in zip(bank, tags):
            assert np.max(np.abs(kern - steer(b, tag.angle))) < 1e-12
        by_angle = {round(math.degrees(t.angle)): k for k, t in zip(bank, tags)}
        assert np.array_equal(by_angle[135], transform_kernel(by_angle[45], 1))

    def test_learned_basis_deviation_is_reported(self, rng):
        b = random_basis(rng)
        bank, tags = build_orientation_bank(b, 8)
        dev = max(np.max(np.abs(k - steer(b, t.angle))) for k, t in zip(bank, tags))
        assert dev > 0  # quadrant reuse is exact only for covariant bases
        print(f"learned-basis quadrant deviation: {dev:.3e}")

    def test_orientation_set(self):
        with pytest.raises(ValueError):
            OrientationSet(6)
        assert len(OrientationSet(16).base_angles) == 4

    def test_steered_group_conv(self, rng):
        b = random_basis(rng, 2, 2)
        x = rng.standard_normal((2, 6, 6))
        out = steered_group_conv(x, b, 8)
        bank, _ = build_orientation_bank(b, 8)
        for i, kern in enumerate(bank):
            ref = group_conv_gather(x, kern, GroupSpec("p4"))[:, 0]
            assert rel_err(out[:, i], ref) < 1e-12

    def test_steered_basis_grads_chain_rule(self, rng):
        b = random_basis(rng)
        x = rng.standard_normal((1, 5, 5))
        m = rng.standard_normal((2, 8, 5, 5))

        def f(fx, fy):
            return float(np.sum(steered_group_conv(x, SteerableBasis(fx, fy), 8) * m))

        p4 = GroupSpec("p4")
        base = [base_kernel_grad(conv_backward_weight(m[:, 4 * i:4 * i + 4], x, 3, group=p4), p4)
                for i in range(2)]
        gx, gy = steered_basis_grads(base, 8)
        assert finite_diff_check(lambda v: f(v, b.f_y), b.f_x, gx) < 1e-6
        assert finite_diff_check(lambda v: f(b.f_x, v), b.f_y, gy) < 1e-6
        with pytest.raises(ValueError):
            steered_basis_grads(base, 16)


class TestLosses:
    def test_mag_values(self):
        fx = np.zeros((1, 1, 3, 3))
        fy = np.zeros((1, 1, 3, 3))
        fx[0, 0, 0, 0], fy[0, 0, 1, 1] = 3.0, 1.0
        assert loss_mag(SteerableBasis(fx, fy)) == 4.0
        assert loss_mag(SteerableBasis(fx, fx[..., ::-1, :].copy())) == 0.0

    def test_orth_values(self, rng):
        b = gaussian_derivative_basis(5, 1.0)
        assert loss_orth(b) < 1e-20
        w = rng.standard_normal((1, 1, 3, 3))
        assert math.isclose(loss_orth(SteerableBasis(w, w)), 1.0, rel_tol=1e-6)
        with pytest.raises(ValueError):
            loss_orth(b, eps=0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_losses_nonnegative(self, seed):
        b = random_basis(np.random.default_rng(seed))
        assert loss_mag(b) >= 0 and loss_orth(b) >= 0

    def test_total_loss(self, rng):
        b = random_basis(rng)
        assert total_loss(0.7, b, 0.0, 0.0) == 0.7
        fx = np.zeros((1, 1, 3, 3))
        fy = np.zeros((1, 1, 3, 3))
        fx[0, 0, 0, 0], fx[0, 0, 0, 1] = 3.0, 0.0
        fy[0, 0, 0, 0], fy[0, 0, 1, 1] = 0.5, math.sqrt(0.75)
        fb = SteerableBasis(fx, fy)
        assert math.isclose(loss_mag(fb), 4.0, rel_tol=1e-12)
        assert math.isclose(loss_orth(fb, 1e-300), 0.25, rel_tol=1e-12)
        assert math.isclose(total_loss(1.0, fb, 0.5, 2.0, 1e-300), 3.5, rel_tol=1e-12)
        with pytest.raises(ValueError):
            total_loss(1.0, b, -1.0, 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_loss_gradients(self, seed):
        rng = np.random.default_rng(seed)
        b = random_basis(rng, co=3)
        gx, gy = loss_mag_grad(b)
        assert finite_diff_check(lambda v: loss_mag(SteerableBasis(v, b.f_y)), b.f_x, gx) < 1e-6
        assert finite_diff_check(lambda v: loss_mag(SteerableBasis(b.f_x, v)), b.f_y, gy) < 1e-6
        ox, oy = loss_orth_grad(b)
        assert finite_diff_check(lambda v: loss_orth(SteerableBasis(v, b.f_y)), b.f_x, ox) < 1e-6
        assert finite_diff_check(lambda v: loss_orth(SteerableBasis(b.f_x, v)), b.f_y, oy) < 1e-6
        rx, ry = regularizer_grads(b, 0.3, 0.7)
        tot = lambda v: total_loss(2.0, SteerableBasis(v, b.f_y), 0.3, 0.7)
        assert finite_diff_check(tot, b.f_x, rx) < 1e-6
        assert rel_err(ry, 0.3 * gy + 0.7 * oy) < 1e-15
