import math

import numpy as np
import pytest

from polysafe.dynamics import (
    CosM1Term,
    Dictionary,
    Monomial,
    PlantModel,
    SinTerm,
    expansion_point,
    term_from_json,
    term_to_json,
)
from polysafe.errors import (
    DimensionMismatchError,
    DisturbanceOutOfBoundsError,
    OutsideSafeSetError,
    ZeroExpansionPointError,
)
from polysafe.polytope import Box, PolyhedralSet, interval_enclosure


def quad_dict():
    return Dictionary([Monomial((2, 0)), Monomial((0, 2))], 2)


def fd_jacobian(dictionary, x, step=1e-5):
    jac = np.zeros((dictionary.n_terms, dictionary.dim))
    for k in range(dictionary.dim):
        e = np.zeros(dictionary.dim)
        e[k] = step
        jac[:, k] = (dictionary.values(x + e) - dictionary.values(x - e)) / (2 * step)
    return jac


def fd_hessians(dictionary, x, step=1e-5):
    hess = np.zeros((dictionary.n_terms, dictionary.dim, dictionary.dim))
    for k in range(dictionary.dim):
        e = np.zeros(dictionary.dim)
        e[k] = step
        hess[:, :, k] = (dictionary.jacobian(x + e) - dictionary.jacobian(x - e)) / (2 * step)
    return hess


class TestTermValidation:
    def test_monomial_needs_degree(self):
        with pytest.raises(ValueError):
            Monomial((0, 0))

    def test_monomial_rejects_negative(self):
        with pytest.raises(ValueError):
            Monomial((-1, 2))

    def test_coord_range_checked(self):
        with pytest.raises(DimensionMismatchError):
            Dictionary([SinTerm(3)], 2)

    def test_exponent_length_checked(self):
        with pytest.raises(DimensionMismatchError):
            Dictionary([Monomial((2,))], 2)

    def test_needs_a_term(self):
        with pytest.raises(ValueError):
            Dictionary([], 2)


class TestEvaluation:
    def test_quadratic_values(self):
        np.testing.assert_allclose(quad_dict().values([1.0, 2.0]), [1.0, 4.0])

    def test_batched_values(self):
        pts = np.array([[1.0, 2.0], [0.0, 0.0], [2.0, -1.0]])
        np.testing.assert_allclose(quad_dict().values(pts), [[1, 4], [0, 0], [4, 1]])

    def test_jacobian_at_origin(self):
        d = Dictionary([SinTerm(0), Monomial((1, 1))], 2)
        np.testing.assert_allclose(d.jacobian([0.0, 0.0]), [[1, 0], [0, 0]])

    def test_constant_hessian_of_quadratic(self):
        d = Dictionary([Monomial((2, 0))], 2)
        np.testing.assert_allclose(d.hessians([3.0, -4.0])[0], [[2, 0], [0, 0]])

    def test_finite_difference_consistency(self, secv_set):
        # jacobian and hessians match central differences at 100 random points
        box = interval_enclosure(secv_set)
        d = Dictionary(
            [Monomial((2, 0)), Monomial((0, 2)), Monomial((1, 1)),
             SinTerm(0), CosM1Term(1), Monomial((2, 1))], 2)
        rng = np.random.default_rng(5)
        for _ in range(100):
            x = rng.uniform(box.lo, box.hi)
            scale = max(1.0, np.max(np.abs(x)) ** 2)
            jac_err = np.max(np.abs(d.jacobian(x) - fd_jacobian(x=x, dictionary=d)))
            hess_err = np.max(np.abs(d.hessians(x) - fd_hessians(x=x, dictionary=d)))
            assert jac_err <= 1e-6 * scale
            assert hess_err <= 1e-6 * scale


class TestLinearization:
    def test_quadratics_have_zero_slope(self):
        np.testing.assert_allclose(quad_dict().linearization(), np.zeros((2, 2)))

    def test_sin_slope_is_one(self):
        np.testing.assert_allclose(
            Dictionary([SinTerm(0)], 2).linearization(), [[1.0, 0.0]])

    def test_cosm1_slope_is_zero(self):
        np.testing.assert_allclose(
            Dictionary([CosM1Term(1)], 2).linearization(), [[0.0, 0.0]])

    def test_degree_one_monomial_slope(self):
        np.testing.assert_allclose(
            Dictionary([Monomial((0, 1))], 2).linearization(), [[0.0, 1.0]])


class TestRemainder:
    def test_quadratic_remainder_is_value(self):
        np.testing.assert_allclose(quad_dict().remainder([1.0, 1.0]), [1.0, 1.0])

    def test_sine_remainder_value(self):
        d = Dictionary([SinTerm(0)], 2)
        got = d.remainder([math.pi / 6.0, 0.0])
        np.testing.assert_allclose(got, [0.5 - math.pi / 6.0], atol=1e-15)

    def test_remainder_vanishes_at_origin(self):
        d = Dictionary([Monomial((1, 2)), SinTerm(1), CosM1Term(0)], 2)
        np.testing.assert_allclose(d.remainder([0.0, 0.0]), np.zeros(3), atol=0.0)


class TestExpansionPoint:
    def test_quadratic_example(self, secv_set):
        ep = expansion_point(quad_dict(), [0.5, 0.5], secv_set)
        np.testing.assert_allclose(ep.slope, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(ep.curvatures[0], [[2, 0], [0, 0]], atol=1e-12)
        np.testing.assert_allclose(ep.curvatures[1], [[0, 0], [0, 2]], atol=1e-12)
        np.testing.assert_allclose(ep.anchor, [0.75, 0.75], atol=1e-12)

    def test_sine_slope(self):
        big = PolyhedralSet([[1, 0], [-1, 0], [0, 1], [0, -1]], [2, 2, 2, 2])
        ep = expansion_point(Dictionary([SinTerm(0)], 2), [math.pi / 2.0, 0.0], big)
        np.testing.assert_allclose(ep.slope, [[math.cos(math.pi / 2) - 1.0, 0.0]], atol=1e-12)

    def test_zero_point_rejected(self, secv_set):
        with pytest.raises(ZeroExpansionPointError):
            expansion_point(quad_dict(), [0.0, 0.0], secv_set)

    def test_outside_point_rejected(self, secv_set):
        with pytest.raises(OutsideSafeSetError):
            expansion_point(quad_dict(), [10.0, 10.0], secv_set)

    def test_slope_matches_finite_differences(self, secv_set):
        d = Dictionary([Monomial((2, 0)), SinTerm(1)], 2)
        ep = expansion_point(d, [0.5, 0.5], secv_set)
        fd = fd_jacobian(d, np.array([0.5, 0.5])) - d.linearization()
        np.testing.assert_allclose(ep.slope, fd, atol=1e-8)


class TestLipschitz:
    def test_quadratic_over_secv_box(self):
        # max row sum of the remainder Jacobian: |2 x1| <= 12 beats |2 x2| <= 7
        box = Box([-6.0, -3.5], [6.0, 3.5])
        assert abs(quad_dict().lipschitz_bound(box) - 12.0) <= 1e-12

    def test_sine_bounded_by_two(self):
        box = Box([-100.0, -1.0], [100.0, 1.0])
        d = Dictionary([SinTerm(0)], 2)
        assert d.lipschitz_bound(box) <= 2.0 + 1e-12

    def test_zero_remainder_gives_zero(self):
        box = Box([-6.0, -3.5], [6.0, 3.5])
        d = Dictionary([Monomial((1, 0))], 2)
        assert d.lipschitz_bound(box) == 0.0

    def test_sampled_soundness(self):
        box = Box([-6.0, -3.5], [6.0, 3.5])
        d = Dictionary([Monomial((2, 0)), Monomial((0, 2)), SinTerm(0), CosM1Term(1)], 2)
        bound = d.lipschitz_bound(box)
        rng = np.random.default_rng(17)
        x = rng.uniform(box.lo, box.hi, size=(100_000, 2))
        y = rng.uniform(box.lo, box.hi, size=(100_000, 2))
        lhs = np.max(np.abs(d.remainder(x) - d.remainder(y)), axis=1)
        rhs = bound * np.max(np.abs(x - y), axis=1)
        assert np.all(lhs <= rhs + 1e-9)


class TestPlant:
    def test_step_example(self, secv_plant):
        np.testing.assert_allclose(secv_plant.step([1.0, 0.0], [0.0]), [0.8, 0.6], atol=1e-15)

    def test_origin_fixed_without_input(self, secv_plant):
        np.testing.assert_allclose(secv_plant.step([0.0, 0.0], [0.0]), [0.0, 0.0], atol=0.0)

    def test_disturbance_bound_enforced(self, secv_plant):
        with pytest.raises(DisturbanceOutOfBoundsError):
            secv_plant.step([1.0, 0.0], [0.0], w=[0.06, 0.0])

    def test_closed_loop_identity(self, secv_plant):
        # step with the feedback law equals the linear/remainder decomposition
        rng = np.random.default_rng(2)
        d = secv_plant.dictionary
        lin_base = secv_plant.linear_base()
        for _ in range(50):
            k1 = rng.normal(size=(1, 2))
            k2 = rng.normal(size=(1, 2))
            x = rng.uniform(-2, 2, size=2)
            w = rng.uniform(-0.05, 0.05, size=2)
            u = k1 @ x + k2 @ d.remainder(x)
            direct = secv_plant.step(x, u, w)
            decomposed = ((lin_base + secv_plant.b @ k1) @ x
                          + (secv_plant.a2 + secv_plant.b @ k2) @ d.remainder(x) + w)
            np.testing.assert_allclose(direct, decomposed, atol=1e-12)

    def test_simulate_records_states_and_inputs(self, secv_plant):
        class Gains:
            k1 = np.array([[0.3, -1.2]])
            k2 = np.array([[-1.0, -1.0]])

        traj = secv_plant.simulate(Gains(), [0.5, 0.5], 10)
        assert traj.states.shape == (11, 2)
        assert traj.inputs.shape == (10, 1)
        u0 = Gains.k1 @ np.array([0.5, 0.5]) + Gains.k2 @ secv_plant.dictionary.remainder([0.5, 0.5])
        np.testing.assert_allclose(traj.inputs[0], u0, atol=1e-15)
        np.testing.assert_allclose(
            traj.states[1], secv_plant.step([0.5, 0.5], u0), atol=1e-15)

    def test_dimension_validation(self):
        with pytest.raises(DimensionMismatchError):
            PlantModel(a1=np.eye(2), a2=np.ones((2, 3)), b=np.ones((2, 1)),
                       dictionary=quad_dict())


class TestSerialization:
    def test_round_trip(self):
        terms = [Monomial((2, 0)), SinTerm(1), CosM1Term(0)]
        doc = [term_to_json(t) for t in terms]
        assert doc == [
            {"kind": "monomial", "exponents": [2, 0]},
            {"kind": "sin", "coord": 1},
            {"kind": "cosm1", "coord": 0},
        ]
        assert [term_from_json(o) for o in doc] == terms

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            term_from_json({"kind": "tanh", "coord": 0})
