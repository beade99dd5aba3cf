"""
Tests for the isomonodromic deformation: the vector fields, the infinity
coefficients and path integration.
"""

import numpy as np
import pytest

from isomonodromy.connection import RationalConnection
from isomonodromy.deformation import (
    DeformationState,
    PolePath,
    apparent_obstruction,
    deform_path,
    propagate_U2,
    rank1_rhs,
    schlesinger_rhs,
    solve_U1,
    solve_U2,
    u1_partial_identity,
)
from isomonodromy.errors import (
    ConnectionSpecError,
    PoleCollisionError,
    ResonanceError,
)

from .test_utils import (
    diagonal_connection,
    fuchsian,
    random_connection,
    zero_curvature_residual,
)

E12 = np.array([[0, 1], [0, 0]], dtype=complex)
E21 = np.array([[0, 0], [1, 0]], dtype=complex)


class TestVectorField:
    def test_two_pole_example(self):
        state = DeformationState.initial(fuchsian([0.0, 1.0], [E12, E21]))
        vf = schlesinger_rhs(state, 0)
        # [E12, E21] / (0 - 1)
        np.testing.assert_allclose(vf.dcoeffs[0][0], np.diag([1.0, -1.0]))
        np.testing.assert_allclose(vf.dcoeffs[1][0], np.diag([-1.0, 1.0]))

    @pytest.mark.parametrize("ranks", [(0, 0, 1), (0, 0, 0)])
    def test_diagonal_system_is_stationary(self, ranks):
        state = DeformationState.initial(diagonal_connection(ranks))
        for i in range(len(ranks)):
            vf = rank1_rhs(state, i)
            for block in vf.dcoeffs:
                assert np.max(np.abs(block)) == 0.0

    def test_rank1_field_agrees_with_schlesinger(self):
        rng = np.random.default_rng(20)
        for _ in range(100):
            state = DeformationState.initial(random_connection(rng, (0, 0, 0, 0)))
            i = int(rng.integers(4))
            expected = schlesinger_rhs(state, i)
            found = rank1_rhs(state, i)
            for a, b in zip(found.dcoeffs, expected.dcoeffs):
                assert np.max(np.abs(a - b)) < 1e-12
            np.testing.assert_allclose(found.dU2, expected.dU2, atol=1e-12)

    @pytest.mark.parametrize("ranks", [(1, 0, 0, 0), (1, 1), (0, 1, 0), (1, 1, 0)])
    def test_zero_curvature_pointwise(self, ranks):
        rng = np.random.default_rng(21)
        state = DeformationState.initial(random_connection(rng, ranks, "auxiliary"))
        for i in range(len(ranks)):
            vf = rank1_rhs(state, i)
            for z in 3.0 * (rng.standard_normal(10) + 1j * rng.standard_normal(10)):
                assert zero_curvature_residual(state, vf, z) < 1e-8

    @pytest.mark.parametrize("ranks", [(1, 0, 0, 0), (1, 1)])
    def test_residue_sum_is_conserved(self, ranks):
        state = DeformationState.initial(random_connection(np.random.default_rng(22), ranks))
        for i in range(len(ranks)):
            assert np.max(np.abs(rank1_rhs(state, i).residue_sum_rate())) < 1e-14

    def test_schlesinger_needs_fuchsian_poles(self):
        state = DeformationState.initial(random_connection(np.random.default_rng(23), (1, 0)))
        with pytest.raises(ConnectionSpecError, match="all-Fuchsian"):
            schlesinger_rhs(state, 0)

    def test_collision(self):
        state = DeformationState.initial(fuchsian([0.0, 1e-9], [E12, -E12]))
        with pytest.raises(PoleCollisionError, match="pole collision"):
            rank1_rhs(state, 0)

    def test_resonant_leading_term(self):
        leading = np.array([[0.3, 1.0], [0.0, 0.3]], dtype=complex)
        c = RationalConnection(
            poles=[0.0, 1.0], ranks=(1, 0), coeffs=[np.stack([E12, leading]), -E12[None]]
        )
        with pytest.raises(ResonanceError, match="pole 0"):
            rank1_rhs(DeformationState.initial(c), 1)


class TestInfinityCoefficients:
    def test_u1_identity_on_random_systems(self):
        rng = np.random.default_rng(24)
        for ranks in [(1, 0, 0, 0), (1, 1), (0, 0, 0, 0)]:
            for normalization in ("trivial", "auxiliary"):
                state = DeformationState.initial(random_connection(rng, ranks, normalization))
                for i in range(len(ranks)):
                    assert u1_partial_identity(state, i) < 1e-5

    def test_u1_moves_with_a_single_residue(self):
        c = fuchsian([0.0, 1.0], [np.diag([-1.0, 1.0]), np.zeros((2, 2))], "auxiliary")
        state = DeformationState.initial(c)
        vf = rank1_rhs(state, 0)
        np.testing.assert_allclose(vf.dU1, np.diag([1.0, -1.0]))
        assert u1_partial_identity(state, 0) < 1e-8

    def test_propagate_U2_examples(self):
        zero = DeformationState.initial(fuchsian([0.0, 1.0], [np.zeros((2, 2))] * 2))
        np.testing.assert_array_equal(propagate_U2(zero, 0), np.zeros((2, 2)))
        # B_i1 = K at a_i = 0 with U1 = 0
        c = fuchsian([0.0, 1.0], [np.diag([-1.0, 1.0]), np.zeros((2, 2))], "auxiliary")
        np.testing.assert_array_equal(propagate_U2(DeformationState.initial(c), 0), np.zeros((2, 2)))

    @pytest.mark.parametrize("ranks", [(1, 0, 0, 0), (1, 1)])
    def test_propagate_U2_matches_trivial_expansion(self, ranks):
        # in the trivial normalization U2 is algebraic in the coefficients
        rng = np.random.default_rng(25)
        state = DeformationState.initial(random_connection(rng, ranks))
        h = 1e-6
        for i in range(len(ranks)):
            vf = rank1_rhs(state, i)
            shifted = []
            for sign in (1.0, -1.0):
                poles = np.array(state.poles)
                poles[i] += sign * h
                c = state.connection.replace(
                    poles=poles,
                    coeffs=[b + sign * h * d for b, d in zip(state.connection.coeffs, vf.dcoeffs)],
                )
                shifted.append(solve_U2(c, solve_U1(c)))
            fd = (shifted[0] - shifted[1]) / (2 * h)
            assert np.max(np.abs(fd - propagate_U2(state, i))) < 1e-5

    def test_auxiliary_u1_solves_its_equation(self):
        c = random_connection(np.random.default_rng(26), (1, 0, 0), "auxiliary")
        U1 = solve_U1(c)
        K = np.diag([-1.0, 1.0])
        R = sum(block[0] * a for a, block in zip(c.poles, c.coeffs)) + c.leading(0)
        np.testing.assert_allclose(-U1 + U1 @ K - K @ U1, R, atol=1e-14)

    def test_u2_gauge_is_free(self):
        c = random_connection(np.random.default_rng(27), (0, 0, 0), "auxiliary")
        state = DeformationState.initial(c, u2_gauge=0.25 - 1j)
        assert state.u2_gauge == 0.25 - 1j
        assert state.u1_residual() == 0.0


class TestPolePath:
    def test_from_moves_holds_last_value(self):
        path = PolePath.from_moves([0.0, 1.0, 2.0], {0: [0.5, 0.7], 2: [3.0]})
        assert len(path.waypoints) == 3
        np.testing.assert_array_equal(path.waypoints[2], [0.7, 1.0, 3.0])

    def test_length(self):
        path = PolePath.segment_to([0.0, 1.0], 1, 1.0 + 2.0j)
        assert path.length() == pytest.approx(2.0)

    def test_rejects_unknown_coordinate(self):
        with pytest.raises(IndexError):
            PolePath.from_moves([0.0, 1.0], {5: [1.0]})


class TestDeformPath:
    def test_zero_length_path(self):
        state = DeformationState.initial(random_connection(np.random.default_rng(28), (1, 0, 0)))
        result = deform_path(state, PolePath((state.poles,)))
        for a, b in zip(result.state.connection.coeffs, state.connection.coeffs):
            np.testing.assert_array_equal(a, b)
        assert result.diagnostics.accepted_steps == 0

    def test_diagonal_family_is_constant(self):
        state = DeformationState.initial(diagonal_connection((0, 0, 1)))
        path = PolePath.segment_to(state.poles, 0, -0.5 - 0.5j)
        result = deform_path(state, path)
        for a, b in zip(result.state.connection.coeffs, state.connection.coeffs):
            np.testing.assert_allclose(a, b, atol=1e-14)
        assert result.state.poles[0] == -0.5 - 0.5j

    def test_path_must_start_at_the_poles(self):
        state = DeformationState.initial(diagonal_connection((0, 0)))
        with pytest.raises(ValueError, match="must start"):
            deform_path(state, PolePath(([5.0, 6.0], [5.0, 7.0])))

    def test_collision_along_path(self):
        state = DeformationState.initial(random_connection(np.random.default_rng(29), (0, 0, 0)))
        path = PolePath.segment_to(state.poles, 0, state.poles[1])
        with pytest.raises(PoleCollisionError, match="along the path"):
            deform_path(state, path)

    @pytest.mark.parametrize(
        "ranks, normalization",
        [((0, 0, 0, 0), "trivial"), ((1, 0, 0, 0), "trivial"), ((1, 1), "auxiliary")],
    )
    def test_isomonodromy_and_conservation(self, ranks, normalization):
        c = random_connection(np.random.default_rng(30), ranks, normalization)
        state = DeformationState.initial(c)
        others = np.delete(c.poles, 0)
        # move a_0 by 0.5 towards the side with the most room
        direction = c.poles[0] - others.mean()
        target = c.poles[0] + 0.5 * direction / abs(direction)
        result = deform_path(state, PolePath.segment_to(c.poles, 0, target), monodromy_check=True)
        diagnostics = result.diagnostics
        assert not diagnostics.blowup
        assert diagnostics.monodromy_trace_drift < 1e-6
        assert diagnostics.monodromy_det_drift < 1e-6
        scale = max(float(np.max(np.abs(block))) for block in c.coeffs)
        assert diagnostics.residue_sum_drift < 1e-8 * (1.0 + scale)
        assert diagnostics.max_u1_residual <= 1e-8
        assert result.state.u1_residual() == 0.0
        assert diagnostics.trace[-1].s == pytest.approx(1.0)

    def test_apparentness_is_preserved(self):
        rng = np.random.default_rng(31)
        c = random_connection(rng, (1, 0, 0), "auxiliary")
        state = DeformationState.initial(c)
        before = apparent_obstruction(state)
        path = PolePath.segment_to(c.poles, 1, c.poles[1] + 0.3j)
        after = apparent_obstruction(deform_path(state, path).state)
        # the log coefficient at infinity is a monodromy datum
        assert abs(after - before) < 1e-6 * (1.0 + abs(before))
