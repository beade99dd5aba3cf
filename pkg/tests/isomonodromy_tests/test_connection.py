"""
Tests for rational connections: construction, validation, evaluation and the
expansion at infinity.
"""

import numpy as np
import pytest

from isomonodromy.connection import (
    K,
    RationalConnection,
    Tolerances,
    balance_residues,
    evaluate_matrix,
    infinity_coefficients,
    local_formal_data,
    min_pole_distance,
    profile,
    trace_function,
    validate_connection,
)
from isomonodromy.connection_io import connection_from_dict, dump_connection, load_connection
from isomonodromy.errors import ConnectionSpecError, PoleProximityError

from .test_utils import fuchsian, random_connection


class TestConstruction:
    def test_rejects_rank_two(self):
        with pytest.raises(ConnectionSpecError, match="only ranks 0 and 1"):
            RationalConnection(poles=[0.0], ranks=(2,), coeffs=[np.zeros((3, 2, 2))])

    def test_rejects_wrong_block_shape(self):
        with pytest.raises(ConnectionSpecError, match="needs 2 matrices"):
            RationalConnection(poles=[0.0], ranks=(1,), coeffs=[np.zeros((1, 2, 2))])

    def test_rejects_rank_count_mismatch(self):
        with pytest.raises(ConnectionSpecError, match="one rank per pole"):
            RationalConnection(poles=[0.0, 1.0], ranks=(0,), coeffs=[np.zeros((1, 2, 2))])

    def test_rejects_unknown_normalization(self):
        with pytest.raises(ConnectionSpecError, match="unknown normalization"):
            fuchsian([0.0, 1.0], [np.eye(2), -np.eye(2)], normalization="malgrange")

    def test_coefficients_are_read_only(self):
        c = fuchsian([0.0, 1.0], [np.eye(2), -np.eye(2)])
        with pytest.raises(ValueError):
            c.coeffs[0][0, 0, 0] = 5.0
        with pytest.raises(ValueError):
            c.poles[0] = 3.0

    def test_profile_counts_rank_one_poles(self):
        c = random_connection(np.random.default_rng(0), (1, 0, 1, 0))
        assert profile(c) == (2, 4)

    def test_relabel_permutes_poles_and_blocks(self):
        c = random_connection(np.random.default_rng(1), (1, 0, 0))
        r = c.relabel([2, 0, 1])
        assert r.poles[0] == c.poles[2]
        assert r.ranks == (0, 1, 0)
        np.testing.assert_array_equal(r.coeffs[1], c.coeffs[0])
        with pytest.raises(ConnectionSpecError, match="not a permutation"):
            c.relabel([0, 0, 1])

    def test_replace_can_drop_poles(self):
        c = random_connection(np.random.default_rng(6), (1, 0, 0))
        r = c.replace(poles=c.poles[:2], coeffs=c.coeffs[:2], ranks=c.ranks[:2])
        assert r.n == 2
        assert r.ranks == (1, 0)
        with pytest.raises(ConnectionSpecError, match="one rank per pole"):
            c.replace(poles=c.poles[:2], coeffs=c.coeffs[:2])

    def test_conjugate_preserves_residue_sum_target(self):
        c = random_connection(np.random.default_rng(2), (0, 0, 0))
        D = np.array([[1.0, 0.3], [0.0, 1.0]])
        assert np.max(np.abs(c.conjugate(D).residue_sum())) < 1e-14


class TestBalance:
    @pytest.mark.parametrize("normalization", ["trivial", "auxiliary"])
    def test_residue_sum_hits_target(self, normalization):
        c = random_connection(np.random.default_rng(3), (0, 1, 0, 0), normalization)
        assert np.max(np.abs(c.residue_sum() - c.infinity_residue_target)) < 1e-14

    def test_balance_chooses_pole(self):
        c = fuchsian([0.0, 1.0, 2.0], [np.eye(2), np.eye(2), np.eye(2)])
        b = balance_residues(c, index=0)
        np.testing.assert_allclose(b.residue(0), -2 * np.eye(2))
        np.testing.assert_array_equal(b.residue(2), np.eye(2))


class TestValidation:
    def test_random_connection_passes(self):
        c = random_connection(np.random.default_rng(4), (1, 0, 0, 0))
        report = validate_connection(c)
        assert report.passed
        assert report.failures() == []
        assert report.as_dict()["passed"] is True

    def test_residue_sum_failure_is_reported(self):
        c = fuchsian([0.0, 1.0], [np.eye(2), np.eye(2)])
        report = validate_connection(c)
        assert not report.passed
        assert [f.name for f in report.failures()] == ["residue sum"]

    def test_pole_collision_is_reported(self):
        c = fuchsian([0.0, 1e-8], [np.eye(2), -np.eye(2)])
        (failure,) = validate_connection(c).failures()
        assert failure.name == "pole separation"
        assert "pole collision" in failure.message

    def test_too_many_rank_one_poles(self):
        c = random_connection(np.random.default_rng(5), (1, 1, 1))
        names = [f.name for f in validate_connection(c).failures()]
        assert "rank profile" in names

    def test_resonant_leading_term(self):
        leading = np.array([[0.3, 1.0], [0.0, 0.3]])
        c = RationalConnection(
            poles=[0.0, 1.0],
            ranks=(1, 0),
            coeffs=[np.stack([np.eye(2), leading]), -np.eye(2)[None]],
        )
        names = [f.name for f in validate_connection(c).failures()]
        assert names == ["non-resonance at pole 0"]
        assert local_formal_data(c, 0).resonant

    def test_loose_tolerance_accepts_close_poles(self):
        c = fuchsian([0.0, 1e-8], [np.eye(2), -np.eye(2)])
        assert validate_connection(c, Tolerances(separation=1e-9)).passed


class TestLocalFormalData:
    def test_fuchsian_integer_difference_is_resonant(self):
        c = fuchsian([0.0, 1.0], [np.diag([0.5, -0.5]), np.diag([-0.5, 0.5])])
        data = local_formal_data(c, 0)
        assert data.resonant
        assert data.leading_eigenvalues == (-0.5 + 0j, 0.5 + 0j)

    def test_fuchsian_generic_residue(self):
        c = fuchsian([0.0, 1.0], [np.diag([0.3, -0.1]), np.diag([-0.3, 0.1])])
        assert not local_formal_data(c, 1).resonant

    def test_index_out_of_range(self):
        c = fuchsian([0.0, 1.0], [np.eye(2), -np.eye(2)])
        with pytest.raises(IndexError):
            local_formal_data(c, 2)


class TestEvaluation:
    def test_matches_direct_sum(self):
        c = random_connection(np.random.default_rng(6), (1, 0, 1))
        z = 0.37 + 2.9j
        expected = sum(
            B / (z - a) ** j
            for a, block in zip(c.poles, c.coeffs)
            for j, B in enumerate(block, start=1)
        )
        np.testing.assert_allclose(evaluate_matrix(c, z), expected, rtol=1e-13)

    def test_trace_function(self):
        c = random_connection(np.random.default_rng(7), (0, 1, 0))
        z = -3.1 + 0.2j
        assert abs(trace_function(c, z) - np.trace(evaluate_matrix(c, z))) < 1e-13

    def test_refuses_points_on_a_pole(self):
        c = fuchsian([0.0, 1.0], [np.eye(2), -np.eye(2)])
        with pytest.raises(PoleProximityError):
            evaluate_matrix(c, 1.0 + 1e-12)

    def test_infinity_expansion(self):
        c = random_connection(np.random.default_rng(8), (1, 0, 0, 1), "auxiliary")
        A1, A2, A3 = infinity_coefficients(c)
        np.testing.assert_allclose(A1, K, atol=1e-14)
        z = 1e3 * (1 + 1j)
        series = A1 / z + A2 / z**2 + A3 / z**3
        assert np.max(np.abs(evaluate_matrix(c, z) - series)) < 1e-10


class TestPersistence:
    def test_file_round_trip(self, tmp_path):
        c = random_connection(np.random.default_rng(9), (1, 0, 0), "auxiliary")
        path = tmp_path / "nested" / "c.json"
        dump_connection(c, path)
        loaded = load_connection(path)
        assert loaded.ranks == c.ranks
        assert loaded.normalization == "auxiliary"
        np.testing.assert_array_equal(loaded.poles, c.poles)
        for a, b in zip(loaded.coeffs, c.coeffs):
            np.testing.assert_array_equal(a, b)

    def test_malformed_document(self):
        with pytest.raises(ConnectionSpecError, match="malformed"):
            connection_from_dict({"poles": [[0.0, 0.0]], "ranks": [0]})


def test_min_pole_distance():
    assert min_pole_distance(np.array([0.0, 3.0, 1.0 + 1.0j])) == pytest.approx(np.sqrt(2))
    assert min_pole_distance(np.array([1.0j])) == float("inf")

    @pytest.mark.parametrize(
        "leading, resonant",
        [
            (np.diag([2.0, -2.0]), False),
            (np.array([[1.0, 1.0], [0.0, 1.0]]), True),
            (np.array([[0.0, 1.0], [1e-18, 0.0]]), True),
        ],
    )
    def test_rank_one_gap(self, leading, resonant):
        c = RationalConnection(
            poles=[0.0, 1.0],
            ranks=(1, 0),
            coeffs=[np.stack([np.eye(2), leading]), -np.eye(2)[None]],
        )
        data = local_formal_data(c, 0, Tolerances(eigen_gap=1e-6))
        assert data.resonant is resonant

    def test_near_resonant_leading_term(self):
        eps = 1e-9
        c = RationalConnection(
            poles=[0.0, 1.0],
            ranks=(1, 0),
            coeffs=[np.stack([np.eye(2), [[0.0, 1.0], [eps**2, 0.0]]]), -np.eye(2)[None]],
        )
        data = local_formal_data(c, 0)
        assert data.resonant
        assert data.gap < 1e-6
