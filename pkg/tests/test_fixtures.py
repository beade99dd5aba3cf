"""
Tests for seeded fixture generation.
"""

import numpy as np
import pytest

from isomlab.fixtures import (
    MIN_NON_SCALAR,
    PROFILES,
    generate_fixture,
    scan_disc,
    write_fixture,
)
from isomonodromy.connection import infinity_coefficients, profile, validate_connection
from isomonodromy.connection_io import load_connection
from isomonodromy.continuation import (
    common_invariant_line,
    irreducibility_check,
    monodromy_data,
)
from isomonodromy.deformation import DeformationState, apparent_obstruction
from isomonodromy.errors import FixtureExhaustedError

from .isomonodromy_tests.test_utils import relative_error


@pytest.mark.parametrize("kind", sorted(PROFILES))
def test_fixture_profile_and_invariants(kind):
    c = generate_fixture(kind, seed=2)
    ranks, normalization = PROFILES[kind]
    assert c.ranks == ranks
    assert c.normalization == normalization
    assert validate_connection(c).passed
    if normalization == "auxiliary":
        state = DeformationState.initial(c)
        assert abs(state.u1) <= 1e-12
        assert abs(apparent_obstruction(state)) <= 1e-12
        assert abs(c.residue(0)[0, 1]) >= 0.5
    else:
        _, R, _ = infinity_coefficients(c)
        assert abs(R[1, 0]) >= 1e-2


def test_same_seed_same_fixture():
    first = generate_fixture("irregular-m1n4", seed=5)
    second = generate_fixture("irregular-m1n4", seed=5)
    np.testing.assert_array_equal(first.poles, second.poles)
    for a, b in zip(first.coeffs, second.coeffs):
        np.testing.assert_array_equal(a, b)


def test_different_seeds_differ():
    first = generate_fixture("fuchsian-n4", seed=5)
    second = generate_fixture("fuchsian-n4", seed=6)
    assert not np.array_equal(first.poles, second.poles)


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown fixture kind"):
        generate_fixture("rank-two", seed=1)


def test_exhausted_attempts():
    with pytest.raises(FixtureExhaustedError, match="after 0 attempts"):
        generate_fixture("fuchsian-n4", seed=1, attempts=0)


def test_write_fixture(tmp_path):
    path = write_fixture("theta-m2n2", 3, tmp_path / "theta.json")
    c = load_connection(path)
    assert profile(c) == (2, 2)
    assert c.normalization == "auxiliary"


def test_scan_disc_surrounds_the_fixture_pole():
    c = generate_fixture("theta-m1n4", seed=3)
    center, radius = scan_disc(c)
    assert abs(center - c.poles[0]) < radius


@pytest.mark.parametrize("kind", ["irregular-m2n2", "theta-m2n2"])
@pytest.mark.parametrize("seed", [1, 4])
def test_two_pole_fixtures_have_nontrivial_loop_monodromy(kind, seed):
    c = generate_fixture(kind, seed)
    G1, G2 = monodromy_data(c).matrices
    assert relative_error(G1 @ G2, np.eye(2)) < 1e-6
    lam = np.trace(G1) / 2.0
    assert np.max(np.abs(G1 - lam * np.eye(2))) > MIN_NON_SCALAR * max(1.0, abs(lam))
    assert common_invariant_line([c.leading(0), c.leading(1)]) is None


def test_four_pole_fixture_monodromy_is_irreducible():
    assert irreducibility_check(monodromy_data(generate_fixture("theta-fuchsian-n4", 1)))
