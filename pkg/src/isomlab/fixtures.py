"""
Seeded random connections for scenarios and tests.

Trivial-normalization kinds (fuchsian-n4, irregular-m1n4, irregular-m2n2) are generic
systems with non-resonant leading terms and R21 != 0, so make_auxiliary applies.
Four-pole kinds have irreducible loop monodromy. The two-pole kinds have a regular or
apparent point at infinity, so G2 = G1^-1 and the loop monodromy always fixes a line;
there irreducibility lives in the Stokes data, which is not computed. Those kinds are
gated on a non-scalar G1 and on leading terms without a common eigenvector instead.

The theta-* kinds are auxiliary-normalized systems placed exactly on Theta: the two
conditions u1 = 0 and apparentness at infinity are linear in upper-right coefficient
entries and are imposed by a 2x2 solve.
"""

from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np

from isomlab_utils.logging_config import get_logger
from isomonodromy.connection import (
    DEFAULT_TOLERANCES,
    RationalConnection,
    balance_residues,
    infinity_coefficients,
    min_pole_distance,
    validate_connection,
)
from isomonodromy.connection_io import dump_connection
from isomonodromy.continuation import (
    common_invariant_line,
    irreducibility_check,
    monodromy_data,
)
from isomonodromy.deformation import DeformationState, apparent_obstruction
from isomonodromy.errors import FixtureExhaustedError, IsomonodromyError

logger = get_logger(__name__)

MAX_ATTEMPTS = 50
MIN_POLE_SEPARATION = 1.0
RESIDUE_SCALE = 0.4
LEADING_SCALE = 0.3
MIN_LEADING_GAP = 0.1
MIN_CHART_R21 = 1e-2
MIN_SLICE_GRADIENT = 0.5
MAX_COEFFICIENT = 5.0
MIN_NON_SCALAR = 1e-3

# kind -> (ranks, normalization)
PROFILES: Dict[str, Tuple[Tuple[int, ...], str]] = {
    "fuchsian-n4": ((0, 0, 0, 0), "trivial"),
    "irregular-m1n4": ((1, 0, 0, 0), "trivial"),
    "irregular-m2n2": ((1, 1), "trivial"),
    "theta-fuchsian-n4": ((0, 0, 0, 0), "auxiliary"),
    "theta-m1n4": ((1, 0, 0, 0), "auxiliary"),
    "theta-m2n2": ((1, 1), "auxiliary"),
}


def _complex_normal(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _random_poles(rng: np.random.Generator, n: int) -> np.ndarray:
    while True:
        poles = rng.uniform(-2.0, 2.0, n) + 1j * rng.uniform(-2.0, 2.0, n)
        if min_pole_distance(poles) >= MIN_POLE_SEPARATION:
            return poles


def _random_leading(rng: np.random.Generator) -> np.ndarray:
    while True:
        L = _complex_normal(rng, (2, 2), LEADING_SCALE)
        lam = np.linalg.eigvals(L)
        if abs(lam[0] - lam[1]) >= MIN_LEADING_GAP:
            return L


def _random_connection(
    rng: np.random.Generator, ranks: Tuple[int, ...], normalization: str
) -> RationalConnection:
    poles = _random_poles(rng, len(ranks))
    coeffs = []
    for r in ranks:
        block = [_complex_normal(rng, (2, 2), RESIDUE_SCALE)]
        if r == 1:
            block.append(_random_leading(rng))
        coeffs.append(np.stack(block))
    c = RationalConnection(poles=poles, ranks=ranks, coeffs=coeffs, normalization=normalization)
    return balance_residues(c)


def _theta_unknowns(ranks: Tuple[int, ...]) -> List[Tuple[int, int]]:
    """(pole, coefficient index) of the upper-right entries solved for."""
    if len(ranks) == 2:
        return [(0, 1), (1, 1)]
    return [(1, 0), (2, 0)]


def _theta_conditions(c: RationalConnection) -> np.ndarray:
    """(R12, A3_12): u1 and the apparentness obstruction when u1 = 0."""
    _, R, A3 = infinity_coefficients(c)
    return np.array([R[0, 1], A3[0, 1]])


def _place_on_theta(c: RationalConnection, rng: np.random.Generator) -> RationalConnection:
    coeffs = [np.array(block) for block in c.coeffs]
    phase = np.exp(2j * np.pi * rng.uniform())
    coeffs[0][0][0, 1] = rng.uniform(0.6, 1.0) * phase
    unknowns = _theta_unknowns(c.ranks)

    def build(x) -> RationalConnection:
        trial = [np.array(block) for block in coeffs]
        for (pole, j), value in zip(unknowns, x):
            trial[pole][j][0, 1] = value
        return balance_residues(c.replace(coeffs=trial))

    # the conditions are affine in the unknowns
    g0 = _theta_conditions(build([0.0, 0.0]))
    columns = [
        _theta_conditions(build(np.eye(2)[k])) - g0 for k in range(len(unknowns))
    ]
    x = np.linalg.solve(np.column_stack(columns), -g0)
    return build(x)


def _check_common(c: RationalConnection) -> None:
    report = validate_connection(c, DEFAULT_TOLERANCES)
    if not report.passed:
        raise FixtureExhaustedError(
            "fixture fails validation: " + ", ".join(f.name for f in report.failures())
        )
    if max(float(np.max(np.abs(block))) for block in c.coeffs) > MAX_COEFFICIENT:
        raise FixtureExhaustedError("fixture coefficients too large")
    _check_monodromy(c)


def _check_monodromy(c: RationalConnection) -> None:
    data = monodromy_data(c)
    if c.n > 2:
        if not irreducibility_check(data):
            raise FixtureExhaustedError("fixture monodromy is reducible")
        return
    # G2 = G1^-1 here
    G1 = data.matrices[0]
    lam = np.trace(G1) / 2.0
    if float(np.max(np.abs(G1 - lam * np.eye(2)))) <= MIN_NON_SCALAR * max(1.0, abs(lam)):
        raise FixtureExhaustedError("fixture loop monodromy is scalar")
    if common_invariant_line([c.leading(0), c.leading(1)]) is not None:
        raise FixtureExhaustedError("leading terms share an eigenvector")


def _check_trivial(c: RationalConnection) -> None:
    _, R, _ = infinity_coefficients(c)
    if abs(R[1, 0]) < MIN_CHART_R21:
        raise FixtureExhaustedError("R21 too small for an auxiliary chart")
    _check_common(c)


def _check_theta(c: RationalConnection) -> None:
    if abs(c.residue(0)[0, 1]) < MIN_SLICE_GRADIENT:
        raise FixtureExhaustedError("slice gradient too small")
    state = DeformationState.initial(c)
    if abs(state.u1) > 1e-12 or abs(apparent_obstruction(state)) > 1e-12:
        raise FixtureExhaustedError("Theta conditions not met")
    _check_common(c)


def generate_fixture(kind: str, seed: int, attempts: int = MAX_ATTEMPTS) -> RationalConnection:
    """Random connection of the requested profile; deterministic in (kind, seed)."""
    if kind not in PROFILES:
        raise ValueError(f"unknown fixture kind {kind!r}; expected one of {sorted(PROFILES)}")
    ranks, normalization = PROFILES[kind]
    rng = np.random.default_rng(seed)
    check: Callable[[RationalConnection], None] = (
        _check_theta if normalization == "auxiliary" else _check_trivial
    )
    for attempt in range(1, attempts + 1):
        c = _random_connection(rng, ranks, normalization)
        try:
            if normalization == "auxiliary":
                c = _place_on_theta(c, rng)
            check(c)
        except (IsomonodromyError, np.linalg.LinAlgError) as e:
            logger.debug("fixture %s seed %d attempt %d rejected: %s", kind, seed, attempt, e)
            continue
        logger.info("fixture %s seed %d accepted after %d attempt(s)", kind, seed, attempt)
        return c
    raise FixtureExhaustedError(f"no {kind} fixture for seed {seed} after {attempts} attempts")


def write_fixture(kind: str, seed: int, path) -> Path:
    path = Path(path)
    dump_connection(generate_fixture(kind, seed), path)
    return path


def scan_disc(
    c: RationalConnection, coordinate: int = 0, offset: complex = 0.05, radius: float = 0.1
):
    """Default Theta scan disc for a theta-* fixture: off-center around the pole."""
    return complex(c.poles[coordinate]) + offset, radius

