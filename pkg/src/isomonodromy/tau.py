"""
Tau function u1, the gauge Gamma1 and the passage between the two normalizations.

Key components:
- GaugeMap: Gamma1(z) = [[z + f/u, -u], [1/u, 0]] with its inverse and derivatives;
- compute_U1 / compute_u1 / compute_f: the data of the auxiliary chart at infinity;
  u1 = (U1)_12 is the local tau function whose zero set is the divisor Theta;
- to_malgrange: gauge an auxiliary state back to the trivial normalization (defined
  off Theta only);
- make_auxiliary: gauge a trivial system to the auxiliary normalization, residue
  sum exactly K and apparent singularity at infinity;
- bundle_splitting / splitting_bound_check: splitting type of the auxiliary bundle
  and the m + n <= 5 gate for the second-order pole bound.
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from isomlab_utils.logging_config import get_logger
from isomonodromy.connection import (
    RationalConnection,
    balance_residues,
    infinity_coefficients,
    profile,
)
from isomonodromy.deformation import DeformationState, apparent_obstruction, solve_U1
from isomonodromy.errors import (
    DegenerateChartError,
    GaugeConsistencyError,
    NormalizationError,
    ThetaDivisorError,
)

logger = get_logger(__name__)

E11 = np.array([[1, 0], [0, 0]], dtype=complex)
E22 = np.array([[0, 0], [0, 1]], dtype=complex)
E12 = np.array([[0, 1], [0, 0]], dtype=complex)

CHART_GUARD = 1e-8
AUXILIARY_TOLERANCE = 1e-8
THETA_GUARD = 1e-14


@dataclass(frozen=True)
class GaugeMap:
    u1: complex
    f: complex

    def __post_init__(self):
        if abs(self.u1) <= THETA_GUARD:
            raise ThetaDivisorError("a gauge map needs u1 != 0")

    @property
    def normalizer(self) -> np.ndarray:
        """Constant U0' = Gamma1(0)^-1; it has determinant 1."""
        u = self.u1
        return np.array([[0.0, u], [-1.0 / u, self.f / u]], dtype=complex)

    def gamma1(self, z: complex) -> np.ndarray:
        # inverse of the unimodular normalizer, plus z E11
        N = self.normalizer
        return np.array([[N[1, 1], -N[0, 1]], [-N[1, 0], N[0, 0]]]) + z * E11

    def gamma1_inv(self, z: complex) -> np.ndarray:
        return self.normalizer + z * E22

    def shift(self, delta: complex) -> "GaugeMap":
        return GaugeMap(self.u1, self.f + delta)


def _require_auxiliary(state: DeformationState) -> None:
    if state.normalization != "auxiliary":
        raise NormalizationError("operation needs an auxiliary-normalized state")


def compute_U1(state: DeformationState) -> np.ndarray:
    """U1 from -U1 + [U1, K] = sum_i B_i1 a_i + sum_{r_i = 1} B_i2."""
    _require_auxiliary(state)
    return solve_U1(state.connection)


def compute_u1(state: DeformationState) -> complex:
    return complex(compute_U1(state)[0, 1])


def compute_f(state: DeformationState) -> complex:
    """f = u1 (U1)_22 - (U2)_12 with the carried U2."""
    U1 = compute_U1(state)
    u1 = complex(U1[0, 1])
    if abs(u1) <= THETA_GUARD:
        raise ThetaDivisorError(f"u1 = {u1:.3e} vanishes; the gauge map is undefined on Theta")
    return u1 * complex(U1[1, 1]) - complex(state.U2[0, 1])


def gauge_of(state: DeformationState) -> GaugeMap:
    return GaugeMap(compute_u1(state), compute_f(state))


def _transform(
    c: RationalConnection, left, left_prime, right, right_prime, normalization: str
) -> RationalConnection:
    """Principal parts of L(z) B(z) L(z)^-1 at every pole for a linear-in-z L."""
    coeffs = []
    for a, block in zip(c.poles, c.coeffs):
        G, Gi = left(a), right(a)
        if block.shape[0] == 1:
            coeffs.append(np.stack([G @ block[0] @ Gi]))
        else:
            B1, B2 = block
            new2 = G @ B2 @ Gi
            new1 = left_prime @ B2 @ Gi + G @ B1 @ Gi + G @ B2 @ right_prime
            coeffs.append(np.stack([new1, new2]))
    return c.replace(coeffs=coeffs, normalization=normalization)


def to_malgrange(state: DeformationState) -> RationalConnection:
    """The trivial-normalization connection Gamma1 B* Gamma1^-1 + Gamma1' Gamma1^-1."""
    gauge = gauge_of(state)
    return _transform(
        state.connection, gauge.gamma1, E11, gauge.gamma1_inv, E22, normalization="trivial"
    )


def natural_gauge_parameter(c: RationalConnection) -> complex:
    """The f for which Gamma1(f)^-1 sends the trivial system to residue sum exactly K."""
    if c.normalization != "trivial":
        raise NormalizationError("natural_gauge_parameter needs a trivial-normalized connection")
    _, R, A3 = infinity_coefficients(c)
    R21 = complex(R[1, 0])
    if abs(R21) <= CHART_GUARD:
        raise DegenerateChartError(f"|R21| = {abs(R21):.3e}: no auxiliary chart of this form")
    return (R[0, 0] - R[1, 1]) / (2.0 * R21) + A3[1, 0] / (2.0 * R21**2)


def _check_auxiliary(aux: RationalConnection, gauge: GaugeMap, tol: float) -> None:
    scale = 1.0 + max(float(np.max(np.abs(block))) for block in aux.coeffs)
    defect = float(np.max(np.abs(aux.residue_sum() - aux.infinity_residue_target)))
    state = DeformationState.initial(balance_residues(aux))
    obstruction = abs(apparent_obstruction(state))
    mismatch = abs(compute_u1(state) - gauge.u1) / max(1.0, abs(gauge.u1))
    logger.debug(
        "auxiliary chart: u=%s f=%s residue defect %.3e obstruction %.3e u1 mismatch %.3e",
        gauge.u1,
        gauge.f,
        defect,
        obstruction,
        mismatch,
    )
    if defect > tol * scale:
        raise GaugeConsistencyError(f"auxiliary residue sum misses K by {defect:.3e}")
    if obstruction > tol * scale**3:
        raise GaugeConsistencyError(f"infinity is not apparent: obstruction {obstruction:.3e}")
    if mismatch > tol:
        raise GaugeConsistencyError(f"auxiliary u1 differs from the gauge u1 by {mismatch:.3e}")


def make_auxiliary(
    c: RationalConnection, f0: Optional[complex] = None, tol: float = AUXILIARY_TOLERANCE
) -> Tuple[RationalConnection, GaugeMap]:
    """Auxiliary system Gamma1^-1 B Gamma1 - Gamma1^-1 Gamma1' with u = -1/R21.

    The auxiliary connection is always built with the natural f. A different f0 is
    returned in the GaugeMap; recovering with it yields D c D^-1 for the constant
    D = I + (f0 - f_nat) E12.
    """
    if c.normalization != "trivial":
        raise NormalizationError("make_auxiliary needs a trivial-normalized connection")
    f_nat = natural_gauge_parameter(c)
    _, R, _ = infinity_coefficients(c)
    u = -1.0 / complex(R[1, 0])
    natural = GaugeMap(u, f_nat)
    aux = _transform(c, natural.gamma1_inv, E22, natural.gamma1, E11, normalization="auxiliary")
    _check_auxiliary(aux, natural, tol)
    aux = balance_residues(aux)
    gauge = natural if f0 is None else GaugeMap(u, complex(f0))
    return aux, gauge


def state_for_gauge(aux: RationalConnection, gauge: GaugeMap) -> DeformationState:
    """Initial state whose U2 gauge constant makes compute_f return gauge.f."""
    base = DeformationState.initial(aux)
    u2_gauge = compute_u1(base) * complex(base.U1[1, 1]) - gauge.f
    return DeformationState.initial(aux, u2_gauge)


def bundle_splitting(state: DeformationState) -> int:
    """0 for the trivial bundle (u1 != 0), 1 for O(-1) + O(1) (u1 = 0)."""
    return 0 if abs(compute_u1(state)) > THETA_GUARD else 1


def splitting_bound_check(config: Union[RationalConnection, Tuple[int, int]]) -> bool:
    """m + n <= 5, so 2k <= m + n - 2 forces k = 1 on Theta."""
    m, n = profile(config) if isinstance(config, RationalConnection) else config
    return m + n <= 5
