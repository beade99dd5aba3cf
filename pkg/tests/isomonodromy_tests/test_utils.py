"""
Shared builders and oracles for the isomonodromy tests.
"""

from typing import Sequence

import numpy as np

from isomonodromy.connection import (
    RationalConnection,
    balance_residues,
    evaluate_matrix,
    min_pole_distance,
)
from isomonodromy.deformation import DeformationState, DeformationVectorField


def complex_normal(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def random_poles(rng: np.random.Generator, n: int, separation: float = 0.8) -> np.ndarray:
    while True:
        poles = rng.uniform(-2.0, 2.0, n) + 1j * rng.uniform(-2.0, 2.0, n)
        if min_pole_distance(poles) >= separation:
            return poles


def random_connection(
    rng: np.random.Generator,
    ranks: Sequence[int],
    normalization: str = "trivial",
    scale: float = 0.4,
) -> RationalConnection:
    """Balanced connection with leading coefficients well away from resonance."""
    poles = random_poles(rng, len(ranks))
    coeffs = []
    for r in ranks:
        block = [complex_normal(rng, (2, 2), scale)]
        if r == 1:
            while True:
                L = complex_normal(rng, (2, 2), scale)
                lam = np.linalg.eigvals(L)
                if abs(lam[0] - lam[1]) > 0.1:
                    break
            block.append(L)
        coeffs.append(np.stack(block))
    c = RationalConnection(poles=poles, ranks=tuple(ranks), coeffs=coeffs, normalization=normalization)
    return balance_residues(c)


def fuchsian(poles: Sequence[complex], residues: Sequence, normalization: str = "trivial"):
    return RationalConnection(
        poles=np.asarray(poles, dtype=complex),
        ranks=(0,) * len(poles),
        coeffs=[np.asarray(B, dtype=complex)[None] for B in residues],
        normalization=normalization,
    )


def diagonal_connection(ranks: Sequence[int] = (0, 0, 1)) -> RationalConnection:
    """Every coefficient diagonal: the deformation field vanishes identically."""
    poles = [0.0, 1.5, 1.0j][: len(ranks)]
    coeffs = []
    for k, r in enumerate(ranks):
        block = [np.diag([0.1 * (k + 1), -0.2 * (k + 1)])]
        if r == 1:
            block.append(np.diag([0.3, -0.4]))
        coeffs.append(np.array(block, dtype=complex))
    return balance_residues(RationalConnection(poles=poles, ranks=tuple(ranks), coeffs=coeffs))


def zero_curvature_residual(
    state: DeformationState, vf: DeformationVectorField, z: complex
) -> float:
    """Relative |dB(z)/da_i - [Omega_i(z), B(z)]| with the explicit a_i dependence removed.

    Omega_i = -(B_i1/(z - a_i) + B_i2/(z - a_i)^2); its z-derivative cancels the
    explicit derivative of the a_i terms of B, leaving the coefficient variations.
    """
    c = state.connection
    i = vf.direction
    d = z - c.poles
    lhs = np.zeros((2, 2), dtype=complex)
    for k, block in enumerate(vf.dcoeffs):
        for j, dB in enumerate(block, start=1):
            lhs += dB / d[k] ** j
    omega = -sum(B / d[i] ** j for j, B in enumerate(c.coeffs[i], start=1))
    B = evaluate_matrix(c, z)
    rhs = omega @ B - B @ omega
    scale = 1.0 + max(float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
    return float(np.max(np.abs(lhs - rhs))) / scale


def relative_error(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x), np.asarray(y)
    return float(np.max(np.abs(x - y)) / max(1.0, float(np.max(np.abs(y)))))
