"""
Isomonodromic deformation of rational connections in the pole positions.

Key components:
- DeformationState: a connection together with the expansion coefficients U1, U2 of
  its fundamental solution Y = (I + U1/z + U2/z^2 + ...) z^K at infinity
  (K = 0 for the trivial normalization);
- schlesinger_rhs / rank1_rhs: derivatives of every coefficient with respect to one
  pole position, from the zero-curvature identity dA/da_i = dOmega_i/dz + [Omega_i, A];
- u1_partial_identity / propagate_U2: the infinity-coefficient derivatives
  dU1/da_i = -B_i1 and dU2/da_i = -B_i1 U1 - (B_i1 a_i + B_i2);
- PolePath / deform_path: integration of the coupled system along a polygonal
  path in pole-position space, with U1 step control, blowup detection in the
  trivial normalization and optional monodromy drift sampling.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from isomlab_utils.logging_config import get_logger
from isomonodromy.connection import (
    DEFAULT_TOLERANCES,
    RationalConnection,
    Tolerances,
    infinity_coefficients,
    min_pole_distance,
)
from isomonodromy.continuation import default_base_point, monodromy_data
from isomonodromy.errors import (
    ConnectionSpecError,
    IntegrationError,
    PoleCollisionError,
    ResonanceError,
)

logger = get_logger(__name__)

U1_RESIDUAL_LIMIT = 1e-8
BLOWUP_CEILING = 1e8
MAX_HALVINGS = 6


def _comm(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return X @ Y - Y @ X


def solve_U1(c: RationalConnection) -> np.ndarray:
    """First coefficient at infinity from -U1 + [U1, A1] = R (A1 = K or 0)."""
    _, R, _ = infinity_coefficients(c)
    if c.normalization == "trivial":
        return -R
    return np.array([[-R[0, 0], R[0, 1]], [-R[1, 0] / 3.0, -R[1, 1]]], dtype=complex)


def solve_U2(c: RationalConnection, U1: np.ndarray, gauge: complex = 0.0) -> np.ndarray:
    """Second coefficient at infinity from -2 U2 + [U2, A1] = R U1 + A3.

    In the auxiliary normalization the (1,2) entry is left free and set to `gauge`;
    the matching (1,2) equation is the apparentness condition, see apparent_obstruction.
    """
    _, R, A3 = infinity_coefficients(c)
    S = R @ U1 + A3
    if c.normalization == "trivial":
        return -S / 2.0
    return np.array(
        [[-S[0, 0] / 2.0, complex(gauge)], [-S[1, 0] / 4.0, -S[1, 1] / 2.0]], dtype=complex
    )


@dataclass(frozen=True, eq=False)
class DeformationState:
    connection: RationalConnection
    U1: np.ndarray
    U2: np.ndarray
    path_parameter: float = 0.0

    @classmethod
    def initial(cls, c: RationalConnection, u2_gauge: complex = 0.0) -> "DeformationState":
        U1 = solve_U1(c)
        return cls(connection=c, U1=U1, U2=solve_U2(c, U1, u2_gauge))

    @property
    def poles(self) -> np.ndarray:
        return self.connection.poles

    @property
    def normalization(self) -> str:
        return self.connection.normalization

    @property
    def u1(self) -> complex:
        return complex(self.U1[0, 1])

    @property
    def u2_gauge(self) -> complex:
        return complex(self.U2[0, 1])

    def u1_residual(self) -> float:
        """Distance between the carried U1 and the algebraic solution."""
        return float(np.max(np.abs(self.U1 - solve_U1(self.connection))))


def apparent_obstruction(state: DeformationState) -> complex:
    """(R U1 + A3)_12: vanishes iff infinity is apparent (auxiliary normalization)."""
    _, R, A3 = infinity_coefficients(state.connection)
    return complex((R @ solve_U1(state.connection) + A3)[0, 1])


@dataclass
class DeformationVectorField:
    """Derivatives of one state with respect to the pole position a_direction."""

    direction: int
    dcoeffs: Tuple[np.ndarray, ...]
    dU1: np.ndarray
    dU2: np.ndarray

    def residue_sum_rate(self) -> np.ndarray:
        return np.sum([block[0] for block in self.dcoeffs], axis=0)


def _check_separation(poles: np.ndarray, tolerances: Tolerances) -> None:
    separation = min_pole_distance(poles)
    if separation < tolerances.separation:
        raise PoleCollisionError(f"pole collision: minimum pairwise distance {separation:.3e}")


def _check_direction(c: RationalConnection, i: int) -> None:
    if not 0 <= i < c.n:
        raise IndexError(f"direction {i} out of range for {c.n} poles")


def _field_blocks(poles, ranks, blocks, i) -> List[np.ndarray]:
    d_blocks = [np.zeros_like(block) for block in blocks]
    Bi1 = blocks[i][0]
    Bi2 = blocks[i][1] if ranks[i] == 1 else None
    for k in range(len(poles)):
        if k == i:
            continue
        d = poles[i] - poles[k]
        Bk1 = blocks[k][0]
        Bk2 = blocks[k][1] if ranks[k] == 1 else None
        dk1 = _comm(Bi1, Bk1) / d
        if Bk2 is not None:
            c12 = _comm(Bi1, Bk2)
            d_blocks[k][1] += c12 / d
            dk1 += c12 / d**2
        if Bi2 is not None:
            c21 = _comm(Bi2, Bk1)
            dk1 -= c21 / d**2
            d_blocks[i][1] -= c21 / d
            if Bk2 is not None:
                c22 = _comm(Bi2, Bk2)
                d_blocks[k][1] -= c22 / d**2
                dk1 -= 2.0 * c22 / d**3
                d_blocks[i][1] -= c22 / d**2
        d_blocks[k][0] += dk1
        d_blocks[i][0] -= dk1
    return d_blocks


def _dU2(Bi1, Bi2, a_i, U1) -> np.ndarray:
    dU2 = -Bi1 @ U1 - Bi1 * a_i
    if Bi2 is not None:
        dU2 = dU2 - Bi2
    return dU2


def schlesinger_rhs(
    state: DeformationState, i: int, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> DeformationVectorField:
    """dB_i/da_i = -sum_j [B_i, B_j]/(a_i - a_j), dB_j/da_i = [B_i, B_j]/(a_i - a_j)."""
    c = state.connection
    if any(r != 0 for r in c.ranks):
        raise ConnectionSpecError("schlesinger_rhs needs an all-Fuchsian connection")
    _check_direction(c, i)
    _check_separation(c.poles, tolerances)
    Bi = c.residue(i)
    dB = [np.zeros((1, 2, 2), dtype=complex) for _ in range(c.n)]
    for j in range(c.n):
        if j == i:
            continue
        term = _comm(Bi, c.residue(j)) / (c.poles[i] - c.poles[j])
        dB[j][0] = term
        dB[i][0] -= term
    return DeformationVectorField(
        direction=i, dcoeffs=tuple(dB), dU1=-Bi.copy(), dU2=_dU2(Bi, None, c.poles[i], state.U1)
    )


def rank1_rhs(
    state: DeformationState, i: int, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> DeformationVectorField:
    """Derivatives along a_i for poles of rank 0 and 1 by partial-fraction matching."""
    c = state.connection
    _check_direction(c, i)
    _check_separation(c.poles, tolerances)
    for k, r in enumerate(c.ranks):
        if r == 1:
            lam = np.linalg.eigvals(c.leading(k))
            if abs(lam[0] - lam[1]) < tolerances.eigen_gap:
                raise ResonanceError(f"leading eigenvalues at pole {k} coincide")
    blocks = [np.array(block) for block in c.coeffs]
    d_blocks = _field_blocks(c.poles, c.ranks, blocks, i)
    Bi2 = c.leading(i) if c.ranks[i] == 1 else None
    return DeformationVectorField(
        direction=i,
        dcoeffs=tuple(d_blocks),
        dU1=-np.array(c.residue(i)),
        dU2=_dU2(c.residue(i), Bi2, c.poles[i], state.U1),
    )


def propagate_U2(state: DeformationState, i: int) -> np.ndarray:
    c = state.connection
    _check_direction(c, i)
    Bi2 = c.leading(i) if c.ranks[i] == 1 else None
    return _dU2(c.residue(i), Bi2, c.poles[i], state.U1)


def _shifted(c: RationalConnection, vf: DeformationVectorField, h: float) -> RationalConnection:
    poles = np.array(c.poles)
    poles[vf.direction] += h
    coeffs = [block + h * d for block, d in zip(c.coeffs, vf.dcoeffs)]
    return c.replace(poles=poles, coeffs=coeffs)


def u1_partial_identity(state: DeformationState, i: int, step: float = 1e-6) -> float:
    """max |(U1(a_i + h) - U1(a_i - h)) / 2h + B_i1| with U1 re-solved algebraically."""
    vf = rank1_rhs(state, i)
    c = state.connection
    forward = solve_U1(_shifted(c, vf, step))
    backward = solve_U1(_shifted(c, vf, -step))
    fd = (forward - backward) / (2.0 * step)
    return float(np.max(np.abs(fd + c.residue(i))))


@dataclass(frozen=True)
class PolePath:
    """Polygonal path in pole-position space: one full pole vector per waypoint."""

    waypoints: Tuple[np.ndarray, ...]

    def __post_init__(self):
        points = tuple(np.atleast_1d(np.asarray(p, dtype=complex)) for p in self.waypoints)
        if not points:
            raise ValueError("a pole path needs at least one waypoint")
        if any(p.shape != points[0].shape for p in points):
            raise ValueError("every waypoint must list the same number of poles")
        object.__setattr__(self, "waypoints", points)

    @classmethod
    def segment_to(cls, a: Sequence[complex], index: int, target: complex) -> "PolePath":
        start = np.asarray(a, dtype=complex)
        end = start.copy()
        end[index] = target
        return cls((start, end))

    @classmethod
    def from_moves(cls, a: Sequence[complex], moves: Dict[int, Sequence[complex]]) -> "PolePath":
        """Waypoint lists per moving coordinate; shorter lists hold their last value."""
        start = np.asarray(a, dtype=complex)
        legs = max((len(v) for v in moves.values()), default=0)
        points = [start]
        for leg in range(legs):
            point = points[-1].copy()
            for index, targets in moves.items():
                if not 0 <= int(index) < start.size:
                    raise IndexError(f"moving coordinate {index} out of range")
                if targets:
                    point[int(index)] = targets[min(leg, len(targets) - 1)]
            points.append(point)
        return cls(tuple(points))

    @property
    def legs(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.waypoints, self.waypoints[1:]))

    def length(self) -> float:
        return float(sum(np.linalg.norm(b - a) for a, b in self.legs))


@dataclass
class TraceRow:
    s: float
    poles: np.ndarray
    norms: List[List[float]]
    u1: complex

    def as_dict(self) -> dict:
        return {"s": self.s, "poles": self.poles, "norms": self.norms, "u1": self.u1}


@dataclass
class DeformationDiagnostics:
    residue_sum_drift: float = 0.0
    max_u1_residual: float = 0.0
    rejected_segments: int = 0
    accepted_steps: int = 0
    blowup: bool = False
    blowup_parameter: Optional[float] = None
    monodromy_trace_drift: Optional[float] = None
    monodromy_det_drift: Optional[float] = None
    trace: List[TraceRow] = field(default_factory=list)

    def as_dict(self, include_trace: bool = True) -> dict:
        out = {
            "residue_sum_drift": self.residue_sum_drift,
            "max_u1_residual": self.max_u1_residual,
            "rejected_segments": self.rejected_segments,
            "accepted_steps": self.accepted_steps,
            "blowup": self.blowup,
            "blowup_parameter": self.blowup_parameter,
            "monodromy_trace_drift": self.monodromy_trace_drift,
            "monodromy_det_drift": self.monodromy_det_drift,
        }
        if include_trace:
            out["trace"] = [row.as_dict() for row in self.trace]
        return out


@dataclass
class DeformationResult:
    state: DeformationState
    diagnostics: DeformationDiagnostics


class _CoupledSystem:
    """Packs {B_kj, U1, U2} into one complex vector for solve_ivp."""

    def __init__(self, c: RationalConnection):
        self.template = c
        self.ranks = c.ranks
        self.sizes = [4 * (r + 1) for r in c.ranks]
        self.offsets = np.cumsum([0] + self.sizes)
        self.coeff_size = int(self.offsets[-1])

    def pack(self, state: DeformationState) -> np.ndarray:
        parts = [block.ravel() for block in state.connection.coeffs]
        parts += [np.asarray(state.U1).ravel(), np.asarray(state.U2).ravel()]
        return np.concatenate(parts).astype(complex)

    def blocks(self, y: np.ndarray) -> List[np.ndarray]:
        return [
            y[self.offsets[k] : self.offsets[k + 1]].reshape(r + 1, 2, 2)
            for k, r in enumerate(self.ranks)
        ]

    def unpack(self, y: np.ndarray, poles: np.ndarray, s: float) -> DeformationState:
        c = self.template.replace(poles=poles, coeffs=[b.copy() for b in self.blocks(y)])
        U1 = y[self.coeff_size : self.coeff_size + 4].reshape(2, 2).copy()
        U2 = y[self.coeff_size + 4 : self.coeff_size + 8].reshape(2, 2).copy()
        return DeformationState(connection=c, U1=U1, U2=U2, path_parameter=s)

    def rhs_factory(self, start: np.ndarray, delta: np.ndarray):
        moving = [i for i in range(delta.size) if delta[i] != 0]

        def rhs(s, y):
            poles = start + s * delta
            blocks = self.blocks(y)
            U1 = y[self.coeff_size : self.coeff_size + 4].reshape(2, 2)
            dy = np.zeros_like(y)
            for i in moving:
                d_blocks = _field_blocks(poles, self.ranks, blocks, i)
                Bi1 = blocks[i][0]
                Bi2 = blocks[i][1] if self.ranks[i] == 1 else None
                dy[: self.coeff_size] += delta[i] * np.concatenate([b.ravel() for b in d_blocks])
                dy[self.coeff_size : self.coeff_size + 4] += -delta[i] * Bi1.ravel()
                dy[self.coeff_size + 4 :] += delta[i] * _dU2(Bi1, Bi2, poles[i], U1).ravel()
            return dy

        return rhs

    def u1_residual(self, y: np.ndarray, poles: np.ndarray) -> float:
        c = self.template.replace(poles=poles, coeffs=self.blocks(y))
        U1 = y[self.coeff_size : self.coeff_size + 4].reshape(2, 2)
        algebraic = solve_U1(c)
        return float(np.max(np.abs(U1 - algebraic)) / (1.0 + np.max(np.abs(algebraic))))


def _check_leg(start: np.ndarray, end: np.ndarray, tolerances: Tolerances) -> None:
    n = start.size
    for j in range(n):
        for k in range(j + 1, n):
            d0 = start[j] - start[k]
            d1 = end[j] - end[k]
            dd = d1 - d0
            s = 0.0 if dd == 0 else min(1.0, max(0.0, -(d0 * dd.conjugate()).real / abs(dd) ** 2))
            closest = abs(d0 + s * dd)
            if closest < tolerances.separation:
                raise PoleCollisionError(
                    f"pole collision: poles {j} and {k} come within {closest:.3e} along the path"
                )


def _norms(blocks: Sequence[np.ndarray]) -> List[List[float]]:
    return [[float(np.linalg.norm(B)) for B in block] for block in blocks]


def deform_path(
    state0: DeformationState,
    path: PolePath,
    tol: float = 1e-10,
    ceiling: float = BLOWUP_CEILING,
    monodromy_check: bool = False,
    monodromy_tol: float = 1e-11,
    max_halvings: int = MAX_HALVINGS,
    record_trace: bool = True,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> DeformationResult:
    """Integrate the isomonodromic family of state0 along `path`.

    U1 is carried along and compared with its algebraic value after every solver
    step; a span whose residual exceeds the limit is halved and retried with a
    tighter tolerance. In the trivial normalization the integration stops (without
    raising) when a coefficient modulus reaches `ceiling`.
    """
    c0 = state0.connection
    if path.waypoints[0].size != c0.n:
        raise ValueError(f"path moves {path.waypoints[0].size} poles, connection has {c0.n}")
    if not np.allclose(path.waypoints[0], c0.poles, rtol=0.0, atol=1e-14):
        raise ValueError("path must start at the poles of the initial state")

    system = _CoupledSystem(c0)
    target = c0.infinity_residue_target
    diagnostics = DeformationDiagnostics()
    watch_blowup = c0.normalization == "trivial"
    y = system.pack(state0)
    poles = np.array(c0.poles)
    legs = path.legs
    s_end = state0.path_parameter

    def record(s_local: float, leg: int, yy: np.ndarray, pp: np.ndarray) -> None:
        blocks = system.blocks(yy)
        drift = float(np.max(np.abs(np.sum([b[0] for b in blocks], axis=0) - target)))
        diagnostics.residue_sum_drift = max(diagnostics.residue_sum_drift, drift)
        if record_trace:
            diagnostics.trace.append(
                TraceRow(
                    s=(leg + s_local) / max(len(legs), 1),
                    poles=pp.copy(),
                    norms=_norms(blocks),
                    u1=complex(yy[system.coeff_size + 1]),
                )
            )

    record(0.0, 0, y, poles)
    for leg, (start, end) in enumerate(legs):
        delta = end - start
        if not np.any(delta):
            continue
        _check_leg(start, end, tolerances)
        rhs = system.rhs_factory(start, delta)
        pending = [(0.0, 1.0, 0)]
        while pending:
            s0, s1, depth = pending.pop(0)
            rtol = max(tol * 0.1**depth, 1e-13)
            events = None
            if watch_blowup:

                def blowup(s, yy):
                    return ceiling - float(np.max(np.abs(yy[: system.coeff_size])))

                blowup.terminal = True
                blowup.direction = -1
                events = blowup
            sol = solve_ivp(rhs, (s0, s1), y, method="RK45", rtol=rtol, atol=rtol, events=events)
            if sol.status == -1:
                raise IntegrationError(f"deformation failed on leg {leg} at s={s0}: {sol.message}")
            residual = max(
                system.u1_residual(sol.y[:, k], start + sol.t[k] * delta)
                for k in range(sol.t.size)
            )
            if residual > U1_RESIDUAL_LIMIT and sol.status != 1:
                if depth >= max_halvings:
                    raise IntegrationError(
                        f"U1 residual {residual:.3e} above {U1_RESIDUAL_LIMIT} after "
                        f"{max_halvings} halvings on leg {leg}"
                    )
                diagnostics.rejected_segments += 1
                mid = 0.5 * (s0 + s1)
                logger.debug("rejecting span [%.6f, %.6f]: U1 residual %.3e", s0, s1, residual)
                pending[0:0] = [(s0, mid, depth + 1), (mid, s1, depth + 1)]
                continue
            diagnostics.max_u1_residual = max(diagnostics.max_u1_residual, residual)
            for k in range(1, sol.t.size):
                diagnostics.accepted_steps += 1
                record(sol.t[k], leg, sol.y[:, k], start + sol.t[k] * delta)
            y = sol.y[:, -1]
            poles = start + sol.t[-1] * delta
            s_end = (leg + sol.t[-1]) / len(legs)
            if sol.status == 1:
                diagnostics.blowup = True
                diagnostics.blowup_parameter = s_end
                logger.warning(
                    "coefficients reached %.1e at path parameter %.6f; stopping", ceiling, s_end
                )
                break
        if diagnostics.blowup:
            break

    state = system.unpack(y, poles, s_end)
    state = DeformationState(
        connection=state.connection,
        U1=solve_U1(state.connection),
        U2=state.U2,
        path_parameter=s_end,
    )
    if monodromy_check and not diagnostics.blowup:
        _monodromy_drift(state0, state, monodromy_tol, diagnostics)
    return DeformationResult(state=state, diagnostics=diagnostics)


def _monodromy_drift(
    state0: DeformationState,
    state1: DeformationState,
    tol: float,
    diagnostics: DeformationDiagnostics,
) -> None:
    b0 = default_base_point(state0.connection)
    b1 = default_base_point(state1.connection)
    base = complex(0.5 * (b0.real + b1.real), min(b0.imag, b1.imag))
    m0 = monodromy_data(state0.connection, base, tol)
    m1 = monodromy_data(state1.connection, base, tol)
    diagnostics.monodromy_trace_drift = float(np.max(np.abs(m0.traces() - m1.traces())))
    diagnostics.monodromy_det_drift = float(np.max(np.abs(m0.determinants() - m1.determinants())))
    logger.debug(
        "monodromy drift: trace %.3e, det %.3e",
        diagnostics.monodromy_trace_drift,
        diagnostics.monodromy_det_drift,
    )
