"""
Analytic continuation of fundamental solutions of dY/dz = B(z) Y.

Key components:
- ComplexPath: polygonal path in the z-plane (open or closed);
- integrate_along_path: adaptive Runge-Kutta transport of a fundamental matrix,
  one solve_ivp call per straight segment (Dormand-Prince 5(4), with the 8th-order
  pair as fallback when the first attempt fails);
- make_loop / monodromy_matrix / monodromy_data: loops around single poles and the
  monodromy representation in the basis normalized to I at the base point;
- normalized_log: the logarithm E with exp(2 pi i E) = G and spectrum in the strip
  0 <= Re rho < 1;
- irreducibility_check / common_invariant_line: reducibility test for 2x2 monodromy;
- apparent_infinity_check: trivial monodromy around a circle enclosing every pole.
"""

import cmath
import concurrent.futures
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from isomlab_utils.logging_config import get_logger
from isomonodromy.connection import (
    DEFAULT_TOLERANCES,
    IDENTITY,
    RationalConnection,
    Tolerances,
    min_pole_distance,
    validate_connection,
)
from isomonodromy.errors import (
    IntegrationError,
    LoopConstructionError,
    NormalizationError,
    PoleProximityError,
    SingularMatrixError,
)

logger = get_logger(__name__)

TWO_PI_I = 2j * math.pi
LOOP_VERTICES = 32
INFINITY_LOOP_VERTICES = 64
DETERMINANT_DRIFT_WARNING = 1e-6


@dataclass(frozen=True)
class ComplexPath:
    """Polygonal path through `waypoints`; a closed path ends where it starts."""

    waypoints: Tuple[complex, ...]
    closed: bool = False

    def __post_init__(self):
        points = [complex(z) for z in self.waypoints]
        if self.closed and points and points[-1] != points[0]:
            points.append(points[0])
        if len(points) < 2:
            raise ValueError("a path needs at least two waypoints")
        for z0, z1 in zip(points, points[1:]):
            if z0 == z1:
                raise ValueError(f"consecutive waypoints coincide at {z0}")
        object.__setattr__(self, "waypoints", tuple(points))

    @property
    def start(self) -> complex:
        return self.waypoints[0]

    @property
    def end(self) -> complex:
        return self.waypoints[-1]

    def segments(self) -> List[Tuple[complex, complex]]:
        return list(zip(self.waypoints, self.waypoints[1:]))

    def reversed(self) -> "ComplexPath":
        return ComplexPath(tuple(reversed(self.waypoints)), closed=self.closed)

    def concatenate(self, other: "ComplexPath") -> "ComplexPath":
        if abs(self.end - other.start) > 1e-14 * max(1.0, abs(self.end)):
            raise ValueError("paths do not join: end of the first differs from start of the second")
        points = self.waypoints + other.waypoints[1:]
        return ComplexPath(points, closed=points[0] == points[-1])

    def as_dict(self) -> dict:
        return {"waypoints": list(self.waypoints), "closed": self.closed}


def _segment_distance(p: complex, z0: complex, z1: complex) -> float:
    dz = z1 - z0
    s = ((p - z0) * dz.conjugate()).real / abs(dz) ** 2
    s = min(1.0, max(0.0, s))
    return abs(p - (z0 + s * dz))


def path_clearance(poles: Sequence[complex], path: ComplexPath) -> float:
    """Smallest distance between any pole and any segment of the path."""
    return min(
        (_segment_distance(complex(a), z0, z1) for a in poles for z0, z1 in path.segments()),
        default=float("inf"),
    )


def check_path(
    c: RationalConnection, path: ComplexPath, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> None:
    for i, a in enumerate(c.poles):
        for z0, z1 in path.segments():
            d = _segment_distance(complex(a), z0, z1)
            if d <= tolerances.evaluation_guard:
                raise PoleProximityError(
                    f"segment {z0} -> {z1} passes within {d:.3e} of pole {i} at {a}"
                )


def _rhs_factory(c: RationalConnection, z0: complex, dz: complex):
    poles = np.asarray(c.poles)
    residues = c.residues
    rank1 = [i for i, r in enumerate(c.ranks) if r == 1]
    leading = np.stack([c.leading(i) for i in rank1]) if rank1 else None
    rank1_poles = poles[rank1] if rank1 else None

    def rhs(s, y):
        z = z0 + s * dz
        B = np.tensordot(1.0 / (z - poles), residues, axes=1)
        if leading is not None:
            B = B + np.tensordot(1.0 / (z - rank1_poles) ** 2, leading, axes=1)
        return (dz * (B @ y.reshape(2, 2))).ravel()

    return rhs


def _transport_segment(
    c: RationalConnection, z0: complex, z1: complex, Y: np.ndarray, tol: float
) -> np.ndarray:
    rhs = _rhs_factory(c, z0, z1 - z0)
    y0 = np.asarray(Y, dtype=complex).ravel()
    sol = None
    for method in ("RK45", "DOP853"):
        sol = solve_ivp(rhs, (0.0, 1.0), y0, method=method, rtol=tol, atol=tol)
        if sol.status == 0:
            return sol.y[:, -1].reshape(2, 2)
        logger.debug("%s failed on segment %s -> %s: %s", method, z0, z1, sol.message)
    raise IntegrationError(f"integration failed on segment {z0} -> {z1}: {sol.message}")


def trace_integral(c: RationalConnection, path: ComplexPath) -> complex:
    """Integral of tr B(z) dz along a pole-free polygonal path (continuous log branch)."""
    total = 0j
    for z0, z1 in path.segments():
        for a, block in zip(c.poles, c.coeffs):
            # a straight segment sweeps an angle below pi around any pole not on it
            total += np.trace(block[0]) * cmath.log((z1 - a) / (z0 - a))
            if block.shape[0] == 2:
                total += np.trace(block[1]) * (1.0 / (z0 - a) - 1.0 / (z1 - a))
    return complex(total)


def integrate_along_path(
    c: RationalConnection,
    path: ComplexPath,
    Y0: np.ndarray = IDENTITY,
    tol: float = 1e-10,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """Transport Y0 along `path` under dY/dz = B(z) Y and return Y at the endpoint.

    Each straight segment is integrated with RK45 at rtol = atol = tol; a segment on
    which RK45 fails (step-size underflow) is retried once with DOP853 before
    IntegrationError is raised. The determinant is compared with exp of the trace
    integral after every segment and a drift above 1e-6 is logged as a warning.
    """
    check_path(c, path, tolerances)
    Y = np.array(Y0, dtype=complex)
    det0 = np.linalg.det(Y)
    if not np.isfinite(det0) or abs(det0) == 0.0:
        raise SingularMatrixError("initial matrix of a transport must be invertible")
    log_det = cmath.log(det0)
    for z0, z1 in path.segments():
        Y = _transport_segment(c, z0, z1, Y, tol)
        if not np.all(np.isfinite(Y)):
            raise IntegrationError(f"transport diverged on segment {z0} -> {z1}")
        log_det += trace_integral(c, ComplexPath((z0, z1)))
        det = np.linalg.det(Y)
        expected = cmath.exp(log_det)
        drift = abs(det - expected) / abs(expected)
        if det == 0.0 or drift > DETERMINANT_DRIFT_WARNING:
            logger.warning(
                "determinant collapse on segment %s -> %s: relative drift %.3e", z0, z1, drift
            )
    return Y


def default_base_point(c: RationalConnection) -> complex:
    """A point below every pole, slightly off the vertical through the centroid."""
    spread = float(np.max(np.abs(c.poles - c.poles.mean()))) if c.n > 1 else 1.0
    return complex(
        c.poles.real.mean() + 0.1234 * max(spread, 1.0), c.poles.imag.min() - max(1.0, 0.5 * spread)
    )


def _loop_radius(c: RationalConnection, i: int) -> float:
    others = [abs(c.poles[i] - c.poles[j]) for j in range(c.n) if j != i]
    return min(0.5 * min(others), 0.5) if others else 0.5


def _tail_clear(poles: Sequence[complex], points: Sequence[complex], clearance: float) -> bool:
    tail = ComplexPath(tuple(points))
    return path_clearance(poles, tail) > clearance


def make_loop(
    c: RationalConnection,
    i: int,
    base_point: Optional[complex] = None,
    vertices: int = LOOP_VERTICES,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> ComplexPath:
    """Counterclockwise loop from the base point around pole i and no other pole.

    The loop is a tail from the base point to a circle of radius
    min(half the distance to the nearest other pole, 0.5) around a_i, the circle,
    and the tail back. A straight tail that grazes another pole is replaced by a
    two-segment detour with a perpendicular offset.
    """
    b = default_base_point(c) if base_point is None else complex(base_point)
    a = complex(c.poles[i])
    rho = _loop_radius(c, i)
    if abs(b - a) < 1.25 * rho:
        rho = 0.5 * abs(b - a)
    clearance = 0.9 * min(rho, 0.5 * min(min_pole_distance(c.poles), 1.0))
    if rho <= 10 * tolerances.evaluation_guard or clearance <= tolerances.evaluation_guard:
        raise LoopConstructionError(f"cannot isolate pole {i} at {a}: neighbours too close")

    phi = cmath.phase(b - a)
    p = a + rho * cmath.exp(1j * phi)
    circle = [a + rho * cmath.exp(1j * (phi + 2 * math.pi * k / vertices)) for k in range(vertices)]
    circle.append(p)

    others = np.delete(c.poles, i)

    tail = [b, p]
    if others.size and not _tail_clear(others, tail, clearance):
        normal = 1j * (p - b) / abs(p - b)
        for offset in (0.25, -0.25, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0):
            mid = 0.5 * (b + p) + offset * abs(p - b) * normal
            candidate = [b, mid, p]
            if _tail_clear(others, candidate, clearance) and _tail_clear(
                c.poles, [b, mid], clearance
            ):
                tail = candidate
                break
        else:
            raise LoopConstructionError(f"no detour from {b} reaches pole {i} at {a}")
    waypoints = tail + circle[1:] + list(reversed(tail))[1:]
    return ComplexPath(tuple(waypoints), closed=True)


def monodromy_matrix(
    c: RationalConnection,
    i: int,
    base_point: Optional[complex] = None,
    tol: float = 1e-10,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """G_i in the fundamental-solution basis normalized to I at the base point."""
    loop = make_loop(c, i, base_point, tolerances=tolerances)
    return integrate_along_path(c, loop, IDENTITY, tol, tolerances)


def _shift_to_strip(rho: complex) -> complex:
    rho = rho - math.floor(rho.real)
    if rho.real >= 1.0:
        rho -= 1.0
    return rho


def normalized_log(G: np.ndarray, condition_limit: float = 1e6) -> np.ndarray:
    """E with exp(2 pi i E) = G and every eigenvalue of E in 0 <= Re rho < 1.

    Diagonalizable G uses its eigendecomposition, E = P diag(rho) P^-1, which stays
    accurate when the two eigenvalues sit on opposite sides of the branch cut. When
    the eigenvector matrix is worse conditioned than `condition_limit`, G is nearly
    defective and is written as lambda (I + N) with tr N = 0; then N @ N = mu^2 I and
    log(I + N) = log(1 - mu^2)/2 I + atanh(mu)/mu N exactly.
    """
    G = np.asarray(G, dtype=complex)
    det = np.linalg.det(G)
    if not np.isfinite(det) or abs(det) <= 1e-300:
        raise SingularMatrixError("normalized_log needs an invertible matrix")
    lam, P = np.linalg.eig(G)
    if np.linalg.cond(P) <= condition_limit:
        rho = [_shift_to_strip(cmath.log(v) / TWO_PI_I) for v in lam]
        return P @ np.diag(rho) @ np.linalg.inv(P)
    center = np.trace(G) / 2.0
    N = G / center - IDENTITY
    mu = cmath.sqrt(-np.linalg.det(N))
    b = 1.0 + mu * mu / 3.0 if abs(mu) < 1e-8 else cmath.atanh(mu) / mu
    log_G = (cmath.log(center) + 0.5 * np.log1p(-mu * mu)) * IDENTITY + b * N
    shift = math.floor((cmath.log(center) / TWO_PI_I).real)
    return log_G / TWO_PI_I - shift * IDENTITY


def exponents(E: np.ndarray) -> Tuple[complex, complex]:
    a, b = sorted((complex(v) for v in np.linalg.eigvals(E)), key=lambda v: (v.real, v.imag))
    return a, b


@dataclass
class MonodromyData:
    base_point: complex
    loops: List[ComplexPath]
    matrices: List[np.ndarray]
    normalized_logs: List[np.ndarray] = field(default_factory=list)
    exponents: List[Tuple[complex, complex]] = field(default_factory=list)
    tol: float = 1e-10

    def traces(self) -> np.ndarray:
        return np.array([np.trace(G) for G in self.matrices])

    def determinants(self) -> np.ndarray:
        return np.array([np.linalg.det(G) for G in self.matrices])

    def as_dict(self) -> dict:
        return {
            "base_point": self.base_point,
            "tol": self.tol,
            "loops": [loop.as_dict() for loop in self.loops],
            "matrices": self.matrices,
            "normalized_logs": self.normalized_logs,
            "exponents": self.exponents,
            "traces": self.traces(),
            "determinants": self.determinants(),
        }


def monodromy_data(
    c: RationalConnection,
    base_point: Optional[complex] = None,
    tol: float = 1e-10,
    jobs: int = 1,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> MonodromyData:
    """All monodromy matrices with their normalized logarithms; loops run concurrently."""
    b = default_base_point(c) if base_point is None else complex(base_point)
    loops = [make_loop(c, i, b, tolerances=tolerances) for i in range(c.n)]

    def run(loop):
        return integrate_along_path(c, loop, IDENTITY, tol, tolerances)

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        matrices = list(executor.map(run, loops))
    logs = [normalized_log(G) for G in matrices]
    return MonodromyData(
        base_point=b,
        loops=loops,
        matrices=matrices,
        normalized_logs=logs,
        exponents=[exponents(E) for E in logs],
        tol=tol,
    )


def _is_scalar(G: np.ndarray, tol: float) -> bool:
    lam = np.trace(G) / 2.0
    return float(np.max(np.abs(G - lam * IDENTITY))) <= tol * max(1.0, abs(lam))


def _leaves_line_invariant(G: np.ndarray, v: np.ndarray, tol: float) -> bool:
    w = G @ v
    cross = abs(v[0] * w[1] - v[1] * w[0])
    return cross <= tol * np.linalg.norm(v) * max(np.linalg.norm(w), 1e-300)


def common_invariant_line(
    matrices: Sequence[np.ndarray], tol: float = 1e-6
) -> Optional[np.ndarray]:
    """A unit vector spanning a line invariant under every matrix, or None."""
    matrices = [np.asarray(G, dtype=complex) for G in matrices]
    active = [G for G in matrices if not _is_scalar(G, tol)]
    if not active:
        return np.array([1.0 + 0j, 0.0 + 0j])
    _, vectors = np.linalg.eig(active[0])
    for k in range(2):
        v = vectors[:, k] / np.linalg.norm(vectors[:, k])
        if all(_leaves_line_invariant(G, v, tol) for G in active):
            return v
    return None


def irreducibility_check(ms, tol: float = 1e-6) -> bool:
    """True iff no line is invariant under every monodromy matrix (2x2 case)."""
    matrices = ms.matrices if isinstance(ms, MonodromyData) else ms
    if len(matrices) < 2:
        raise ValueError("irreducibility needs at least two monodromy matrices")
    return common_invariant_line(matrices, tol) is None


def infinity_loop(c: RationalConnection, vertices: int = INFINITY_LOOP_VERTICES) -> ComplexPath:
    center = complex(c.poles.mean())
    radius = 2.0 * float(np.max(np.abs(c.poles - center))) + 1.0
    points = [center + radius * cmath.exp(2j * math.pi * k / vertices) for k in range(vertices)]
    return ComplexPath(tuple(points), closed=True)


def infinity_monodromy(
    c: RationalConnection, tol: float = 1e-10, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> np.ndarray:
    """Transport of I once counterclockwise around a circle enclosing every pole."""
    return integrate_along_path(c, infinity_loop(c), IDENTITY, tol, tolerances)


@dataclass
class InfinityCheck:
    apparent: bool
    deviation: float
    monodromy: np.ndarray

    def __bool__(self) -> bool:
        return self.apparent


def apparent_infinity_check(
    c: RationalConnection,
    tol: float = 1e-6,
    integration_tol: float = 1e-11,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> InfinityCheck:
    """Trivial monodromy at infinity for an auxiliary-normalized connection."""
    if c.normalization != "auxiliary":
        raise NormalizationError("apparent_infinity_check needs the auxiliary normalization")
    report = validate_connection(c, tolerances)
    if not report.passed:
        names = ", ".join(f.name for f in report.failures())
        raise NormalizationError(f"connection fails validation ({names})")
    G_inf = infinity_monodromy(c, integration_tol, tolerances)
    deviation = float(np.max(np.abs(G_inf - IDENTITY)))
    if deviation >= tol:
        logger.info("monodromy at infinity deviates from I by %.3e", deviation)
    return InfinityCheck(apparent=deviation < tol, deviation=deviation, monodromy=G_inf)
