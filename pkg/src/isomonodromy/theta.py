"""
Locating the divisor Theta = {u1 = 0} on one-coordinate slices.

Provides:
- A base slice interface (TauSlice) with a live implementation that deforms one pole
  position from cached states (DeformationSlice) and a closed-form implementation
  for harness functions (SyntheticSlice).
- theta_scan: argument-principle count of zeros of u1 inside a disc, on a polar grid
  whose rays are integrated concurrently, followed by Newton refinement seeded at
  grid minima of |u1|.
- refine_zero: Newton iteration with du1/da_i = -b_i1 and a multiplicity estimate.
- pole_order_fit: blow-up exponents of the recovered family as u1 -> 0 along a ray.
"""

import cmath
import concurrent.futures
import math
import threading
from collections import deque
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Deque, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from isomlab_utils.logging_config import get_logger
from isomonodromy.connection import DEFAULT_TOLERANCES, Tolerances
from isomonodromy.deformation import DeformationState, PolePath, deform_path
from isomonodromy.errors import (
    InconclusiveScanError,
    NonConvergenceError,
    NormalizationError,
    PoleCollisionError,
    SamplingError,
)
from isomonodromy.tau import compute_u1, to_malgrange

logger = get_logger(__name__)

DEFAULT_LEVELS = (1e-2, 1e-3, 1e-4, 1e-5)
MAX_CACHED_STATES = 512


class TauSlice(ABC):
    """u1 restricted to one complex pole coordinate, other coordinates frozen."""

    coordinate: int = 0

    @abstractmethod
    def u1(self, a: complex) -> complex:
        """Value of the tau function at slice coordinate a."""

    @abstractmethod
    def gradient(self, a: complex) -> complex:
        """du1/da along the slice."""

    @abstractmethod
    def malgrange_coefficients(self, a: complex) -> List[np.ndarray]:
        """Coefficient matrices of the recovered trivial-normalization family at a."""

    def gradient_entries(self, a: complex) -> List[complex]:
        """Position gradient of u1 in every available direction."""
        return [self.gradient(a)]

    def noise_floor(self) -> float:
        return 1e-15

    def check_disc(self, center: complex, radius: float) -> None:
        """Raise PoleCollisionError when the disc meets another pole."""

    def ray(self, center: complex, angle: float, radii: Sequence[float]) -> List[complex]:
        """u1 at center + r e^{i angle} for increasing radii."""
        direction = complex(math.cos(angle), math.sin(angle))
        return [self.u1(center + r * direction) for r in radii]


class SyntheticSlice(TauSlice):
    """Closed-form harness: u1, its derivative and optional recovered coefficients."""

    def __init__(
        self,
        u1: Callable[[complex], complex],
        derivative: Callable[[complex], complex],
        coefficients: Optional[Callable[[complex], List[np.ndarray]]] = None,
        coordinate: int = 0,
    ):
        self._u1 = u1
        self._derivative = derivative
        self._coefficients = coefficients
        self.coordinate = coordinate

    @classmethod
    def power(cls, a0: complex, order: int = 1) -> "SyntheticSlice":
        """u1(a) = (a - a0)^order."""
        return cls(lambda a: (a - a0) ** order, lambda a: order * (a - a0) ** (order - 1))

    @classmethod
    def pole_harness(cls, a0: complex, exponent: int, M: np.ndarray) -> "SyntheticSlice":
        """u1(a) = a - a0 with a single recovered coefficient M / u1^exponent."""
        M = np.asarray(M, dtype=complex)
        return cls(
            lambda a: a - a0,
            lambda a: 1.0 + 0j,
            coefficients=lambda a: [M / (a - a0) ** exponent],
        )

    def u1(self, a: complex) -> complex:
        return complex(self._u1(a))

    def gradient(self, a: complex) -> complex:
        return complex(self._derivative(a))

    def malgrange_coefficients(self, a: complex) -> List[np.ndarray]:
        if self._coefficients is None:
            raise NotImplementedError("this harness carries no recovered coefficients")
        return self._coefficients(a)


class DeformationSlice(TauSlice):
    """Live slice: the state at a is reached by deform_path from the nearest cached state."""

    def __init__(
        self,
        base: DeformationState,
        coordinate: int,
        tol: float = 1e-10,
        tolerances: Tolerances = DEFAULT_TOLERANCES,
        max_cached: int = MAX_CACHED_STATES,
    ):
        if base.normalization != "auxiliary":
            raise NormalizationError("a Theta slice needs an auxiliary-normalized state")
        if not 0 <= coordinate < base.connection.n:
            raise IndexError(f"slice coordinate {coordinate} out of range")
        self.base = base
        self.coordinate = coordinate
        self.tol = tol
        self.tolerances = tolerances
        self._origin = (complex(base.poles[coordinate]), base)
        # most recent states; the base state is never evicted
        self._cache: Deque[Tuple[complex, DeformationState]] = deque(maxlen=max_cached)
        self._lock = threading.Lock()

    def _nearest(self, a: complex) -> DeformationState:
        with self._lock:
            best = min(self._cache, key=lambda item: abs(item[0] - a), default=self._origin)
        if abs(self._origin[0] - a) < abs(best[0] - a):
            return self._origin[1]
        return best[1]

    def _remember(self, a: complex, state: DeformationState) -> None:
        with self._lock:
            self._cache.append((a, state))

    def cached_states(self) -> int:
        return len(self._cache)

    def _advance(self, state: DeformationState, a: complex) -> DeformationState:
        if abs(complex(state.poles[self.coordinate]) - a) == 0.0:
            return state
        path = PolePath.segment_to(state.poles, self.coordinate, a)
        result = deform_path(
            state, path, tol=self.tol, record_trace=False, tolerances=self.tolerances
        )
        return result.state

    def state_at(self, a: complex) -> DeformationState:
        a = complex(a)
        state = self._advance(self._nearest(a), a)
        self._remember(a, state)
        return state

    def u1(self, a: complex) -> complex:
        return compute_u1(self.state_at(a))

    def gradient(self, a: complex) -> complex:
        return complex(-self.state_at(a).connection.residue(self.coordinate)[0, 1])

    def gradient_entries(self, a: complex) -> List[complex]:
        c = self.state_at(a).connection
        return [complex(-c.residue(k)[0, 1]) for k in range(c.n)]

    def malgrange_coefficients(self, a: complex) -> List[np.ndarray]:
        c = to_malgrange(self.state_at(a))
        return [B for block in c.coeffs for B in block]

    def noise_floor(self) -> float:
        scale = max(float(np.max(np.abs(block))) for block in self.base.connection.coeffs)
        return 10.0 * self.tol * (1.0 + scale)

    def check_disc(self, center: complex, radius: float) -> None:
        for k, a in enumerate(self.base.poles):
            if k == self.coordinate:
                continue
            gap = abs(a - center) - radius
            if gap < self.tolerances.separation:
                raise PoleCollisionError(
                    f"pole collision: scan disc around {center} meets pole {k} at {a}"
                )

    def ray(self, center: complex, angle: float, radii: Sequence[float]) -> List[complex]:
        direction = complex(math.cos(angle), math.sin(angle))
        state = self.state_at(center)
        values = []
        for r in radii:
            a = center + r * direction
            state = self._advance(state, a)
            self._remember(a, state)
            values.append(compute_u1(state))
        logger.debug("ray at angle %.4f done, |u1| at rim %.3e", angle, abs(values[-1]))
        return values


@dataclass
class PoleFit:
    levels: List[float]
    samples: List[complex]
    u1_moduli: List[float]
    slopes: List[float]
    max_slope: float

    def as_dict(self) -> dict:
        return {
            "levels": self.levels,
            "samples": self.samples,
            "u1_moduli": self.u1_moduli,
            "slopes": self.slopes,
            "max_slope": self.max_slope,
        }


@dataclass
class ThetaZero:
    coordinate: int
    location: complex
    residual: float
    gradient: List[complex]
    gradient_nonzero: bool
    multiplicity: int = 1
    iterations: int = 0
    pole_fit: Optional[PoleFit] = None

    @property
    def status(self) -> str:
        if self.gradient_nonzero:
            return "submanifold point"
        return "inconclusive (degenerate gradient)"

    def as_dict(self) -> dict:
        return {
            "coordinate": self.coordinate,
            "location": self.location,
            "residual": self.residual,
            "gradient": self.gradient,
            "gradient_nonzero": self.gradient_nonzero,
            "multiplicity": self.multiplicity,
            "iterations": self.iterations,
            "status": self.status,
            "pole_fit": None if self.pole_fit is None else self.pole_fit.as_dict(),
        }


@dataclass
class ScanSettings:
    rays: int = 64
    radial_samples: int = 6
    jobs: int = 1
    zero_tol: float = 1e-10
    max_iterations: int = 25
    gradient_floor: float = 1e-6
    degenerate_level: float = 1e-12
    max_phase_step: float = math.pi / 2
    dedupe_distance: float = 1e-6
    multiplicity_radius: float = 1e-3
    multiplicity_samples: int = 16


@dataclass
class ScanResult:
    center: complex
    radius: float
    count: int
    zeros: List[ThetaZero] = field(default_factory=list)
    grid: List[Tuple[complex, complex]] = field(default_factory=list)
    boundary_min: float = 0.0
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "center": self.center,
            "radius": self.radius,
            "count": self.count,
            "degenerate": self.degenerate,
            "boundary_min": self.boundary_min,
            "zeros": [z.as_dict() for z in self.zeros],
        }


def _local_multiplicity(tau: TauSlice, a: complex, settings: ScanSettings) -> Optional[int]:
    r = settings.multiplicity_radius * max(1.0, abs(a))
    n = settings.multiplicity_samples
    circle = np.array([tau.u1(a + r * cmath.exp(2j * math.pi * k / n)) for k in range(n)])
    if float(np.abs(circle).min()) < 10.0 * tau.noise_floor():
        return None
    try:
        winding = _winding_number(circle, settings.max_phase_step)
    except InconclusiveScanError:
        return None
    return winding if winding >= 1 else None


def _step_ratio_multiplicity(steps: Sequence[float]) -> int:
    if len(steps) < 2 or steps[-2] <= 0:
        return 1
    ratio = min(steps[-1] / steps[-2], 0.95)
    return max(1, int(round(1.0 / (1.0 - ratio))))


def refine_zero(
    tau: TauSlice, start: complex, settings: Optional[ScanSettings] = None
) -> ThetaZero:
    """Newton iteration a <- a - u1(a) / u1'(a) on the slice.

    The multiplicity is the winding number of u1 on a small circle around the
    converged point. When that circle is unusable (|u1| near the noise floor or an
    under-resolved phase) the step ratio is used instead: Newton converges linearly
    with ratio (m - 1)/m at a zero of order m.
    """
    settings = settings or ScanSettings()
    a = complex(start)
    steps: List[float] = []
    value = tau.u1(a)
    iterations = 0
    while abs(value) >= settings.zero_tol:
        if iterations >= settings.max_iterations:
            raise NonConvergenceError(
                f"Newton refinement from {start} stalled at |u1| = {abs(value):.3e} "
                f"after {iterations} iterations"
            )
        slope = tau.gradient(a)
        if slope == 0:
            raise NonConvergenceError(f"vanishing derivative at {a} with |u1| = {abs(value):.3e}")
        step = value / slope
        a -= step
        steps.append(abs(step))
        value = tau.u1(a)
        iterations += 1
        logger.debug("newton %d: a=%s |u1|=%.3e", iterations, a, abs(value))

    multiplicity = _local_multiplicity(tau, a, settings)
    if multiplicity is None:
        multiplicity = _step_ratio_multiplicity(steps)
    entries = tau.gradient_entries(a)
    gradient_nonzero = (
        max(abs(g) for g in entries) > settings.gradient_floor and multiplicity == 1
    )
    if not gradient_nonzero:
        logger.warning(
            "zero at %s has a degenerate position gradient (multiplicity %d)", a, multiplicity
        )
    return ThetaZero(
        coordinate=tau.coordinate,
        location=a,
        residual=abs(value),
        gradient=entries,
        gradient_nonzero=gradient_nonzero,
        multiplicity=multiplicity,
        iterations=iterations,
    )


def _winding_number(boundary: np.ndarray, max_phase_step: float) -> int:
    closed = np.append(boundary, boundary[0])
    phase = np.unwrap(np.angle(closed))
    steps = np.abs(np.diff(phase))
    if float(steps.max()) > max_phase_step:
        raise InconclusiveScanError(
            f"phase of u1 jumps by {float(steps.max()):.3f} between boundary samples; "
            "increase the number of rays"
        )
    return int(round((phase[-1] - phase[0]) / (2 * math.pi)))


def _grid_minima(values: np.ndarray, center_value: complex) -> List[Tuple[int, int]]:
    """Local minima of |u1| on the polar grid (ray, radius); (-1, -1) is the center."""
    moduli = np.abs(values)
    rays, radial = moduli.shape
    minima = []
    if abs(center_value) <= moduli[:, 0].min():
        minima.append((-1, -1))
    for k in range(rays):
        for j in range(radial):
            neighbours = [moduli[(k - 1) % rays, j], moduli[(k + 1) % rays, j]]
            neighbours.append(abs(center_value) if j == 0 else moduli[k, j - 1])
            if j + 1 < radial:
                neighbours.append(moduli[k, j + 1])
            if moduli[k, j] <= min(neighbours):
                minima.append((k, j))
    return minima


def theta_scan(
    tau: TauSlice,
    center: complex,
    radius: float,
    settings: Optional[ScanSettings] = None,
) -> ScanResult:
    """Count and locate zeros of u1 inside |a - center| < radius.

    Raises InconclusiveScanError when |u1| on the rim falls below ten times the
    slice noise floor or the rim phase is under-resolved.
    """
    settings = settings or ScanSettings()
    center = complex(center)
    if radius <= 0:
        raise ValueError("scan radius must be positive")
    tau.check_disc(center, radius)

    angles = [2 * math.pi * k / settings.rays for k in range(settings.rays)]
    radii = [radius * (j + 1) / settings.radial_samples for j in range(settings.radial_samples)]
    center_value = tau.u1(center)

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, settings.jobs)) as executor:
        rows = list(executor.map(lambda angle: tau.ray(center, angle, radii), angles))
    values = np.array(rows, dtype=complex)

    grid = [(center, center_value)]
    for angle, row in zip(angles, rows):
        direction = complex(math.cos(angle), math.sin(angle))
        grid.extend((center + r * direction, v) for r, v in zip(radii, row))

    if max(abs(v) for _, v in grid) < settings.degenerate_level:
        logger.warning(
            "u1 vanishes identically on the scan disc; monodromy is suspected reducible"
        )
        return ScanResult(center, radius, count=0, grid=grid, degenerate=True)

    boundary = values[:, -1]
    boundary_min = float(np.abs(boundary).min())
    if boundary_min < 10.0 * tau.noise_floor():
        raise InconclusiveScanError(
            f"|u1| reaches {boundary_min:.3e} on the scan boundary; adjust the radius"
        )
    count = _winding_number(boundary, settings.max_phase_step)
    logger.info("winding number of u1 around the disc: %d", count)

    zeros: List[ThetaZero] = []
    found = 0
    candidates = _grid_minima(values, center_value)
    candidates.sort(key=lambda kj: abs(center_value) if kj[0] < 0 else abs(values[kj]))
    for k, j in candidates:
        if found >= count:
            break
        if k < 0:
            seed = center
        else:
            seed = center + radii[j] * complex(math.cos(angles[k]), math.sin(angles[k]))
        try:
            zero = refine_zero(tau, seed, settings)
        except NonConvergenceError as e:
            logger.debug("seed %s rejected: %s", seed, e)
            continue
        if abs(zero.location - center) >= radius:
            continue
        if any(abs(zero.location - z.location) < settings.dedupe_distance for z in zeros):
            continue
        zeros.append(zero)
        found += zero.multiplicity
    if found != count:
        logger.warning("refined %d zero(s) but the winding number is %d", found, count)
    return ScanResult(
        center, radius, count=count, zeros=zeros, grid=grid, boundary_min=boundary_min
    )


def _sample_level(
    tau: TauSlice, zero: ThetaZero, direction: complex, level: float, reach: float
) -> complex:
    slope = max(abs(tau.gradient(zero.location)), 1e-300)

    def gap(s: float) -> float:
        return math.log(max(abs(tau.u1(zero.location + s * direction)), 1e-300)) - math.log(level)

    upper = min(2.0 * level / slope, reach)
    while gap(upper) < 0:
        if upper >= reach:
            raise SamplingError(f"|u1| stays below {level:.1e} within distance {reach} of the zero")
        upper = min(2.0 * upper, reach)
    lower = upper / 4.0
    while gap(lower) > 0:
        lower /= 2.0
        if lower < 1e-14:
            raise SamplingError(f"cannot bracket |u1| = {level:.1e} near the zero")
    s = brentq(gap, lower, upper, xtol=1e-3 * lower)
    return zero.location + s * direction


def pole_order_fit(
    tau: TauSlice,
    zero: ThetaZero,
    direction: complex = 1.0,
    levels: Sequence[float] = DEFAULT_LEVELS,
    reach: float = 0.5,
) -> PoleFit:
    """Least-squares slopes of log||B_ij|| against -log|u1| on approach to a zero."""
    if not zero.gradient_nonzero:
        raise ValueError("pole_order_fit needs a simple zero with nonzero gradient")
    direction = complex(direction) / abs(complex(direction))
    samples = [_sample_level(tau, zero, direction, level, reach) for level in levels]
    moduli = [abs(tau.u1(t)) for t in samples]
    norms = np.array(
        [[np.linalg.norm(B) for B in tau.malgrange_coefficients(t)] for t in samples]
    )
    x = -np.log(moduli)
    slopes = []
    for column in norms.T:
        if np.any(column == 0):
            slopes.append(0.0)
            continue
        slopes.append(float(np.polyfit(x, np.log(column), 1)[0]))
    fit = PoleFit(
        levels=list(levels),
        samples=samples,
        u1_moduli=moduli,
        slopes=slopes,
        max_slope=max(slopes),
    )
    logger.info("pole-order fit at %s: max slope %.3f", zero.location, fit.max_slope)
    return fit
