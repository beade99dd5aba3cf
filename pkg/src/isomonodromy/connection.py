"""
Rational 2x2 connections with Fuchsian and rank-1 irregular poles.

Key components:
- RationalConnection: poles a_i, Poincare ranks r_i and the coefficient matrices
  B_ij of B(z) = sum_i sum_j B_ij / (z - a_i)^j, in one of two normalizations
  (trivial: sum_i B_i1 = 0; auxiliary: sum_i B_i1 = K = diag(-1, 1));
- validate_connection: non-throwing invariant report (pole separation, residue sum,
  rank profile, non-resonance);
- local_formal_data: eigenvalue pair of the leading coefficient at a pole;
- evaluate_matrix / infinity_coefficients: B(z) at a point and its expansion at z = inf.

Connections are immutable: coefficient arrays are stored read-only and every
transformation returns a new instance.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from isomonodromy.errors import ConnectionSpecError, PoleProximityError

NORMALIZATIONS = ("trivial", "auxiliary")

K = np.diag([-1.0 + 0.0j, 1.0 + 0.0j])
K.setflags(write=False)
IDENTITY = np.eye(2, dtype=complex)
IDENTITY.setflags(write=False)


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds shared by validation and the numerical operations."""

    separation: float = 1e-6
    eigen_gap: float = 1e-6
    evaluation_guard: float = 1e-10
    residue_sum: float = 1e-10


DEFAULT_TOLERANCES = Tolerances()


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=complex)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class RationalConnection:
    """
    Connection form B(z) dz of a 2x2 system dy/dz = B(z) y.

    - poles: shape (n,), distinct complex pole positions a_1..a_n
    - ranks: Poincare ranks, each 0 (Fuchsian) or 1
    - coeffs: one array per pole of shape (r_i + 1, 2, 2); coeffs[i][j - 1] is B_ij
    - normalization: "trivial" (residue sum 0) or "auxiliary" (residue sum K)
    """

    poles: np.ndarray
    ranks: Tuple[int, ...]
    coeffs: Tuple[np.ndarray, ...]
    normalization: str = "trivial"

    def __post_init__(self):
        poles = np.atleast_1d(np.asarray(self.poles, dtype=complex))
        if poles.ndim != 1 or poles.size == 0:
            raise ConnectionSpecError("poles must be a non-empty list of complex numbers")
        ranks = tuple(int(r) for r in self.ranks)
        if len(ranks) != poles.size:
            raise ConnectionSpecError(
                f"got {len(ranks)} ranks for {poles.size} poles; one rank per pole is required"
            )
        for i, r in enumerate(ranks):
            if r not in (0, 1):
                raise ConnectionSpecError(
                    f"pole {i} has Poincare rank {r}; only ranks 0 and 1 are supported"
                )
        if len(self.coeffs) != poles.size:
            raise ConnectionSpecError(
                f"got coefficient lists for {len(self.coeffs)} poles, expected {poles.size}"
            )
        coeffs = []
        for i, (r, block) in enumerate(zip(ranks, self.coeffs)):
            block = np.asarray(block, dtype=complex)
            if block.shape != (r + 1, 2, 2):
                raise ConnectionSpecError(
                    f"pole {i} (rank {r}) needs {r + 1} matrices of shape 2x2, "
                    f"got shape {block.shape}"
                )
            coeffs.append(_frozen(block))
        if self.normalization not in NORMALIZATIONS:
            raise ConnectionSpecError(
                f"unknown normalization {self.normalization!r}; expected one of {NORMALIZATIONS}"
            )
        object.__setattr__(self, "poles", _frozen(poles))
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "coeffs", tuple(coeffs))

    @property
    def n(self) -> int:
        return int(self.poles.size)

    @property
    def m(self) -> int:
        """Number of rank-1 poles."""
        return sum(1 for r in self.ranks if r == 1)

    @property
    def infinity_residue_target(self) -> np.ndarray:
        return K if self.normalization == "auxiliary" else np.zeros((2, 2), dtype=complex)

    @property
    def residues(self) -> np.ndarray:
        """Stacked B_i1, shape (n, 2, 2)."""
        return np.stack([block[0] for block in self.coeffs])

    def residue(self, i: int) -> np.ndarray:
        return self.coeffs[i][0]

    def leading(self, i: int) -> np.ndarray:
        """Leading coefficient B_{i, r_i + 1}."""
        return self.coeffs[i][-1]

    def residue_sum(self) -> np.ndarray:
        return self.residues.sum(axis=0)

    def replace(
        self,
        poles: Optional[Sequence[complex]] = None,
        coeffs: Optional[Sequence[np.ndarray]] = None,
        normalization: Optional[str] = None,
        ranks: Optional[Sequence[int]] = None,
    ) -> "RationalConnection":
        return RationalConnection(
            poles=self.poles if poles is None else poles,
            ranks=self.ranks if ranks is None else tuple(ranks),
            coeffs=self.coeffs if coeffs is None else tuple(coeffs),
            normalization=self.normalization if normalization is None else normalization,
        )

    def conjugate(self, D: np.ndarray) -> "RationalConnection":
        """Constant gauge y -> D y: every B_ij becomes D B_ij D^-1."""
        D = np.asarray(D, dtype=complex)
        D_inv = np.linalg.inv(D)
        return self.replace(coeffs=[D @ block @ D_inv for block in self.coeffs])

    def relabel(self, permutation: Sequence[int]) -> "RationalConnection":
        permutation = list(permutation)
        if sorted(permutation) != list(range(self.n)):
            raise ConnectionSpecError(f"{permutation} is not a permutation of range({self.n})")
        return RationalConnection(
            poles=self.poles[permutation],
            ranks=tuple(self.ranks[i] for i in permutation),
            coeffs=tuple(self.coeffs[i] for i in permutation),
            normalization=self.normalization,
        )


def balance_residues(c: RationalConnection, index: Optional[int] = None) -> RationalConnection:
    """Absorb the residue-sum defect into one pole so that sum_i B_i1 equals the target.

    The defect of a hand-built or transformed connection is rounding-sized; the
    adjusted residue is chosen so that the stored sum is exact.
    """
    index = c.n - 1 if index is None else index
    others = [c.residue(i) for i in range(c.n) if i != index]
    partial = np.sum(others, axis=0) if others else np.zeros((2, 2), dtype=complex)
    coeffs = [np.array(block) for block in c.coeffs]
    coeffs[index][0] = c.infinity_residue_target - partial
    return c.replace(coeffs=coeffs)


def profile(c: RationalConnection) -> Tuple[int, int]:
    """(m, n): number of rank-1 poles and number of poles."""
    return c.m, c.n


def min_pole_distance(poles: np.ndarray) -> float:
    poles = np.asarray(poles, dtype=complex)
    if poles.size < 2:
        return float("inf")
    diff = np.abs(poles[:, None] - poles[None, :])
    diff[np.diag_indices(poles.size)] = np.inf
    return float(diff.min())


@dataclass
class Finding:
    name: str
    passed: bool
    residual: float
    message: str = ""


@dataclass
class ValidationReport:
    findings: List[Finding] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.findings)

    def failures(self) -> List[Finding]:
        return [f for f in self.findings if not f.passed]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "findings": [
                {"name": f.name, "passed": f.passed, "residual": f.residual, "message": f.message}
                for f in self.findings
            ],
        }


@dataclass(frozen=True)
class LocalFormalData:
    index: int
    rank: int
    leading_eigenvalues: Tuple[complex, complex]
    gap: float
    resonant: bool


def _sorted_pair(values: np.ndarray) -> Tuple[complex, complex]:
    a, b = sorted((complex(v) for v in values), key=lambda v: (v.real, v.imag))
    return a, b


def local_formal_data(
    c: RationalConnection, i: int, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> LocalFormalData:
    """Eigenvalue pair of the leading coefficient at pole i.

    A rank-1 pole is resonant when its two leading eigenvalues are closer than the
    gap tolerance. A Fuchsian pole is resonant when its residue eigenvalues differ
    by a nonzero integer (within the same tolerance).
    """
    if not 0 <= i < c.n:
        raise IndexError(f"pole index {i} out of range for {c.n} poles")
    lam1, lam2 = _sorted_pair(np.linalg.eigvals(c.leading(i)))
    gap = abs(lam1 - lam2)
    if c.ranks[i] == 1:
        resonant = gap < tolerances.eigen_gap
    else:
        diff = lam1 - lam2
        nearest = round(diff.real)
        resonant = nearest != 0 and abs(diff - nearest) < tolerances.eigen_gap
    return LocalFormalData(
        index=i, rank=c.ranks[i], leading_eigenvalues=(lam1, lam2), gap=gap, resonant=resonant
    )


def validate_connection(
    c: RationalConnection, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> ValidationReport:
    """Check every connection invariant; failures become report entries, never exceptions."""
    report = ValidationReport()

    finite = all(np.all(np.isfinite(block)) for block in c.coeffs) and np.all(np.isfinite(c.poles))
    report.findings.append(
        Finding("finite coefficients", bool(finite), 0.0 if finite else float("inf"))
    )

    separation = min_pole_distance(c.poles)
    ok = separation >= tolerances.separation
    report.findings.append(
        Finding(
            "pole separation",
            ok,
            separation,
            "" if ok else f"pole collision: minimum pairwise distance {separation:.3e}",
        )
    )

    defect = c.residue_sum() - c.infinity_residue_target
    residual = float(np.max(np.abs(defect))) if finite else float("inf")
    scale = max(1.0, max(float(np.max(np.abs(block[0]))) for block in c.coeffs)) if finite else 1.0
    ok = residual <= tolerances.residue_sum * scale
    report.findings.append(
        Finding(
            "residue sum",
            ok,
            residual,
            "" if ok else f"sum of residues differs from the {c.normalization} target",
        )
    )

    ok = c.m <= 2
    report.findings.append(
        Finding(
            "rank profile", ok, float(c.m), "" if ok else f"{c.m} rank-1 poles; at most 2 allowed"
        )
    )

    for i in range(c.n):
        if c.ranks[i] != 1 or not finite:
            continue
        data = local_formal_data(c, i, tolerances)
        report.findings.append(
            Finding(
                f"non-resonance at pole {i}",
                not data.resonant,
                data.gap,
                "" if not data.resonant else "leading eigenvalues coincide",
            )
        )
    return report


def evaluate_matrix(
    c: RationalConnection, z: complex, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> np.ndarray:
    """B(z) = sum_i sum_j B_ij / (z - a_i)^j."""
    d = complex(z) - c.poles
    nearest = float(np.min(np.abs(d)))
    if nearest <= tolerances.evaluation_guard:
        raise PoleProximityError(f"z = {z} lies within {nearest:.3e} of a pole")
    value = np.zeros((2, 2), dtype=complex)
    for di, block in zip(d, c.coeffs):
        inv = 1.0 / di
        power = inv
        for B in block:
            value += B * power
            power = power * inv
    return value


def trace_function(c: RationalConnection, z: complex) -> complex:
    """tr B(z); the logarithmic derivative of det Y."""
    d = complex(z) - c.poles
    total = 0j
    for di, block in zip(d, c.coeffs):
        for j, B in enumerate(block, start=1):
            total += np.trace(B) / di**j
    return total


def infinity_coefficients(c: RationalConnection) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First three coefficients of B(z) = A1/z + A2/z^2 + A3/z^3 + ... at z = inf."""
    A1 = np.zeros((2, 2), dtype=complex)
    A2 = np.zeros((2, 2), dtype=complex)
    A3 = np.zeros((2, 2), dtype=complex)
    for a, block in zip(c.poles, c.coeffs):
        A1 += block[0]
        A2 += block[0] * a
        A3 += block[0] * a**2
        if block.shape[0] == 2:
            A2 += block[1]
            A3 += 2.0 * a * block[1]
    return A1, A2, A3
