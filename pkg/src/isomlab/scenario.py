"""
Scenario files: the JSON configuration of one isomlab run.

A scenario names a command, a connection (inline, by file, or as a seeded fixture
request), the command parameters and an output directory. Unknown fields are
rejected; every tolerance must be positive.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

from isomlab_utils.serialization import decode_complex, loads

COMMANDS = ("validate", "monodromy", "deform", "theta-scan", "pole-fit", "make-aux")
FIXTURE_KINDS = (
    "fuchsian-n4",
    "irregular-m1n4",
    "irregular-m2n2",
    "theta-fuchsian-n4",
    "theta-m1n4",
    "theta-m2n2",
)

ComplexPair = Tuple[float, float]


class ScenarioError(Exception):
    """The scenario file is unreadable or fails schema validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FixtureRequest(_Strict):
    kind: Literal[
        "fuchsian-n4",
        "irregular-m1n4",
        "irregular-m2n2",
        "theta-fuchsian-n4",
        "theta-m1n4",
        "theta-m2n2",
    ]
    seed: Optional[int] = None


class ToleranceConfig(_Strict):
    integration: PositiveFloat = 1e-10
    separation: PositiveFloat = 1e-6
    eigen_gap: PositiveFloat = 1e-6
    evaluation_guard: PositiveFloat = 1e-10
    residue_sum: PositiveFloat = 1e-10
    apparent: PositiveFloat = 1e-6
    irreducibility: PositiveFloat = 1e-6


class PathConfig(_Strict):
    """Waypoints per moving pole index; shorter lists hold their last value.

    With `relative` set, waypoints are offsets from the starting pole position.
    """

    moves: Dict[int, List[ComplexPair]]
    relative: bool = False
    monodromy_check: bool = True
    ceiling: PositiveFloat = 1e8

    @field_validator("moves")
    @classmethod
    def _non_empty(cls, moves):
        if not moves or not any(moves.values()):
            raise ValueError("a deformation path needs at least one waypoint")
        return moves


class SyntheticConfig(_Strict):
    """Closed-form slice: u1(a) = (a - a0)^order, recovered coefficient M / u1^exponent."""

    a0: ComplexPair
    order: PositiveInt = 1
    exponent: PositiveInt = 2
    matrix: List[List[ComplexPair]] = [[(1.0, 0.0), (0.5, 0.0)], [(0.0, 0.0), (1.0, 0.0)]]


class ScanConfig(_Strict):
    coordinate: int = Field(0, ge=0)
    center: Optional[ComplexPair] = None
    offset: ComplexPair = (0.05, 0.0)
    radius: PositiveFloat = 0.1
    rays: PositiveInt = 64
    radial_samples: PositiveInt = 6
    synthetic: Optional[SyntheticConfig] = None


class FitConfig(_Strict):
    levels: List[PositiveFloat] = [1e-2, 1e-3, 1e-4, 1e-5]
    direction: ComplexPair = (1.0, 0.0)
    reach: PositiveFloat = 0.5
    slope_bound: PositiveFloat = 2.1

    @field_validator("levels")
    @classmethod
    def _enough_levels(cls, levels):
        if len(levels) < 3:
            raise ValueError("a slope fit needs at least three levels")
        return levels


class Scenario(_Strict):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal["1"] = Field(alias="schema")
    command: Literal["validate", "monodromy", "deform", "theta-scan", "pole-fit", "make-aux"]
    connection: Optional[Dict[str, Any]] = None
    connection_file: Optional[str] = None
    fixture: Optional[FixtureRequest] = None
    output_dir: str = "out"
    seed: Optional[int] = None
    jobs: PositiveInt = 1
    tolerances: ToleranceConfig = ToleranceConfig()
    base_point: Optional[ComplexPair] = None
    u2_gauge: ComplexPair = (0.0, 0.0)
    f0: Optional[ComplexPair] = None
    check_monodromy: bool = False
    path: Optional[PathConfig] = None
    scan: Optional[ScanConfig] = None
    fit: FitConfig = FitConfig()

    @model_validator(mode="after")
    def _check_sources(self):
        synthetic = self.scan is not None and self.scan.synthetic is not None
        sources = [self.connection, self.connection_file, self.fixture]
        given = sum(source is not None for source in sources)
        if given > 1:
            raise ValueError("give exactly one of connection, connection_file, fixture")
        if given == 0 and not synthetic:
            raise ValueError("a connection, connection_file or fixture is required")
        if self.fixture is not None and self.fixture.seed is None and self.seed is None:
            raise ValueError("fixture requests need a seed (fixture.seed or seed)")
        if self.command == "deform" and self.path is None:
            raise ValueError("the deform command needs a path")
        if self.command in ("theta-scan", "pole-fit") and self.scan is None:
            raise ValueError(f"the {self.command} command needs a scan section")
        return self

    @property
    def fixture_seed(self) -> Optional[int]:
        if self.fixture is None:
            return None
        return self.fixture.seed if self.fixture.seed is not None else self.seed


def as_complex(pair: Optional[ComplexPair]) -> Optional[complex]:
    return None if pair is None else decode_complex(list(pair))


def _format_errors(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return "; ".join(lines)


def parse_scenario(document: Any) -> Scenario:
    try:
        return Scenario.model_validate(document)
    except ValidationError as e:
        raise ScenarioError(f"invalid scenario: {_format_errors(e)}") from e


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        document = loads(path.read_bytes())
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from e
    except ValueError as e:
        raise ScenarioError(f"scenario {path} is not valid JSON: {e}") from e
    return parse_scenario(document)


def apply_overrides(
    scenario: Scenario,
    output_dir: Optional[str] = None,
    jobs: Optional[int] = None,
    seed: Optional[int] = None,
) -> Scenario:
    """Command-line flags take precedence over the scenario file."""
    update: Dict[str, Any] = {}
    if output_dir is not None:
        update["output_dir"] = output_dir
    if jobs is not None:
        update["jobs"] = jobs
    if seed is not None:
        update["seed"] = seed
        if scenario.fixture is not None:
            update["fixture"] = scenario.fixture.model_copy(update={"seed": seed})
    return scenario.model_copy(update=update)
