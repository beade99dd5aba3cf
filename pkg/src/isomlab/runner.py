"""
Scenario execution: maps each command onto the library operations and persists
the results.

Exit status contract:
- 0: success;
- 1: malformed configuration (raised as ScenarioError before anything runs);
- 2: validation failure (failed invariant report, wrong normalization, malformed
  connection data);
- 3: numerical failure (every other library error, such as non-convergence, pole
  collision or an inconclusive scan, and a deformation stopped at the blow-up ceiling).
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from isomlab.fixtures import generate_fixture
from isomlab.report_io import Table, grid_table, render_summary, trace_table, write_artifacts
from isomlab.scenario import Scenario, ScenarioError, as_complex
from isomlab_utils.file_util import resolve_path
from isomlab_utils.logging_config import get_logger
from isomlab_utils.serialization import decode_matrix
from isomonodromy.connection import (
    IDENTITY,
    RationalConnection,
    Tolerances,
    local_formal_data,
    profile,
    validate_connection,
)
from isomonodromy.connection_io import (
    connection_from_dict,
    connection_to_dict,
    dump_connection,
    load_connection,
)
from isomonodromy.continuation import (
    apparent_infinity_check,
    irreducibility_check,
    monodromy_data,
)
from isomonodromy.deformation import (
    DeformationState,
    PolePath,
    apparent_obstruction,
    deform_path,
)
from isomonodromy.errors import ConnectionSpecError, IsomonodromyError, NormalizationError
from isomonodromy.tau import (
    E12,
    compute_u1,
    make_auxiliary,
    natural_gauge_parameter,
    splitting_bound_check,
    state_for_gauge,
    to_malgrange,
)
from isomonodromy.theta import (
    DeformationSlice,
    ScanResult,
    ScanSettings,
    SyntheticSlice,
    TauSlice,
    pole_order_fit,
    theta_scan,
)

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

MONODROMY_DRIFT_LIMIT = 1e-6
ROUND_TRIP_LIMIT = 1e-10


@dataclass
class CommandOutput:
    report: dict
    summary: List[Tuple[str, object]]
    tables: Dict[str, Table] = field(default_factory=dict)
    passed: bool = True
    numerical_failure: bool = False


@dataclass
class RunOutcome:
    exit_code: int
    report: dict
    artifacts: List[Path]


@dataclass
class RunContext:
    scenario: Scenario
    base_dir: Path
    connection: Optional[RationalConnection]

    @property
    def tol(self) -> float:
        return self.scenario.tolerances.integration

    @property
    def tolerances(self) -> Tolerances:
        t = self.scenario.tolerances
        return Tolerances(
            separation=t.separation,
            eigen_gap=t.eigen_gap,
            evaluation_guard=t.evaluation_guard,
            residue_sum=t.residue_sum,
        )

    @property
    def out_dir(self) -> Path:
        return resolve_path(self.scenario.output_dir, self.base_dir)

    def require_connection(self) -> RationalConnection:
        if self.connection is None:
            raise ScenarioError(f"the {self.scenario.command} command needs a connection")
        return self.connection


def resolve_connection(scenario: Scenario, base_dir: Path) -> Optional[RationalConnection]:
    if scenario.connection is not None:
        return connection_from_dict(scenario.connection)
    if scenario.connection_file is not None:
        path = resolve_path(scenario.connection_file, base_dir)
        if not path.is_file():
            raise ScenarioError(f"connection_file: {path} does not exist")
        return load_connection(path)
    if scenario.fixture is not None:
        return generate_fixture(scenario.fixture.kind, scenario.fixture_seed)
    return None


def _run_validate(ctx: RunContext) -> CommandOutput:
    c = ctx.require_connection()
    report = validate_connection(c, ctx.tolerances)
    m, n = profile(c)
    out = {"validation": report.as_dict(), "profile": {"m": m, "n": n}}
    out["local_formal_data"] = [
        {
            "index": data.index,
            "rank": data.rank,
            "leading_eigenvalues": data.leading_eigenvalues,
            "gap": data.gap,
            "resonant": data.resonant,
        }
        for data in (local_formal_data(c, i, ctx.tolerances) for i in range(c.n))
    ]
    passed = report.passed
    summary: List[Tuple[str, object]] = [
        (f.name, "pass" if f.passed else f"FAIL ({f.message})") for f in report.findings
    ]
    if ctx.scenario.check_monodromy and passed and c.n <= 2:
        # loop monodromy of a two-pole system always fixes a line
        out["irreducible"] = None
        summary.append(("irreducible monodromy", "n/a (two poles)"))
    elif ctx.scenario.check_monodromy and passed:
        irreducible = irreducibility_check(
            monodromy_data(c, as_complex(ctx.scenario.base_point), ctx.tol, ctx.scenario.jobs),
            ctx.scenario.tolerances.irreducibility,
        )
        out["irreducible"] = irreducible
        summary.append(("irreducible monodromy", irreducible))
        passed = passed and irreducible
    if c.normalization == "auxiliary" and passed:
        check = apparent_infinity_check(
            c, ctx.scenario.tolerances.apparent, ctx.tol, ctx.tolerances
        )
        out["apparent_infinity"] = {"apparent": check.apparent, "deviation": check.deviation}
        summary.append(("apparent infinity", f"{check.apparent} (deviation {check.deviation:.3e})"))
        passed = passed and check.apparent
    return CommandOutput(out, summary, passed=passed)


def _run_monodromy(ctx: RunContext) -> CommandOutput:
    c = ctx.require_connection()
    data = monodromy_data(
        c, as_complex(ctx.scenario.base_point), ctx.tol, ctx.scenario.jobs, ctx.tolerances
    )
    irreducible = irreducibility_check(data, ctx.scenario.tolerances.irreducibility)
    out = {"monodromy": data.as_dict(), "irreducible": irreducible}
    rows = []
    for i, (G, rho) in enumerate(zip(data.matrices, data.exponents)):
        tr, det = np.trace(G), np.linalg.det(G)
        rows.append(
            (i, tr.real, tr.imag, det.real, det.imag)
            + (rho[0].real, rho[0].imag, rho[1].real, rho[1].imag)
        )
    table = Table(
        ("pole", "re_tr", "im_tr", "re_det", "im_det", "re_rho1", "im_rho1", "re_rho2", "im_rho2"),
        rows,
    )
    summary: List[Tuple[str, object]] = [
        ("base point", data.base_point),
        ("irreducible", irreducible),
    ]
    summary += [(f"tr G_{i}", complex(np.trace(G))) for i, G in enumerate(data.matrices)]
    if c.normalization == "auxiliary":
        check = apparent_infinity_check(
            c, ctx.scenario.tolerances.apparent, ctx.tol, ctx.tolerances
        )
        out["apparent_infinity"] = {"apparent": check.apparent, "deviation": check.deviation}
        summary.append(("apparent infinity", check.apparent))
    return CommandOutput(out, summary, {"monodromy.csv": table})


def _run_deform(ctx: RunContext) -> CommandOutput:
    c = ctx.require_connection()
    cfg = ctx.scenario.path
    state0 = DeformationState.initial(c, as_complex(ctx.scenario.u2_gauge))
    moves = {int(k): [as_complex(p) for p in v] for k, v in cfg.moves.items()}
    for k in moves:
        if not 0 <= k < c.n:
            raise ScenarioError(f"path.moves: pole index {k} out of range for {c.n} poles")
    if cfg.relative:
        moves = {k: [c.poles[k] + p for p in v] for k, v in moves.items()}
    path = PolePath.from_moves(c.poles, moves)
    result = deform_path(
        state0,
        path,
        tol=ctx.tol,
        ceiling=cfg.ceiling,
        monodromy_check=cfg.monodromy_check,
        tolerances=ctx.tolerances,
    )
    d = result.diagnostics
    out = {
        "diagnostics": d.as_dict(),
        "final_connection": connection_to_dict(result.state.connection),
        "final_U1": result.state.U1,
        "final_U2": result.state.U2,
        "path_parameter": result.state.path_parameter,
    }
    if c.normalization == "auxiliary":
        out["final_u1"] = compute_u1(result.state)
        out["final_apparent_obstruction"] = apparent_obstruction(result.state)
    passed = True
    if d.monodromy_trace_drift is not None:
        passed = max(d.monodromy_trace_drift, d.monodromy_det_drift) < MONODROMY_DRIFT_LIMIT
    summary: List[Tuple[str, object]] = [
        ("path length", path.length()),
        ("accepted steps", d.accepted_steps),
        ("rejected segments", d.rejected_segments),
        ("residue-sum drift", f"{d.residue_sum_drift:.3e}"),
        ("max U1 residual", f"{d.max_u1_residual:.3e}"),
        ("blowup", d.blowup if not d.blowup else f"yes, at s = {d.blowup_parameter:.6f}"),
    ]
    if d.monodromy_trace_drift is not None:
        summary.append(("monodromy trace drift", f"{d.monodromy_trace_drift:.3e}"))
        summary.append(("monodromy det drift", f"{d.monodromy_det_drift:.3e}"))
    return CommandOutput(
        out, summary, {"trace.csv": trace_table(d)}, passed=passed, numerical_failure=d.blowup
    )


def _synthetic_slice(ctx: RunContext) -> SyntheticSlice:
    cfg = ctx.scenario.scan.synthetic
    a0 = as_complex(cfg.a0)
    M = decode_matrix(cfg.matrix)
    order, exponent = cfg.order, cfg.exponent
    return SyntheticSlice(
        lambda a: (a - a0) ** order,
        lambda a: order * (a - a0) ** (order - 1),
        coefficients=lambda a: [M / ((a - a0) ** order) ** exponent],
        coordinate=ctx.scenario.scan.coordinate,
    )


def _base_state(ctx: RunContext) -> DeformationState:
    c = ctx.require_connection()
    if c.normalization == "trivial":
        aux, gauge = make_auxiliary(c, as_complex(ctx.scenario.f0))
        return state_for_gauge(aux, gauge)
    return DeformationState.initial(c, as_complex(ctx.scenario.u2_gauge))


def _scan(ctx: RunContext) -> Tuple[TauSlice, ScanResult]:
    cfg = ctx.scenario.scan
    if cfg.synthetic is not None:
        tau: TauSlice = _synthetic_slice(ctx)
        default_center = as_complex(cfg.synthetic.a0) + as_complex(cfg.offset)
    else:
        base = _base_state(ctx)
        tau = DeformationSlice(base, cfg.coordinate, ctx.tol, ctx.tolerances)
        default_center = complex(base.poles[cfg.coordinate]) + as_complex(cfg.offset)
    center = as_complex(cfg.center) if cfg.center is not None else default_center
    settings = ScanSettings(
        rays=cfg.rays, radial_samples=cfg.radial_samples, jobs=ctx.scenario.jobs
    )
    return tau, theta_scan(tau, center, cfg.radius, settings)


def _scan_summary(scan: ScanResult) -> List[Tuple[str, object]]:
    summary: List[Tuple[str, object]] = [
        ("disc", f"center {scan.center}, radius {scan.radius}"),
        ("winding count", scan.count),
        ("boundary min |u1|", f"{scan.boundary_min:.3e}"),
    ]
    if scan.degenerate:
        summary.append(
            ("degenerate", "u1 vanishes on the whole disc (reducible monodromy suspected)")
        )
    for k, zero in enumerate(scan.zeros):
        summary.append((f"zero {k}", f"{zero.location} |u1|={zero.residual:.2e} {zero.status}"))
    return summary


def _run_theta_scan(ctx: RunContext) -> CommandOutput:
    _, scan = _scan(ctx)
    out = {"scan": scan.as_dict()}
    return CommandOutput(
        out, _scan_summary(scan), {"grid.csv": grid_table(scan)}, passed=not scan.degenerate
    )


def _run_pole_fit(ctx: RunContext) -> CommandOutput:
    tau, scan = _scan(ctx)
    fit_cfg = ctx.scenario.fit
    gated = None if ctx.connection is None else splitting_bound_check(ctx.connection)
    simple = [zero for zero in scan.zeros if zero.gradient_nonzero]
    for zero in simple:
        zero.pole_fit = pole_order_fit(
            tau, zero, as_complex(fit_cfg.direction), fit_cfg.levels, fit_cfg.reach
        )
    max_slope = max((zero.pole_fit.max_slope for zero in simple), default=None)
    within = max_slope is not None and max_slope <= fit_cfg.slope_bound
    out = {
        "scan": scan.as_dict(),
        "splitting_bound": gated,
        "max_slope": max_slope,
        "slope_bound": fit_cfg.slope_bound,
        "within_bound": within,
    }
    summary = _scan_summary(scan)
    summary.append(("splitting bound m+n<=5", "n/a (synthetic)" if gated is None else gated))
    summary.append(("max fitted slope", "none" if max_slope is None else f"{max_slope:.4f}"))
    passed = bool(simple) and (within or gated is False)
    if gated is False:
        summary.append(("note", "k >= 2 possible; slopes reported as unconditioned"))
    return CommandOutput(out, summary, {"grid.csv": grid_table(scan)}, passed=passed)


def _run_make_aux(ctx: RunContext) -> CommandOutput:
    c = ctx.require_connection()
    aux, gauge = make_auxiliary(c, as_complex(ctx.scenario.f0))
    state = state_for_gauge(aux, gauge)
    recovered = to_malgrange(state)
    D = IDENTITY + (gauge.f - natural_gauge_parameter(c)) * E12
    expected = c.conjugate(D)
    round_trip = max(
        float(np.max(np.abs(a - b))) for a, b in zip(recovered.coeffs, expected.coeffs)
    )
    u1_error = abs(compute_u1(state) - gauge.u1)
    check = apparent_infinity_check(
        aux, ctx.scenario.tolerances.apparent, ctx.tol, ctx.tolerances
    )
    out = {
        "auxiliary_connection": connection_to_dict(aux),
        "gauge": {"u1": gauge.u1, "f": gauge.f},
        "round_trip_error": round_trip,
        "u1_error": u1_error,
        "recovered_residue_sum": recovered.residue_sum(),
        "apparent_infinity": {"apparent": check.apparent, "deviation": check.deviation},
    }
    summary: List[Tuple[str, object]] = [
        ("u1", gauge.u1),
        ("f", gauge.f),
        ("round-trip error", f"{round_trip:.3e}"),
        ("apparent infinity", f"{check.apparent} (deviation {check.deviation:.3e})"),
    ]
    conditioning = max(
        np.linalg.norm(gauge.gamma1(a)) * np.linalg.norm(gauge.gamma1_inv(a)) for a in c.poles
    )
    passed = round_trip < ROUND_TRIP_LIMIT * max(1.0, conditioning) and check.apparent
    if ctx.scenario.check_monodromy:
        base = as_complex(ctx.scenario.base_point)
        before = monodromy_data(c, base, ctx.tol, ctx.scenario.jobs, ctx.tolerances)
        after = monodromy_data(aux, before.base_point, ctx.tol, ctx.scenario.jobs, ctx.tolerances)
        drift = float(np.max(np.abs(before.traces() - after.traces())))
        out["monodromy_trace_drift"] = drift
        summary.append(("monodromy trace drift", f"{drift:.3e}"))
        passed = passed and drift < MONODROMY_DRIFT_LIMIT
    dump_connection(aux, ctx.out_dir / "auxiliary.json")
    return CommandOutput(out, summary, passed=passed)


HANDLERS: Dict[str, Callable[[RunContext], CommandOutput]] = {
    "validate": _run_validate,
    "monodromy": _run_monodromy,
    "deform": _run_deform,
    "theta-scan": _run_theta_scan,
    "pole-fit": _run_pole_fit,
    "make-aux": _run_make_aux,
}


def _header(scenario: Scenario, connection: Optional[RationalConnection]) -> dict:
    return {
        "schema": "1",
        "command": scenario.command,
        "seed": scenario.fixture_seed if scenario.fixture is not None else scenario.seed,
        "tolerances": scenario.tolerances.model_dump(),
        "connection": None if connection is None else connection_to_dict(connection),
    }


def run_scenario(scenario: Scenario, base_dir=None) -> RunOutcome:
    """Execute one scenario and write its artifacts; returns the exit status."""
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    out_dir = resolve_path(scenario.output_dir, base_dir)
    connection = None
    try:
        connection = resolve_connection(scenario, base_dir)
        ctx = RunContext(scenario, base_dir, connection)
        output = HANDLERS[scenario.command](ctx)
        if output.numerical_failure:
            exit_code = EXIT_NUMERICAL
        else:
            exit_code = EXIT_OK if output.passed else EXIT_VALIDATION
        report = _header(scenario, connection)
        report.update(output.report)
        report["status"] = "ok" if exit_code == EXIT_OK else "failed"
        summary = render_summary(
            f"isomlab {scenario.command}", output.summary + [("status", report["status"])]
        )
        tables = output.tables
    except ScenarioError:
        raise
    except (NormalizationError, ConnectionSpecError) as e:
        exit_code, report, summary, tables = _failure(scenario, connection, e, EXIT_VALIDATION)
    except IsomonodromyError as e:
        exit_code, report, summary, tables = _failure(scenario, connection, e, EXIT_NUMERICAL)
    artifacts = write_artifacts(out_dir, report, summary, tables)
    logger.info(f"{scenario.command}: exit {exit_code}, artifacts in {out_dir}")
    return RunOutcome(exit_code, report, artifacts)


def _failure(scenario: Scenario, connection, error: Exception, exit_code: int):
    logger.error(f"{scenario.command} failed: {type(error).__name__}: {error}")
    report = _header(scenario, connection)
    report["status"] = "error"
    report["error"] = {"type": type(error).__name__, "message": str(error)}
    summary = render_summary(
        f"isomlab {scenario.command}",
        [
            ("status", "error"),
            ("error", f"{type(error).__name__}: {error}"),
            ("exit code", exit_code),
        ],
    )
    return exit_code, report, summary, {}
