"""Artifact writers: report.json, report.txt and CSV tables."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from isomlab_utils.serialization import csv_rows, dumps
from isomonodromy.deformation import DeformationDiagnostics
from isomonodromy.theta import ScanResult

GRID_HEADER = ("re_a", "im_a", "re_u1", "im_u1", "abs_u1")


@dataclass
class Table:
    header: Sequence[str]
    rows: List[Sequence[float]] = field(default_factory=list)

    def render(self) -> str:
        return csv_rows(self.header, self.rows)


def grid_table(scan: ScanResult) -> Table:
    rows = [
        (a.real, a.imag, u.real, u.imag, abs(u))
        for a, u in ((complex(a), complex(u)) for a, u in scan.grid)
    ]
    return Table(GRID_HEADER, rows)


def trace_table(diagnostics: DeformationDiagnostics) -> Table:
    """One row per accepted solver step: s, pole positions, coefficient norms, u1."""
    if not diagnostics.trace:
        return Table(("s",))
    first = diagnostics.trace[0]
    header: List[str] = ["s"]
    for i in range(len(first.poles)):
        header += [f"re_a{i}", f"im_a{i}"]
    for i, norms in enumerate(first.norms):
        header += [f"norm_B{i}{j + 1}" for j in range(len(norms))]
    header += ["re_u1", "im_u1"]
    rows = []
    for row in diagnostics.trace:
        values: List[float] = [row.s]
        for a in row.poles:
            values += [float(np.real(a)), float(np.imag(a))]
        for norms in row.norms:
            values += list(norms)
        values += [row.u1.real, row.u1.imag]
        rows.append(values)
    return Table(header, rows)


def render_summary(title: str, lines: Iterable[Tuple[str, object]]) -> str:
    lines = list(lines)
    body = [title, "=" * len(title)]
    width = max((len(key) for key, _ in lines), default=0)
    for key, value in lines:
        body.append(f"{key.ljust(width)}  {value}")
    return "\n".join(body) + "\n"


def write_artifacts(
    out_dir,
    report: dict,
    summary: str,
    tables: Dict[str, Table] | None = None,
) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    path = out_dir / "report.json"
    path.write_bytes(dumps(report))
    written.append(path)
    path = out_dir / "report.txt"
    path.write_text(summary)
    written.append(path)
    for name, table in (tables or {}).items():
        path = out_dir / name
        path.write_text(table.render())
        written.append(path)
    return written
