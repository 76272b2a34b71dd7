"""Per-iteration run metrics and their CSV/JSON serialization.

Row columns are fixed: ``iter, loss, secs_per_iter, fwd_count, bwd_count``
followed by one ``gamma.<tensor>`` column per constrained tensor. Float cells
are written with ``repr`` so that a run is byte-reproducible (wall-clock
seconds are the one intentionally nondeterministic column). The end-of-run
summary (accuracies, constraint audit, final radii) lives in a separate JSON
file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..errors import ConfigError, DomainError

__all__ = ["FIXED_COLUMNS", "RunRecord", "emit_metrics", "read_record_json", "write_summary"]

FIXED_COLUMNS = ("iter", "loss", "secs_per_iter", "fwd_count", "bwd_count")


def _cell(value) -> str:
    if isinstance(value, bool):
        raise DomainError("boolean cells are not part of the record format")
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


@dataclass
class RunRecord:
    gamma_names: tuple[str, ...] = ()
    rows: list[tuple] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def columns(self) -> tuple[str, ...]:
        return FIXED_COLUMNS + tuple(f"gamma.{name}" for name in self.gamma_names)

    def add_row(
        self,
        iteration: int,
        loss: float,
        secs_per_iter: float,
        fwd_count: int,
        bwd_count: int,
        gammas: dict[str, float] | None = None,
    ) -> None:
        gammas = gammas or {}
        missing = [n for n in self.gamma_names if n not in gammas]
        if missing:
            raise DomainError(f"row missing constraint values for {missing}")
        row = (int(iteration), float(loss), float(secs_per_iter), int(fwd_count),
               int(bwd_count)) + tuple(float(gammas[n]) for n in self.gamma_names)
        self.rows.append(row)

    # column accessors used by analysis and the acceptance suite

    def column(self, name: str) -> list:
        cols = self.columns()
        if name not in cols:
            raise DomainError(f"unknown column {name!r}; have {cols}")
        idx = cols.index(name)
        return [row[idx] for row in self.rows]

    def gamma_matrix(self) -> list[list[float]]:
        """Rows of per-tensor constraint values, one list per iteration."""
        k = len(FIXED_COLUMNS)
        return [list(row[k:]) for row in self.rows]


def _to_csv_text(record: RunRecord) -> str:
    lines = [",".join(record.columns())]
    for row in record.rows:
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _to_json_obj(record: RunRecord) -> dict:
    return {
        "columns": list(record.columns()),
        "rows": [list(row) for row in record.rows],
        "summary": dict(record.summary),
    }


def emit_metrics(record: RunRecord, fmt: str, path) -> None:
    """Write the iteration rows as CSV or JSON (same keys either way)."""
    if fmt == "csv":
        payload = _to_csv_text(record)
    elif fmt == "json":
        payload = json.dumps(_to_json_obj(record), indent=2, sort_keys=True) + "\n"
    else:
        raise ConfigError(f"unknown metrics format {fmt!r}; choose 'csv' or 'json'")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(payload)


def read_record_json(path) -> RunRecord:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    columns = obj["columns"]
    if tuple(columns[: len(FIXED_COLUMNS)]) != FIXED_COLUMNS:
        raise DomainError(f"unexpected leading columns: {columns}")
    gamma_names = tuple(c[len("gamma."):] for c in columns[len(FIXED_COLUMNS):])
    record = RunRecord(gamma_names=gamma_names, summary=dict(obj.get("summary", {})))
    for row in obj["rows"]:
        fixed = row[: len(FIXED_COLUMNS)]
        gammas = dict(zip(gamma_names, row[len(FIXED_COLUMNS):]))
        record.add_row(fixed[0], fixed[1], fixed[2], fixed[3], fixed[4], gammas)
    return record


def write_summary(record: RunRecord, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dict(record.summary), f, indent=2, sort_keys=True)
        f.write("\n")
