"""Metrics CSV writing and parsing.

Files start with ``# key=value`` comment lines identifying the run (config
hash, seed, baseline), then a header row, one row per episode, and a closing
aggregate row labeled ``ALL`` holding the column means. Nothing in the file
depends on when it was written, so identical runs produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

from .baselines import EpisodeMetrics

COLUMNS = ("episode", "mean_age_ms", "mean_energy_j", "mean_cost",
           "drops_total", "feasible_fraction")
AGGREGATE_LABEL = "ALL"


def _fmt(value) -> str:
    if isinstance(value, bool):
        raise TypeError("no boolean metric columns")
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def write_metrics_csv(path: str | Path, rows: list[EpisodeMetrics],
                      meta: dict[str, str]) -> None:
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append(",".join(COLUMNS))
    if not rows:   # degenerate but legal: header-only file
        Path(path).write_text("\n".join(lines) + "\n")
        return
    sums = [0.0] * (len(COLUMNS) - 1)
    for m in rows:
        values = (m.mean_age_ms, m.mean_energy_j, m.mean_cost,
                  m.drops_total, m.feasible_fraction)
        lines.append(",".join([str(m.episode)] + [_fmt(v) for v in values]))
        for i, v in enumerate(values):
            sums[i] += v
    n = len(rows)
    lines.append(",".join([AGGREGATE_LABEL] + [_fmt(s / n) for s in sums]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path: str | Path) -> tuple[dict[str, str], list[dict]]:
    """Returns (meta, rows); numeric fields parsed, aggregate row included
    with episode == "ALL"."""
    meta: dict[str, str] = {}
    rows: list[dict] = []
    header: list[str] | None = None
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
            continue
        parts = line.split(",")
        if header is None:
            header = parts
            if tuple(header) != COLUMNS:
                raise ValueError(f"{path}:{ln}: unexpected header {header}")
            continue
        if len(parts) != len(COLUMNS):
            raise ValueError(f"{path}:{ln}: expected {len(COLUMNS)} fields, "
                             f"got {len(parts)}")
        row: dict = {"episode": parts[0] if parts[0] == AGGREGATE_LABEL
                     else int(parts[0])}
        for name, tok in zip(COLUMNS[1:], parts[1:]):
            row[name] = float(tok)
        rows.append(row)
    if header is None:
        raise ValueError(f"{path}: no header row")
    return meta, rows
