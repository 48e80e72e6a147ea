"""Per-scale attention normalization and spatial heatmap rendering.

Scores are rescaled to [0, 1] within each scale, binned onto a grid by
patch-center coordinates, and written as binary graymaps: 0 marks cells
with no data, values map onto 1..255.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, GeometryError
from .models import AttentionRecord


@dataclass(frozen=True)
class GridGeometry:
    origin_x: float
    origin_y: float
    cell_size: float
    n_cols: int
    n_rows: int


@dataclass(frozen=True)
class Heatmap:
    scale_label: str
    values: np.ndarray  # (n_rows, n_cols); NaN = no data, else in [0, 1]
    geometry: GridGeometry


def normalize_per_scale(records: list[AttentionRecord]) -> list[AttentionRecord]:
    """Min-max rescale each scale's scores over the record set.

    A scale whose scores are all equal maps to 0.5 everywhere. The map is
    monotone, so within-scale ordering is preserved.
    """
    if not records:
        raise ContractError("normalize_per_scale needs at least one record")
    scores = np.asarray([r.scores for r in records])
    lo = scores.min(axis=0)
    hi = scores.max(axis=0)
    span = hi - lo
    flat = span == 0.0
    span[flat] = 1.0
    normalized = (scores - lo) / span
    normalized[:, flat] = 0.5
    return [
        AttentionRecord(r.patient_id, r.location_id, r.xy, tuple(row))
        for r, row in zip(records, normalized)
    ]


def aggregate_records(records: list[AttentionRecord]) -> list[AttentionRecord]:
    """Mean scores per (patient, location); bags may revisit a location."""
    groups: dict[tuple[str, int], list[AttentionRecord]] = {}
    for r in records:
        groups.setdefault((r.patient_id, r.location_id), []).append(r)
    out = []
    for (pid, loc), grp in sorted(groups.items()):
        mean = np.mean([g.scores for g in grp], axis=0)
        out.append(AttentionRecord(pid, loc, grp[0].xy, tuple(mean)))
    return out


def geometry_for(records: list[AttentionRecord], cell_size: float) -> GridGeometry:
    if not records:
        raise ContractError("geometry_for needs at least one record")
    xs = np.asarray([r.xy[0] for r in records])
    ys = np.asarray([r.xy[1] for r in records])
    origin_x = float(np.floor(xs.min() / cell_size) * cell_size)
    origin_y = float(np.floor(ys.min() / cell_size) * cell_size)
    n_cols = int(np.floor((xs.max() - origin_x) / cell_size)) + 1
    n_rows = int(np.floor((ys.max() - origin_y) / cell_size)) + 1
    return GridGeometry(origin_x, origin_y, cell_size, n_cols, n_rows)


def render_heatmaps(
    records: list[AttentionRecord],
    geometry: GridGeometry,
    scale_labels: list[str],
) -> list[Heatmap]:
    """One heatmap per scale; cell value is the mean score of its records."""
    n_scales = len(scale_labels)
    sums = np.zeros((n_scales, geometry.n_rows, geometry.n_cols))
    counts = np.zeros((geometry.n_rows, geometry.n_cols))
    for r in records:
        if len(r.scores) != n_scales:
            raise ContractError(
                f"record ({r.patient_id}, {r.location_id}) has {len(r.scores)} scores, "
                f"expected {n_scales}"
            )
        col = int(np.floor((r.xy[0] - geometry.origin_x) / geometry.cell_size))
        row = int(np.floor((r.xy[1] - geometry.origin_y) / geometry.cell_size))
        if not (0 <= col < geometry.n_cols and 0 <= row < geometry.n_rows):
            raise GeometryError(
                f"record ({r.patient_id}, {r.location_id}) at {r.xy} "
                f"falls outside the {geometry.n_cols}x{geometry.n_rows} grid"
            )
        counts[row, col] += 1
        for s in range(n_scales):
            sums[s, row, col] += r.scores[s]
    maps = []
    with np.errstate(invalid="ignore"):
        for s, label in enumerate(scale_labels):
            values = np.where(counts > 0, sums[s] / np.maximum(counts, 1), np.nan)
            maps.append(Heatmap(label, values, geometry))
    return maps


def heatmap_to_pgm(heatmap: Heatmap) -> bytes:
    """Binary graymap: NO-DATA cells are 0, data maps to 1..255."""
    v = heatmap.values
    pixels = np.zeros(v.shape, dtype=np.uint8)
    mask = ~np.isnan(v)
    pixels[mask] = (1.0 + np.floor(v[mask] * 254.0 + 0.5)).astype(np.uint8)
    header = f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode()
    return header + pixels.tobytes()


def write_heatmap(heatmap: Heatmap, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(heatmap_to_pgm(heatmap))
    return path


def write_records_csv(records: list[AttentionRecord], path: str | Path) -> Path:
    if not records:
        raise ContractError("no attention records to write")
    n_scales = len(records[0].scores)
    path = Path(path)
    lines = ["patient_id,location_id,x,y," + ",".join(f"a_{s}" for s in range(n_scales))]
    for r in records:
        lines.append(
            f"{r.patient_id},{r.location_id},{r.xy[0]!r},{r.xy[1]!r},"
            + ",".join(repr(a) for a in r.scores)
        )
    path.write_text("\n".join(lines) + "\n")
    return path
