"""SVG charts and text/CSV tables built from experiment histories.

Every renderer is a pure function of its inputs: coordinates are printed with
fixed precision and groups keep their insertion order, so identical inputs
give identical bytes.
"""

from __future__ import annotations

import colorsys
import csv
import io
import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .engine import ExperimentHistory
from .errors import ComparisonInvalidError, InvalidInputError, ShapeError
from .similarity import SimilarityMatrix

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)
LOW_COLOR = (0xF7, 0xFB, 0xFF)
HIGH_COLOR = (0x08, 0x30, 0x6B)

_SHARED_KEYS = ("client_count", "fraction", "dataset")


def _f(x: float) -> str:
    return f"{x:.2f}"


def color_for(index: int) -> str:
    if index < len(PALETTE):
        return PALETTE[index]
    # golden-angle hues keep extra colours distinct from each other
    hue = (index * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.85)
    return f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}"


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">'
    )
    bg = f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>'
    return "\n".join([head, bg, *body, "</svg>"]) + "\n"


def _text(x: float, y: float, content: str, **attrs) -> str:
    extra = "".join(f" {k.rstrip('_').replace('_', '-')}={quoteattr(str(v))}" for k, v in attrs.items())
    return f'<text x="{_f(x)}" y="{_f(y)}"{extra}>{escape(content)}</text>'


@dataclass
class ComparisonSet:
    """Named groups of histories, for example one group per strategy."""

    groups: dict[str, list[ExperimentHistory]] = field(default_factory=dict)

    def add(self, name: str, history: ExperimentHistory) -> None:
        self.groups.setdefault(name, []).append(history)

    def validate(self) -> None:
        if not self.groups:
            raise ComparisonInvalidError("comparison set is empty")
        reference = None
        for name, histories in self.groups.items():
            if not histories:
                raise ComparisonInvalidError(f"group {name!r} has no histories")
            for h in histories:
                shared = tuple(h.config.get(k) for k in _SHARED_KEYS)
                if reference is None:
                    reference = shared
                elif shared != reference:
                    diff = [
                        f"{k}={a!r} vs {b!r}"
                        for k, a, b in zip(_SHARED_KEYS, reference, shared)
                        if a != b
                    ]
                    raise ComparisonInvalidError(
                        f"group {name!r} does not match the rest: {', '.join(diff)}"
                    )

    @classmethod
    def by_strategy(cls, histories: Iterable[ExperimentHistory]) -> "ComparisonSet":
        out = cls()
        for h in histories:
            out.add(h.config["strategy"], h)
        return out


def accuracy_bands(histories: Sequence[ExperimentHistory]) -> list[tuple[int, float, float, float]]:
    """(round, mean, min, max) over the seeds that reached each round."""
    per_round: dict[int, list[float]] = {}
    for h in histories:
        for rec in h.rounds:
            if rec.test_accuracy is not None:
                per_round.setdefault(rec.round, []).append(rec.test_accuracy)
    return [
        (r, statistics.fmean(v), min(v), max(v))
        for r, v in sorted(per_round.items())
    ]


def render_accuracy_chart(comparison: ComparisonSet, title: str = "Test accuracy") -> str:
    comparison.validate()
    bands = {name: accuracy_bands(hs) for name, hs in comparison.groups.items()}
    if not any(bands.values()):
        raise ComparisonInvalidError("no accuracy data (energy-only runs?)")

    width, height = 640, 400
    left, right, top, bottom = 60, 150, 40, 50
    plot_w, plot_h = width - left - right, height - top - bottom
    rounds = [r for b in bands.values() for r, *_ in b]
    r_lo, r_hi = min(rounds), max(rounds)
    r_span = max(r_hi - r_lo, 1)

    def px(r):
        return left + (r - r_lo) / r_span * plot_w

    def py(acc):
        return top + (1.0 - acc) * plot_h

    body = [_text(width / 2, 24, title, text_anchor="middle", font_size=16)]
    # axes and ticks
    body.append(
        f'<line class="axis" x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" '
        f'y2="{top + plot_h}" stroke="#000000"/>'
    )
    body.append(
        f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="#000000"/>'
    )
    for i in range(6):
        acc = i / 5
        body.append(_text(left - 8, py(acc) + 4, f"{acc:.1f}", text_anchor="end", font_size=11))
    for r in sorted({r_lo, r_hi, *range(r_lo, r_hi + 1, max(1, r_span // 5))}):
        body.append(_text(px(r), top + plot_h + 16, str(r), text_anchor="middle", font_size=11))
    body.append(_text(left + plot_w / 2, height - 12, "round", text_anchor="middle", font_size=13))
    body.append(
        _text(16, top + plot_h / 2, "test accuracy", text_anchor="middle", font_size=13,
              transform=f"rotate(-90 16 {_f(top + plot_h / 2)})")
    )

    for i, (name, band) in enumerate(bands.items()):
        color = color_for(i)
        if band:
            upper = [f"{_f(px(r))},{_f(py(hi))}" for r, _, _, hi in band]
            lower = [f"{_f(px(r))},{_f(py(lo))}" for r, _, lo, _ in reversed(band)]
            body.append(
                f'<polygon class="band" data-series={quoteattr(name)} points="{" ".join(upper + lower)}" '
                f'fill="{color}" fill-opacity="0.2" stroke="none"/>'
            )
            line = " ".join(f"{_f(px(r))},{_f(py(mean))}" for r, mean, _, _ in band)
            body.append(
                f'<polyline class="series" data-series={quoteattr(name)} points="{line}" '
                f'fill="none" stroke="{color}" stroke-width="2"/>'
            )
        ly = top + 10 + 20 * i
        lx = left + plot_w + 15
        body.append(f'<rect class="legend" x="{lx}" y="{ly - 8}" width="14" height="10" fill="{color}"/>')
        body.append(_text(lx + 20, ly + 1, name, font_size=12))
    return _svg(width, height, body)


def _lerp_color(t: float) -> str:
    rgb = [round(lo + (hi - lo) * t) for lo, hi in zip(LOW_COLOR, HIGH_COLOR)]
    return "#" + "".join(f"{c:02x}" for c in rgb)


def render_similarity_heatmap(matrix, title: str = "Similarity matrix") -> str:
    scores = matrix.scores if isinstance(matrix, SimilarityMatrix) else np.asarray(matrix, dtype=float)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1] or scores.shape[0] == 0:
        raise ShapeError(f"expected a non-empty square matrix, got shape {scores.shape}")
    k = scores.shape[0]
    off = scores[~np.eye(k, dtype=bool)] if k > 1 else scores.ravel()
    lo, hi = float(off.min()), float(off.max())
    span = hi - lo

    cell = max(6, min(24, 480 // k))
    left, top = 50, 50
    grid = cell * k
    width, height = left + grid + 90, top + grid + 60
    body = [_text(left + grid / 2, 24, title, text_anchor="middle", font_size=16)]
    for i in range(k):
        for j in range(k):
            t = 0.0 if span == 0 else min(1.0, max(0.0, (scores[i, j] - lo) / span))
            body.append(
                f'<rect class="cell" x="{left + j * cell}" y="{top + i * cell}" width="{cell}" '
                f'height="{cell}" fill="{_lerp_color(t)}"><title>{i},{j}: {scores[i, j]:.4f}</title></rect>'
            )
    step = max(1, k // 10)
    for c in range(0, k, step):
        mid = c * cell + cell / 2
        body.append(_text(left + mid, top - 6, str(c), text_anchor="middle", font_size=10))
        body.append(_text(left - 6, top + mid + 3, str(c), text_anchor="end", font_size=10))
    # colour scale
    sx = left + grid + 20
    for n in range(10):
        t = 1.0 - n / 9
        body.append(
            f'<rect class="scale" x="{sx}" y="{top + n * grid / 10:.2f}" width="14" '
            f'height="{grid / 10:.2f}" fill="{_lerp_color(t)}"/>'
        )
    body.append(_text(sx + 18, top + 10, f"{hi:.4f}", font_size=10))
    body.append(_text(sx + 18, top + grid, f"{lo:.4f}", font_size=10))
    body.append(
        _text(left, top + grid + 30, f"scale: min={lo:.4f} max={hi:.4f}", class_="annotation", font_size=12)
    )
    return _svg(width, height, body)


def render_embedding_scatter(points, labels, anchor_pair=None, title: str = "Client embedding") -> str:
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ShapeError(f"points must be (K, 2), got {points.shape}")
    if len(points) != len(labels):
        raise ShapeError(f"{len(points)} points but {len(labels)} labels")
    width, height = 480, 440
    left, top, size = 60, 40, 340
    if len(points):
        lo, hi = points.min(axis=0), points.max(axis=0)
    else:
        lo, hi = np.zeros(2), np.ones(2)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    pad = 10

    def pos(p):
        x = left + pad + (p[0] - lo[0]) / span[0] * (size - 2 * pad)
        y = top + size - pad - (p[1] - lo[1]) / span[1] * (size - 2 * pad)
        return x, y

    cluster_ids = sorted(set(labels.tolist()))
    colors = {c: color_for(i) for i, c in enumerate(cluster_ids)}
    body = [_text(left + size / 2, 24, title, text_anchor="middle", font_size=16)]
    body.append(
        f'<rect class="frame" x="{left}" y="{top}" width="{size}" height="{size}" '
        'fill="none" stroke="#000000"/>'
    )
    alpha_lbl = beta_lbl = "similarity to anchor"
    if anchor_pair is not None:
        alpha_lbl = f"similarity to client {anchor_pair[0]} (alpha)"
        beta_lbl = f"similarity to client {anchor_pair[1]} (beta)"
    body.append(_text(left + size / 2, top + size + 30, alpha_lbl, text_anchor="middle", font_size=12))
    body.append(
        _text(18, top + size / 2, beta_lbl, text_anchor="middle", font_size=12,
              transform=f"rotate(-90 18 {_f(top + size / 2)})")
    )
    for client, (p, lab) in enumerate(zip(points, labels.tolist())):
        x, y = pos(p)
        body.append(
            f'<circle class="marker" data-client="{client}" data-cluster="{escape(str(lab))}" '
            f'cx="{_f(x)}" cy="{_f(y)}" r="5" fill="{colors[lab]}"/>'
        )
    if anchor_pair is not None:
        for name, client in zip(("alpha", "beta"), anchor_pair):
            if 0 <= client < len(points):
                x, y = pos(points[client])
                body.append(
                    _text(x + 7, y - 7, f"{name} ({client})", class_="anchor", font_size=11)
                )
    for i, c in enumerate(cluster_ids):
        ly = top + 10 + 18 * i
        body.append(f'<rect class="legend" x="{left + size + 12}" y="{ly - 8}" width="10" height="10" fill="{colors[c]}"/>')
        body.append(_text(left + size + 26, ly + 1, f"cluster {c}", font_size=11))
    return _svg(width, height, body)


# -- rounds table -------------------------------------------------------------


def model_label(config: Mapping) -> str:
    hidden = config.get("hidden_dims") or []
    return "MLP-" + "x".join(str(h) for h in hidden) if hidden else "linear"


def _row_key(h: ExperimentHistory) -> tuple[str, str, str]:
    c = h.config
    return (str(c.get("dataset")), model_label(c), f"{int(round(100 * c['low_power_fraction']))}%")


@dataclass
class RoundsTable:
    columns: list[str]
    rows: list[tuple[tuple[str, str, str], list[float | None]]]

    HEADER = ("dataset", "model", "low_power")

    def cell(self, row_key, column):
        for key, cells in self.rows:
            if key == tuple(row_key):
                return cells[self.columns.index(column)]
        raise KeyError(row_key)


def rounds_table(
    histories: Iterable[ExperimentHistory],
    column: Callable[[ExperimentHistory], str] = lambda h: h.config["strategy"],
) -> RoundsTable:
    grouped: dict[tuple, dict[str, list[int]]] = {}
    columns: list[str] = []
    for h in histories:
        col = column(h)
        if col not in columns:
            columns.append(col)
        grouped.setdefault(_row_key(h), {}).setdefault(col, []).append(h.rounds_lasted)
    if not grouped:
        raise InvalidInputError("rounds table needs at least one history")
    rows = [
        (key, [statistics.median(cells[c]) if c in cells else None for c in columns])
        for key, cells in grouped.items()
    ]
    return RoundsTable(columns, rows)


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return str(int(v)) if v.is_integer() else f"{v:g}"


def render_rounds_table(table: RoundsTable) -> str:
    header = [*RoundsTable.HEADER, *table.columns]
    body = [[*key, *(_fmt_cell(v) or "-" for v in cells)] for key, cells in table.rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    line = lambda r: "  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip()
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), rule, *map(line, body)]) + "\n"


def rounds_table_csv(table: RoundsTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*RoundsTable.HEADER, *table.columns])
    for key, cells in table.rows:
        writer.writerow([*key, *(_fmt_cell(v) for v in cells)])
    return buf.getvalue()


def parse_rounds_csv(text: str) -> RoundsTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header[:3]) != RoundsTable.HEADER:
        raise InvalidInputError(f"rounds CSV header must start with {RoundsTable.HEADER}")
    rows = []
    for rec in reader:
        if len(rec) != len(header):
            raise InvalidInputError(f"row {rec} has {len(rec)} fields, expected {len(header)}")
        cells = [float(v) if v else None for v in rec[3:]]
        rows.append((tuple(rec[:3]), cells))
    return RoundsTable(list(header[3:]), rows)
