"""Text formats shared by the library and the CLI: floats, grids, curve tables."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1


class ValidationError(ValueError):
    """Input violates a documented contract (shape, range, file schema)."""


class ParseError(ValidationError):
    """Malformed input file."""


def fmt_float(x: float) -> str:
    """17 significant digits; infinities become the literal ``inf``."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)


def parse_float(text: str) -> float:
    t = text.strip()
    if t in ("inf", "+inf"):
        return math.inf
    if t == "-inf":
        return -math.inf
    return float(t)


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:count`` with inclusive endpoints, or a comma list."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            n = int(count)
            if n < 1:
                raise ValidationError(f"grid count must be >= 1, got {n}")
            grid = np.linspace(float(start), float(stop), n)
        else:
            grid = np.array([float(s) for s in text.split(",") if s.strip()])
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad grid {text!r}: {exc}") from None
    check_grid(grid)
    return grid


def check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError("epsilon grid must be a nonempty 1-D sequence")
    if np.any(grid < 0) or not np.all(np.isfinite(grid)):
        raise ValidationError("epsilon grid values must be finite and >= 0")
    if np.any(np.diff(grid) < 0):
        raise ValidationError("epsilon grid must be ascending")
    return grid


def dump_json(obj, indent: int = 2) -> str:
    """Deterministic JSON with 17-digit floats and ``"inf"`` sentinels."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, np.ndarray):
            o = o.tolist()
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            items = [pad + enc(v, level + 1) for v in o]
            return "[\n" + ",\n".join(items) + "\n" + end + "]"
        if o is None:
            return "null"
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            if not math.isfinite(o):
                return f'"{fmt_float(o)}"'
            return fmt_float(o)
        return json.dumps(str(o))

    return enc(obj, 0) + "\n"


@dataclass
class CurveTable:
    """Named columns of equal length; first column is usually ``epsilon``."""

    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        lines += [",".join(fmt_cell(v) for v in r) for r in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def to_svg(self, width: int = 480, height: int = 320, title: str = "") -> str:
        return render_svg(self.column(self.columns[0]),
                          {c: self.column(c) for c in self.columns[1:]},
                          width=width, height=height, title=title,
                          xlabel=self.columns[0])


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"]


def render_svg(x: Sequence[float], series: dict, width: int = 480, height: int = 320,
               title: str = "", xlabel: str = "epsilon") -> str:
    """Polyline plot of each series against ``x``; y axis fixed to [0, 1]."""
    x = np.asarray(x, dtype=float)
    left, right, top, bottom = 50, 130, 30, 40
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = float(x.min()), float(x.max())
    if x1 == x0:
        x1 = x0 + 1.0

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        v = min(1.0, max(0.0, v))
        return top + (1.0 - v) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(6):
        yv = k / 5
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.2f}" font-size="10" '
                   f'text-anchor="end">{yv:.1f}</text>')
    for xv in np.linspace(x0, x1, 5):
        out.append(f'<text x="{px(xv):.2f}" y="{top + ph + 14}" font-size="10" '
                   f'text-anchor="middle">{xv:.3g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 6}" font-size="11" '
               f'text-anchor="middle">{xlabel}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2}" y="18" font-size="12" '
                   f'text-anchor="middle">{title}</text>')
    for i, (name, y) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}"
                       for a, b in zip(x, np.asarray(y, dtype=float)) if math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 12 + 14 * i
        out.append(f'<line x1="{left + pw + 8}" y1="{ly}" x2="{left + pw + 24}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 28}" y="{ly + 4}" font-size="10">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
