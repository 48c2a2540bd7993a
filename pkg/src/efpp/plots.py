"""Static SVG plots of a results CSV, written by hand (no plotting library).

Each plot embeds its data as an XML comment.  Variance plots carry two
reference curves, ``c n`` and ``c n / log n``, each anchored so that it
passes exactly through the first data point.
"""
from __future__ import annotations

import math
import os
import warnings
from pathlib import Path

from .harness import ResultRow, read_rows

W, H = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 64, 16, 28, 44


class _Frame:
    def __init__(self, xs, ys):
        self.x0, self.x1 = _span(xs)
        self.y0, self.y1 = _span(ys)

    def px(self, x: float) -> float:
        return round(LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT), 3)

    def py(self, y: float) -> float:
        return round(H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM), 3)


def _span(vals) -> tuple[float, float]:
    vals = [v for v in vals if math.isfinite(v)]
    lo, hi = min(vals), max(vals)
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.08
    return lo - pad, hi + pad


def _svg(title: str, frame: _Frame, body: list[str], data_comment: str, xlabel: str, ylabel: str) -> str:
    ticks = []
    for i in range(5):
        x = frame.x0 + (frame.x1 - frame.x0) * i / 4
        y = frame.y0 + (frame.y1 - frame.y0) * i / 4
        ticks.append(f'<text x="{frame.px(x)}" y="{H - BOTTOM + 16}" font-size="10" '
                     f'text-anchor="middle">{x:.4g}</text>')
        ticks.append(f'<text x="{LEFT - 6}" y="{frame.py(y) + 3}" font-size="10" '
                     f'text-anchor="end">{y:.4g}</text>')
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f"<!-- data: {data_comment} -->",
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2}" y="16" font-size="13" text-anchor="middle">{title}</text>',
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
        *ticks,
        f'<text x="{W / 2}" y="{H - 8}" font-size="11" text-anchor="middle">{xlabel}</text>',
        f'<text x="14" y="{H / 2}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 14 {H / 2})">{ylabel}</text>',
        *body,
        "</svg>",
        "",
    ])


def _points(frame: _Frame, xs, ys, errs, cls: str) -> list[str]:
    out = []
    for x, y, e in zip(xs, ys, errs):
        if e is not None and math.isfinite(e) and e > 0:
            out.append(f'<line class="{cls}-err" x1="{frame.px(x)}" y1="{frame.py(y - e)}" '
                       f'x2="{frame.px(x)}" y2="{frame.py(y + e)}" stroke="black"/>')
        out.append(f'<circle class="{cls}" cx="{frame.px(x)}" cy="{frame.py(y)}" r="3" fill="black"/>')
    return out


def _polyline(frame: _Frame, xs, ys, cls: str, colour: str) -> str:
    pts = " ".join(f"{frame.px(x)},{frame.py(y)}" for x, y in zip(xs, ys))
    return f'<polyline class="{cls}" points="{pts}" fill="none" stroke="{colour}"/>'


def reference_curves(n0: float, v0: float, xs) -> dict[str, list[float]]:
    """``c n`` and ``c n / log n`` evaluated at ``xs``, each passing exactly
    through ``(n0, v0)``; the second only when every abscissa exceeds 1."""
    curves = {"linear": [v0 * (x / n0) for x in xs]}
    if n0 > 1 and all(x > 1 for x in xs):
        curves["n_over_log_n"] = [v0 * (x / n0) * (math.log(n0) / math.log(x)) for x in xs]
    return curves


def _dense(ns, k: int = 40) -> list[float]:
    lo, hi = ns[0], ns[-1]
    if hi == lo:
        return [lo]
    return sorted(set([lo + (hi - lo) * i / k for i in range(k + 1)] + list(ns)))


def _series(rows: list[ResultRow], stat: str):
    sel = sorted((r for r in rows if r.statistic == stat), key=lambda r: r.n)
    return [r.n for r in sel], [r.value for r in sel], [r.stderr for r in sel]


def variance_plot(rows: list[ResultRow], stat: str) -> str:
    ns, vs, es = _series(rows, stat)
    dense = _dense(ns)
    curves = reference_curves(ns[0], vs[0], dense)
    ys = vs + [v + (e or 0) for v, e in zip(vs, es) if e is not None and math.isfinite(e)]
    for c in curves.values():
        ys += c
    frame = _Frame(ns, ys)
    body = _points(frame, ns, vs, es, "data")
    colours = {"linear": "steelblue", "n_over_log_n": "darkorange"}
    for name, ys_c in curves.items():
        body.append(_polyline(frame, dense, ys_c, name, colours[name]))
    data = "; ".join(f"n={n!r} value={v!r} stderr={e!r}" for n, v, e in zip(ns, vs, es))
    return _svg(f"{stat} vs n", frame, body, data, "n", stat)


def series_plot(rows: list[ResultRow], stat: str) -> str:
    ns, vs, es = _series(rows, stat)
    ys = vs + [v + e for v, e in zip(vs, es) if e is not None and math.isfinite(e)]
    frame = _Frame(ns, ys)
    body = _points(frame, ns, vs, es, "data")
    if len(ns) > 1:
        body.append(_polyline(frame, ns, vs, "trend", "gray"))
    data = "; ".join(f"n={n!r} value={v!r} stderr={e!r}" for n, v, e in zip(ns, vs, es))
    return _svg(f"{stat} vs n", frame, body, data, "n", stat)


def tail_plot(rows: list[ResultRow], n: float) -> str:
    sel = [r for r in rows if r.statistic == "tail_quantile" and r.n == n]
    pts = sorted((r.value, float(r.tags.split("=", 1)[1])) for r in sel)
    xs = [p[0] for p in pts]
    ys = [math.log(p[1]) for p in pts]
    frame = _Frame(xs, ys)
    body = _points(frame, xs, ys, [None] * len(xs), "data")
    if len(xs) > 1:
        body.append(_polyline(frame, xs, ys, "survival", "gray"))
    data = "; ".join(f"x={x!r} log_survival={y!r}" for x, y in zip(xs, ys))
    return _svg(f"tail survival, n={n:g}", frame, body, data, "T''", "log P[T'' > x]")


def emit_plots(csv_path: str | os.PathLike, out_dir: str | os.PathLike) -> list[Path]:
    """Write every applicable plot for a results CSV; returns the files written."""
    rows = read_rows(csv_path)
    if not rows:
        warnings.warn(f"{csv_path}: no result rows, no plots written", stacklevel=2)
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    stats = sorted({r.statistic for r in rows})
    for stat in stats:
        if stat.startswith("var_") and not stat.startswith("var_over_n_"):
            svg = variance_plot(rows, stat)
        elif stat in ("influence_max", "influence_sum", "gradient_sum", "bit_derivative_sum",
                      "equality_rate", "animal_greedy_per_size"):
            svg = series_plot(rows, stat)
        else:
            continue
        path = out / f"{stat}.svg"
        path.write_text(svg)
        written.append(path)
    for n in sorted({r.n for r in rows if r.statistic == "tail_quantile"}):
        path = out / f"tail_survival_n{n:g}.svg"
        path.write_text(tail_plot(rows, n))
        written.append(path)
    return written
