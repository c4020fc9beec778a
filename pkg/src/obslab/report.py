"""Output artifacts: trajectory CSV, SVG error plot, run summary, margin and sweep reports.

Every artifact is a pure function of its inputs (no timestamps, fixed float
formatting), so identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from .margins import MarginReport

CSV_SCHEMA = "obslab-run-csv/1"
SWEEP_SCHEMA = "obslab-sweep-csv/1"


def fmt(v) -> str:
    """Round-trippable float text; ints and strings pass through."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def _comment_block(meta: dict) -> list[str]:
    return [f"# {k} = {fmt(v)}" for k, v in meta.items()]


def run_columns(with_eq: bool) -> list[str]:
    cols = ["observer", "t", "x_tilde_norm", "y_tilde_norm"]
    if with_eq:
        cols.append("eq_norm")
    cols += ["lambda_min_P", "lambda_max_P"]
    cols += [f"x{i}" for i in range(1, 7)] + [f"x_hat{i}" for i in range(1, 7)]
    return cols


def run_csv(records: dict, meta: dict) -> str:
    """Long-format trajectory table, one block of rows per observer."""
    with_eq = any(r.eq_norm is not None for r in records.values())
    out = io.StringIO()
    out.write(f"# schema = {CSV_SCHEMA}\n")
    for line in _comment_block(meta):
        out.write(line + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(run_columns(with_eq))
    for name, rec in records.items():
        for i in range(len(rec.t)):
            row = [name, fmt(rec.t[i]), fmt(rec.x_tilde_norm[i]), fmt(rec.y_tilde_norm[i])]
            if with_eq:
                row.append(fmt(rec.eq_norm[i]) if rec.eq_norm is not None else "")
            row += [fmt(rec.lambda_min_p[i]), fmt(rec.lambda_max_p[i])]
            row += [fmt(v) for v in rec.x[i]] + [fmt(v) for v in rec.x_hat[i]]
            w.writerow(row)
    return out.getvalue()


def read_run_csv(text: str):
    """Parse :func:`run_csv` output into ``(meta, {observer: {column: array}})``."""
    meta, rows = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].partition("=")
            meta[k.strip()] = v.strip()
        elif line:
            rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    data = {}
    for row in reader:
        data.setdefault(row[0], []).append(row[1:])
    tables = {}
    for name, body in data.items():
        cols = list(zip(*body))
        tables[name] = {
            h: np.array([float(v) if v else math.nan for v in col]) for h, col in zip(header[1:], cols)
        }
    return meta, tables


def summary_text(records: dict, meta: dict) -> str:
    lines = ["obslab run summary", ""]
    warnings = sorted({w for r in records.values() for w in r.warnings})
    for w in warnings:
        lines.append(f"WARNING {w}")
    if warnings:
        lines.append("")
    for name, rec in records.items():
        lines.append(f"[{name}]")
        lines.append(f"verdict = {rec.verdict}")
        lines.append(f"x_tilde_initial = {fmt(rec.x_tilde0)}")
        lines.append(f"x_tilde_final = {fmt(rec.final_error)}")
        lines.append(f"x_tilde_max_last_10pct = {fmt(rec.tail_max)}")
        lines.append(f"x_tilde_band_last_20pct = {fmt(rec.band)}")
        lines.append(f"diverged_at_s = {fmt(rec.diverged_at)}")
        lines.append(f"lambda_min_P_final = {fmt(rec.lambda_min_p[-1]) if len(rec.t) else 'nan'}")
        lines.append(f"P_asymmetry_max = {fmt(rec.p_asymmetry)}")
        if rec.pde_gap is not None:
            lines.append(f"pde_output_gap_max = {fmt(float(np.max(rec.pde_gap)))}")
        lines.append("")
    lines.append("[settings]")
    lines += [f"{k} = {fmt(v)}" for k, v in meta.items()]
    return "\n".join(lines) + "\n"


def margin_text(report: MarginReport, meta: dict | None = None) -> str:
    """Flat key = value block; notes follow as ``note = ...`` lines."""
    lines = ["obslab margin report", ""]
    d = report.as_dict()
    notes = d.pop("notes")
    lines += [f"{k} = {fmt(v)}" for k, v in d.items()]
    lines += [f"note = {n}" for n in notes]
    if meta:
        lines += ["", "[settings]"] + [f"{k} = {fmt(v)}" for k, v in meta.items()]
    return "\n".join(lines) + "\n"


def parse_margin_text(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if " = " in line and not line.startswith("note"):
            k, _, v = line.partition(" = ")
            out.setdefault(k.strip(), v.strip())
    return out


def sweep_csv(rows: list, thresholds: dict, meta: dict) -> str:
    out = io.StringIO()
    out.write(f"# schema = {SWEEP_SCHEMA}\n")
    for line in _comment_block(meta):
        out.write(line + "\n")
    for d, eps in sorted(thresholds.items()):
        out.write(f"# threshold D={fmt(d)} epsilon_min={fmt(eps)}\n")
    w = csv.writer(out, lineterminator="\n")
    cols = ["delay", "epsilon", "observer", "verdict", "tail_max", "final_error", "diverged_at"]
    w.writerow(cols)
    for r in rows:
        w.writerow([fmt(r[c]) for c in cols])
    return out.getvalue()


def threshold_text(thresholds: dict) -> str:
    lines = ["delay_s  smallest converged epsilon"]
    for d, eps in sorted(thresholds.items()):
        lines.append(f"{d:<8g} {'none' if eps is None else f'{eps:g}'}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- SVG

_W, _H = 720, 420
_L, _R, _T, _B = 70, 20, 30, 50
_COLORS = {"predictive": "#1f77b4", "standard": "#d62728", "eq_norm": "#2ca02c"}


def _nice_ticks(lo, hi, n=6):
    span = hi - lo
    if span <= 0:
        return [lo]
    step = 10 ** math.floor(math.log10(span / n))
    for m in (1, 2, 5, 10):
        if span / (step * m) <= n:
            step *= m
            break
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def _polyline(xs, ys, color, dash=None):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{extra} points="{pts}"/>'


def error_svg(records: dict, title: str = "estimation error", max_points: int = 2000) -> str:
    """Log-scale plot of |X_tilde(t)| per observer (and the error norm when present)."""
    series = []
    for name, rec in records.items():
        series.append((name, rec.t, rec.x_tilde_norm, None))
        if rec.eq_norm is not None:
            series.append((f"{name} eq_norm", rec.t, rec.eq_norm, "5,3"))
    t_max = max((float(s[1][-1]) for s in series if len(s[1])), default=1.0) or 1.0
    vals = np.concatenate([s[2][np.isfinite(s[2]) & (s[2] > 0)] for s in series] or [np.ones(1)])
    if vals.size == 0:
        vals = np.ones(1)
    lo = math.floor(math.log10(max(vals.min(), 1e-16)))
    hi = math.ceil(math.log10(vals.max()))
    if hi <= lo:
        hi = lo + 1
    pw, ph = _W - _L - _R, _H - _T - _B

    def sx(t):
        return _L + pw * t / t_max

    def sy(v):
        lv = math.log10(min(max(v, 10.0**lo), 10.0**hi))
        return _T + ph * (hi - lv) / (hi - lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for e in range(lo, hi + 1):
        y = sy(10.0**e)
        parts.append(f'<line x1="{_L}" y1="{y:.2f}" x2="{_L + pw}" y2="{y:.2f}" stroke="#dddddd"/>')
        parts.append(
            f'<text x="{_L - 6}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">1e{e}</text>'
        )
    for t in _nice_ticks(0.0, t_max):
        x = sx(t)
        parts.append(f'<line x1="{x:.2f}" y1="{_T + ph}" x2="{x:.2f}" y2="{_T + ph + 5}" stroke="black"/>')
        parts.append(
            f'<text x="{x:.2f}" y="{_T + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{t:g}</text>'
        )
    parts.append(
        f'<text x="{_L + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">t [s]</text>'
    )
    parts.append(
        f'<text x="16" y="{_T + ph / 2:.1f}" transform="rotate(-90 16 {_T + ph / 2:.1f})" '
        'text-anchor="middle" font-family="sans-serif" font-size="12">error norm</text>'
    )
    for k, (name, t, v, dash) in enumerate(series):
        color = _COLORS.get(name.split()[0], "#555555") if dash is None else _COLORS["eq_norm"]
        step = max(1, len(t) // max_points)
        sel = np.arange(0, len(t), step)
        parts.append(_polyline([sx(float(t[i])) for i in sel], [sy(float(v[i])) for i in sel], color, dash))
        ly = _T + 16 + 16 * k
        parts.append(f'<line x1="{_L + pw - 150}" y1="{ly}" x2="{_L + pw - 125}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_L + pw - 120}" y="{ly + 4}" font-family="sans-serif" font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
