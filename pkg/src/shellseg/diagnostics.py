"""Convergence traces, the pivot-walk experiment and a tiny SVG line-chart writer."""

import csv
from dataclasses import replace
from xml.sax.saxutils import escape

import numpy as np

from .pivots import estimate_dsc, pair_seed
from .shell import run_shells


def convergence_traces(predictor, vol, pivots, grid, policy, iterations=200, threads=1):
    """Mean |O| of every shell at each of ``iterations`` rounds, shape (B, iterations).

    Shells keep iterating after they converge so every trace has the same length.
    """
    if len(pivots) == 0:
        raise ValueError("no pivots to trace")
    long_policy = replace(policy, max_rounds=int(iterations))
    res = run_shells(predictor, vol, pivots, grid, long_policy, threads=threads,
                     stop_on_convergence=False)
    return np.asarray(res.traces, dtype=np.float64), res.radii


def walk_pivots(start, direction, step, count):
    """``count`` pivots from ``start`` along ``direction`` (normalized), ``step`` voxels apart."""
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("walk direction must be nonzero")
    if count < 2:
        raise ValueError("a pivot walk needs at least two pivots")
    return np.asarray(start, dtype=np.float64) + np.outer(np.arange(count) * float(step), d / norm)


def pivot_walk(predictor, vol, grid, policy, pivots, sample_count=4000, seed=0, threads=1):
    """Run shells at consecutive walk pivots and measure the DSC of each neighboring pair.

    Returns ``(radii, pair_dsc)`` where ``pair_dsc[k]`` compares pivots k and k+1.
    A pair involving a fully collapsed shell has no volume to compare and gets NaN.
    """
    pivots = np.asarray(pivots, dtype=np.float64)
    res = run_shells(predictor, vol, pivots, grid, policy, threads=threads)
    empty = ~np.any(res.radii.reshape(len(pivots), -1) > 0, axis=1)
    pair = [np.nan if empty[k] or empty[k + 1] else
            estimate_dsc((pivots[k], res.radii[k]), (pivots[k + 1], res.radii[k + 1]), grid,
                         sample_count, pair_seed(seed, k, k + 1))
            for k in range(len(pivots) - 1)]
    return res.radii, np.asarray(pair, dtype=np.float64)


def write_traces_csv(path, traces):
    """One row per iteration: the mean over pivots, then every pivot's own value."""
    traces = np.asarray(traces)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean"] + [f"pivot{i}" for i in range(len(traces))])
        for t in range(traces.shape[1]):
            col = traces[:, t]
            w.writerow([t + 1, repr(float(col.mean()))] + [repr(float(v)) for v in col])


def write_walk_csv(path, pivots, pair_dsc, inside=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["pair", "x0", "y0", "z0", "x1", "y1", "z1", "dsc"]
        if inside is not None:
            head += ["inside0", "inside1"]
        w.writerow(head)
        for k, d in enumerate(np.asarray(pair_dsc).tolist()):
            row = [k] + [repr(float(c)) for c in pivots[k]] + [repr(float(c)) for c in pivots[k + 1]]
            row.append(repr(float(d)))
            if inside is not None:
                row += [int(inside[k]), int(inside[k + 1])]
            w.writerow(row)


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def svg_line_chart(path, series, title="", xlabel="", ylabel="", width=640, height=400):
    """Write polylines with axes to ``path``.

    ``series`` is a list of ``(label, xs, ys)``. Non-finite points are skipped.
    """
    left, right, top, bottom = 64, 16, 32, 48
    xs_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series]) if series else np.zeros(1)
    ys_all = np.concatenate([np.asarray(s[2], dtype=float) for s in series]) if series else np.zeros(1)
    xs_all, ys_all = xs_all[np.isfinite(xs_all)], ys_all[np.isfinite(ys_all)]
    x0, x1 = (float(xs_all.min()), float(xs_all.max())) if xs_all.size else (0.0, 1.0)
    y0, y1 = (min(0.0, float(ys_all.min())), float(ys_all.max())) if ys_all.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.1f}" y="{top + ph + 16}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{left - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
        out.append(f'<line x1="{left}" y1="{sy(t):.1f}" x2="{left + pw}" y2="{sy(t):.1f}" '
                   f'stroke="#ddd"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for k, (label, xs, ys) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        pts = [(float(x), float(y)) for x, y in zip(xs, ys) if np.isfinite(x) and np.isfinite(y)]
        if pts:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{left + pw - 4}" y="{top + 14 * (k + 1)}" text-anchor="end" '
                   f'fill="{color}">{escape(str(label))}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
