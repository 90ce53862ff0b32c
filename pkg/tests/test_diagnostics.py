import csv

import numpy as np
import pytest

from shellseg.diagnostics import (convergence_traces, pivot_walk, svg_line_chart, walk_pivots, write_traces_csv,
                                  write_walk_csv)
from shellseg.predictor import OraclePredictor
from shellseg.shell import IterationPolicy
from shellseg.sphere import build_direction_grid


def test_walk_pivots():
    w = walk_pivots([1, 2, 3], [0, 0, 2], 4.0, 3)
    assert np.allclose(w, [[1, 2, 3], [1, 2, 7], [1, 2, 11]])
    with pytest.raises(ValueError):
        walk_pivots([0, 0, 0], [0, 0, 0], 1, 3)
    with pytest.raises(ValueError):
        walk_pivots([0, 0, 0], [1, 0, 0], 1, 1)


def test_traces_have_fixed_length(small_sphere):
    spec, vol, _, field, _ = small_sphere
    g = build_direction_grid(8, 8)
    pivots = spec.origin + np.array([[0.0, 0, 0], [2.0, 1.0, 0.0]])
    policy = IterationPolicy(consistency_samples=1)
    traces, radii = convergence_traces(OraclePredictor(field), vol, pivots, g, policy, 15)
    assert traces.shape == (2, 15) and radii.shape == (2, 8, 8)
    assert np.all(np.diff(traces, axis=1) <= 1e-12)


def test_walk_crossing_has_lowest_dsc(small_sphere):
    spec, vol, _, field, _ = small_sphere
    g = build_direction_grid(16, 16)
    walk = walk_pivots(spec.origin, [1, 0, 0], 4.0, 6)   # 0, 4, 8 inside; 12 on the rim; 16, 20 outside
    radii, pair = pivot_walk(OraclePredictor(field), vol, g, IterationPolicy(consistency_samples=0), walk, 3000)
    assert pair.shape == (5,)
    assert np.all(radii[-1] == 0) and np.isnan(pair[-1])
    finite = np.flatnonzero(np.isfinite(pair))
    assert pair[0] > pair[finite[-1]]


def test_csv_and_svg_writers(tmp_path):
    write_traces_csv(tmp_path / "t.csv", np.array([[2.0, 1.0], [1.0, 0.5]]))
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows == [["iteration", "mean", "pivot0", "pivot1"], ["1", "1.5", "2.0", "1.0"],
                    ["2", "0.75", "1.0", "0.5"]]
    walk = walk_pivots([0, 0, 0], [1, 0, 0], 2, 3)
    write_walk_csv(tmp_path / "w.csv", walk, [0.9, np.nan], [True, False, False])
    rows = list(csv.reader(open(tmp_path / "w.csv")))
    assert rows[2][7:] == ["nan", "0", "0"]
    svg_line_chart(tmp_path / "c.svg", [("a", [0, 1, 2], [1.0, np.nan, 0.5])], "t<1>", "x", "y")
    text = (tmp_path / "c.svg").read_text()
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
    assert "t&lt;1&gt;" in text and text.count("<polyline") == 1
