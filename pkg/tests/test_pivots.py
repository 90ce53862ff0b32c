import csv
import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shellseg.pivots import (Box, ConsistencyGraph, build_consistency_graph, classify_pivots,
                             collapse_evidence, estimate_dsc, estimate_iou, face_pivots,
                             inner_outer_dsc_stats, max_flow_min_cut, neighbor_edges, sample_pivots,
                             shell_membership, write_graph_csv, write_partition_csv)
from shellseg.sphere import build_direction_grid, solid_angle_weights


def test_lattice_pivots():
    ps = sample_pivots(Box((0, 0, 0), (32, 32, 32)), "lattice", 8, seed=0, jitter=0.0)
    assert len(ps) == 64
    assert np.allclose(np.unique(ps.pivots[:, 0]), [4, 12, 20, 28])
    jit = sample_pivots(Box((0, 0, 0), (32, 32, 32)), "lattice", 8, seed=0, jitter=0.25)
    assert np.max(np.abs(jit.pivots - ps.pivots)) <= 2.0
    assert len(neighbor_edges(ps)) == 3 * 4 * 4 * 3
    assert face_pivots(ps).sum() == 64 - 8


def test_lattice_spacing_equal_to_roi_edge_gives_center():
    ps = sample_pivots(Box((2, 4, 6), (10, 12, 14)), "lattice", 8, seed=0, jitter=0.0)
    assert ps.pivots.tolist() == [[6.0, 8.0, 10.0]]


def test_random_pivots_are_seeded_and_inside():
    roi = Box((2, 3, 4), (20, 30, 40))
    a = sample_pivots(roi, "uniformRandom", count=500, seed=1)
    b = sample_pivots(roi, "uniformRandom", count=500, seed=1)
    assert np.array_equal(a.pivots, b.pivots) and roi.contains(a.pivots).all()
    edges = neighbor_edges(a)
    assert np.all(edges[:, 0] < edges[:, 1])


@pytest.mark.parametrize("kwargs", [dict(strategy="lattice", spacing=0), dict(strategy="uniformRandom"),
                                    dict(strategy="hex"), dict(strategy="lattice", jitter=0.5)])
def test_bad_sampling_arguments(kwargs):
    with pytest.raises(ValueError):
        sample_pivots(Box((0, 0, 0), (10, 10, 10)), **kwargs)
    with pytest.raises(ValueError):
        sample_pivots(Box((0, 0, 0), (10, 0, 10)))


def test_membership_constant_radius_is_a_ball():
    g = build_direction_grid(16, 16)
    pts = np.random.default_rng(0).uniform(-8, 8, (4000, 3))
    got = shell_membership(np.zeros(3), np.full(g.shape, 5.0), g, pts)
    assert np.array_equal(got, np.linalg.norm(pts, axis=1) <= 5.0)


def test_membership_matches_exact_star_shape():
    # the ellipsoid seen from its center: exact radius along any direction is analytic
    axes = np.array([12.0, 8.0, 6.0])
    g = build_direction_grid(96, 96)
    radii = 1.0 / np.sqrt(np.sum((g.dirs / axes) ** 2, axis=-1))
    pts = np.random.default_rng(1).uniform(-13, 13, (20000, 3))
    d = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    exact = np.linalg.norm(pts, axis=1) <= 1.0 / np.sqrt(np.sum((d / axes) ** 2, axis=1))
    for mode in ("bilinear", "nearest"):
        assert np.mean(shell_membership(np.zeros(3), radii, g, pts, mode) == exact) >= 0.99


def _ball(center, r, g):
    return (np.asarray(center, float), np.full(g.shape, float(r)))


def test_iou_identical_and_disjoint():
    g = build_direction_grid(12, 12)
    a = _ball((0, 0, 0), 5, g)
    assert estimate_iou(a, a, g, 2000, seed=3) == 1.0
    assert estimate_iou(a, _ball((20, 0, 0), 5, g), g, 2000) == 0.0
    assert estimate_dsc(a, a, g) == 1.0
    empty = (np.zeros(3), np.zeros(g.shape))
    assert estimate_iou(empty, empty, g) == 0.0 and estimate_dsc(empty, empty, g) == 0.0


@pytest.mark.parametrize("d", [2.0, 5.0, 8.0])
def test_iou_matches_lens_volume(d):
    g = build_direction_grid(8, 8)
    r, n = 5.0, 5000
    lens = math.pi * (4 * r + d) * (2 * r - d) ** 2 / 12.0
    iou = lens / (2 * 4.0 / 3.0 * math.pi * r ** 3 - lens)
    est = estimate_iou(_ball((0, 0, 0), r, g), _ball((d, 0, 0), r, g), g, n, seed=7)
    box = (2 * r + d) * (2 * r) ** 2
    union_hits = n * (2 * 4.0 / 3.0 * math.pi * r ** 3 - lens) / box
    se = math.sqrt(iou * (1 - iou) / union_hits)
    assert abs(est - iou) <= 3 * se


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 10), st.floats(1, 6), st.floats(1, 6), st.integers(0, 1000))
def test_iou_symmetric_and_bounded(d, ra, rb, seed):
    g = build_direction_grid(8, 6)
    a, b = _ball((0, 0, 0), ra, g), _ball((d, 1.0, 0), rb, g)
    v = estimate_iou(a, b, g, 500, seed)
    assert v == estimate_iou(b, a, g, 500, seed)
    assert 0.0 <= v <= 1.0


def test_cut_separates_two_cliques():
    edges, weights = [], []
    for grp in (range(0, 4), range(4, 8)):
        for i, j in itertools.combinations(grp, 2):
            edges.append((i, j)); weights.append(1.0)
    edges.append((3, 4)); weights.append(0.1)
    sinks = np.zeros(8, bool); sinks[7] = True
    value, side = max_flow_min_cut(8, edges, weights, 0, sinks)
    assert value == pytest.approx(0.1)
    assert side.tolist() == [True] * 4 + [False] * 4


def _cut_value(side, edges, weights, src_caps=None, snk_caps=None):
    v = sum(w for (i, j), w in zip(edges, weights) if side[i] != side[j])
    if src_caps is not None:
        v += sum(c for c, s in zip(src_caps, side) if not s)
        v += sum(c for c, s in zip(snk_caps, side) if s)
    return v


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 10), st.integers(0, 10 ** 6), st.booleans())
def test_cut_is_minimal_by_enumeration(n, seed, with_caps):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i, j in itertools.combinations(range(n), 2) if rng.random() < 0.5]
    weights = rng.random(len(edges)).tolist()
    sinks = np.zeros(n, bool); sinks[n - 1] = True
    if rng.random() < 0.5:
        sinks[n - 2] = True
    src_caps = snk_caps = None
    if with_caps:
        src_caps, snk_caps = rng.random(n) * (rng.random(n) < 0.4), rng.random(n) * (rng.random(n) < 0.4)
        src_caps[0] = 0.0
    value, side = max_flow_min_cut(n, edges, weights, 0, sinks, src_caps, snk_caps)
    best = math.inf
    free = [i for i in range(1, n) if not sinks[i]]
    for bits in itertools.product([False, True], repeat=len(free)):
        s = np.zeros(n, bool); s[0] = True
        s[free] = bits
        best = min(best, _cut_value(s, edges, weights, src_caps, snk_caps))
    assert value == pytest.approx(best, abs=1e-9)
    assert _cut_value(side, edges, weights, src_caps, snk_caps) == pytest.approx(best, abs=1e-9)
    assert side[0] and not side[sinks].any()

    G = nx.DiGraph()
    for (i, j), w in zip(edges, weights):
        for u, v in ((i, j), (j, i)):
            G.add_edge(u, v, capacity=G.get_edge_data(u, v, {"capacity": 0})["capacity"] + w)
    for s in np.flatnonzero(sinks):
        G.add_edge(int(s), "t", capacity=1e6)
    if with_caps:
        for i in range(n):
            if src_caps[i] > 0:
                G.add_edge(0, i, capacity=G.get_edge_data(0, i, {"capacity": 0})["capacity"] + src_caps[i])
            if snk_caps[i] > 0:
                if not sinks[i]:
                    cap = G.get_edge_data(i, "t", {"capacity": 0})["capacity"]
                    G.add_edge(i, "t", capacity=cap + snk_caps[i])
    G.add_nodes_from([0, "t"])
    assert nx.maximum_flow_value(G, 0, "t") == pytest.approx(value, abs=1e-9)


def _line_graph(weights):
    n = len(weights) + 1
    return ConsistencyGraph(n, np.array([(i, i + 1) for i in range(n - 1)]), np.asarray(weights, float))


def test_classify_small_cases():
    g = _line_graph([0.9, 0.8, 0.1, 0.9])
    faces = np.array([False, False, False, False, True])
    assert classify_pivots(g, faces).tolist() == [True, True, True, False, False]
    assert classify_pivots(_line_graph([]), np.zeros(1, bool)).tolist() == [True]
    thr = classify_pivots(g, faces, "threshold", 0.5)
    assert thr.tolist() == [True, True, False, True, True]     # node 3 sits exactly at 0.5
    # every pivot on a face: falls back to the threshold rule
    assert np.array_equal(classify_pivots(g, np.ones(5, bool)), thr)
    with pytest.raises(ValueError):
        classify_pivots(g, faces, "spectral")


def test_evidence_pulls_isolated_pivots():
    g = ConsistencyGraph(4, np.array([(0, 1)]), np.array([0.9]))
    faces = np.array([False, False, False, True])
    plain = classify_pivots(g, faces)
    assert plain.tolist() == [True, True, False, False]
    ev = classify_pivots(g, faces, evidence=[1, 1, 1, -1], evidence_weight=2.0)
    assert ev.tolist() == [True, True, True, False]
    neg = classify_pivots(g, faces, evidence=[1, -1, 0, -1], evidence_weight=2.0)
    assert neg.tolist() == [True, False, False, False]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_partition_is_relabeling_invariant(seed):
    rng = np.random.default_rng(seed)
    n = 9
    edges = np.array([(i, j) for i, j in itertools.combinations(range(n), 2) if rng.random() < 0.6])
    if len(edges) == 0:
        return
    g = ConsistencyGraph(n, edges, rng.random(len(edges)))
    faces = rng.random(n) < 0.3
    ev = rng.uniform(-1, 1, n)
    base = classify_pivots(g, faces, evidence=ev, evidence_weight=0.5)
    perm = rng.permutation(n)            # new index of old node i is perm[i]
    new_edges = np.sort(perm[edges], axis=1)
    new_faces, new_ev = np.empty_like(faces), np.empty_like(ev)
    new_faces[perm], new_ev[perm] = faces, ev
    moved = classify_pivots(ConsistencyGraph(n, new_edges, g.weights), new_faces, evidence=new_ev,
                            evidence_weight=0.5)
    assert np.array_equal(moved[perm], base)


def test_collapse_evidence():
    g = build_direction_grid(8, 8)
    radii = np.stack([np.full(g.shape, 3.0), np.zeros(g.shape), np.full(g.shape, 3.0)])
    radii[2, :4] = 0
    assert np.allclose(collapse_evidence(radii), [1.0, -1.0, 0.0])
    assert np.allclose(collapse_evidence(radii, solid_angle_weights(g)), [1.0, -1.0, 0.0])


def test_graph_build_is_thread_independent():
    g = build_direction_grid(8, 8)
    ps = sample_pivots(Box((0, 0, 0), (24, 24, 24)), "lattice", 8, seed=0)
    radii = np.random.default_rng(0).uniform(2, 9, (len(ps),) + g.shape)
    e = neighbor_edges(ps)
    a = build_consistency_graph(ps.pivots, radii, g, e, 300, seed=4, threads=1)
    b = build_consistency_graph(ps.pivots, radii, g, e, 300, seed=4, threads=3)
    assert np.array_equal(a.weights, b.weights)


def test_inner_outer_stats_categories():
    g = build_direction_grid(8, 8)
    pivots = np.array([[0.0, 0, 0], [4.0, 0, 0], [8.0, 0, 0]])
    radii = np.stack([np.full(g.shape, 5.0), np.full(g.shape, 5.0), np.full(g.shape, 1.0)])
    edges = np.array([(0, 1), (1, 2)])
    s = inner_outer_dsc_stats(pivots, radii, g, edges, [True, True, False], 4000, seed=0)
    assert s["n_inner_inner"] == 1 and s["n_inner_outer"] == 1
    assert s["inner_inner"] > s["inner_outer"]
    none = inner_outer_dsc_stats(pivots, radii, g, edges, [True, True, True])
    assert none["inner_inner"] is None and none["n_inner_outer"] == 0


def test_csv_outputs(tmp_path):
    g = _line_graph([0.25, 0.5])
    write_graph_csv(tmp_path / "g.csv", g)
    write_partition_csv(tmp_path / "p.csv", [True, False, True])
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert rows == [["i", "j", "iou"], ["0", "1", "0.25"], ["1", "2", "0.5"]]
    assert list(csv.reader(open(tmp_path / "p.csv")))[1:] == [["0", "1"], ["1", "0"], ["2", "1"]]
