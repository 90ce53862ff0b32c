"""Pivot sampling, shell overlap estimates and inner/outer pivot classification.

Neighboring pivots whose shells overlap strongly are probably on the same side
of the boundary. The consistency graph weights each neighbor edge by the Monte
Carlo IOU of the two shells, and a seeded minimum cut separates the pivots
grown from inside the object from those attached to the ROI faces.
"""

import csv
import logging
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .parallel import map_chunks
from .volume import mask_array

log = logging.getLogger(__name__)

_LATTICE_NEIGHBORS = np.array([(1, 0, 0), (0, 1, 0), (0, 0, 1)])


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("box corners must be 3-vectors")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def extent(self):
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self):
        return float(np.prod(np.maximum(self.extent, 0.0)))

    def contains(self, points):
        p = np.asarray(points)
        return np.all((p >= np.asarray(self.lo)) & (p <= np.asarray(self.hi)), axis=-1)

    @classmethod
    def around_mask(cls, mask, margin=0.0):
        """Bounding box of the foreground voxels, grown by ``margin`` and clipped to the grid."""
        data = mask_array(mask)
        idx = np.argwhere(data)
        if len(idx) == 0:
            raise ValueError("cannot take the bounding box of an empty mask")
        dims = np.asarray(data.shape) - 1
        lo = np.maximum(idx.min(axis=0) - margin, 0)
        hi = np.minimum(idx.max(axis=0) + margin, dims)
        return cls(tuple(lo), tuple(hi))


@dataclass
class PivotSet:
    pivots: np.ndarray           # (N, 3)
    roi: Box
    strategy: str
    spacing: float
    lattice_index: np.ndarray | None = None   # (N, 3) for lattice pivots

    def __len__(self):
        return len(self.pivots)


def sample_pivots(roi, strategy="lattice", spacing=8.0, count=None, seed=0, jitter=0.25):
    """Lattice pivots (``spacing``, jittered by up to ``jitter * spacing``) or ``count`` uniform ones."""
    if not roi.volume > 0:
        raise ValueError(f"ROI {roi} has zero volume")
    rng = np.random.default_rng(seed)
    lo, ext = np.asarray(roi.lo), roi.extent
    if strategy == "lattice":
        if not spacing > 0:
            raise ValueError("spacing must be positive")
        if not 0 <= jitter <= 0.25:
            raise ValueError("jitter must be within [0, 0.25] of the spacing")
        n = np.maximum(np.floor(ext / spacing + 1e-9).astype(int), 1)
        center = lo + ext / 2.0
        axes = [center[a] + (np.arange(n[a]) - (n[a] - 1) / 2.0) * spacing for a in range(3)]
        index = np.stack(np.meshgrid(*(np.arange(k) for k in n), indexing="ij"), -1).reshape(-1, 3)
        pts = np.stack([axes[a][index[:, a]] for a in range(3)], axis=1)
        if jitter > 0:
            pts = pts + rng.uniform(-jitter * spacing, jitter * spacing, pts.shape)
        return PivotSet(pts, roi, "lattice", float(spacing), index)
    if strategy in ("random", "uniformRandom"):
        if count is None or count < 1:
            raise ValueError("random pivots need count >= 1")
        pts = lo + rng.random((int(count), 3)) * ext
        mean_spacing = (roi.volume / count) ** (1.0 / 3.0)
        return PivotSet(pts, roi, "random", mean_spacing, None)
    raise ValueError(f"unknown pivot strategy {strategy!r}")


def neighbor_edges(pivot_set, k=6):
    """Undirected neighbor pairs ``(i, j)`` with ``i < j``, sorted.

    Lattice pivots use 6-adjacency; random pivots use symmetrized k-nearest neighbors.
    """
    if pivot_set.lattice_index is not None:
        index = pivot_set.lattice_index
        lookup = {tuple(v): i for i, v in enumerate(index.tolist())}
        edges = []
        for i, v in enumerate(index.tolist()):
            for d in _LATTICE_NEIGHBORS.tolist():
                j = lookup.get((v[0] + d[0], v[1] + d[1], v[2] + d[2]))
                if j is not None:
                    edges.append((min(i, j), max(i, j)))
    else:
        pts = pivot_set.pivots
        if len(pts) < 2:
            return np.zeros((0, 2), dtype=np.intp)
        kk = min(k + 1, len(pts))
        _, nn = cKDTree(pts).query(pts, k=kk)
        edges = [(min(i, int(j)), max(i, int(j))) for i, row in enumerate(nn) for j in row[1:]]
    if not edges:
        return np.zeros((0, 2), dtype=np.intp)
    return np.unique(np.asarray(edges, dtype=np.intp), axis=0)


def face_pivots(pivot_set, margin=None):
    """Pivots on the ROI faces: outermost lattice layer, or within ``margin`` of a face."""
    if pivot_set.lattice_index is not None:
        idx = pivot_set.lattice_index
        hi = idx.max(axis=0)
        return np.any((idx == 0) | (idx == hi), axis=1)
    margin = pivot_set.spacing / 2.0 if margin is None else margin
    p = pivot_set.pivots
    lo, hi = np.asarray(pivot_set.roi.lo), np.asarray(pivot_set.roi.hi)
    return np.any((p - lo < margin) | (hi - p < margin), axis=1)


def shell_membership(pivot, radii, grid, points, mode="bilinear"):
    """Whether each point lies within the star-shaped shell around ``pivot``.

    The radius toward a point is interpolated on the (azimuth, polar) grid,
    wrapping around in azimuth and clamping at the poles.
    """
    pts = np.asarray(points, dtype=np.float64)
    v = pts - np.asarray(pivot, dtype=np.float64)
    dist = np.linalg.norm(v, axis=-1)
    safe = np.where(dist > 0, dist, 1.0)
    u = grid.azimuth_index(np.arctan2(v[..., 1], v[..., 0]))
    w = np.clip(grid.polar_index(v[..., 2] / safe), 0.0, grid.mp - 1)
    radii = np.asarray(radii, dtype=np.float64)
    if mode == "nearest":
        ui = np.mod(np.rint(u).astype(np.intp), grid.ma)
        wi = np.rint(w).astype(np.intp)
        r = radii[ui, wi]
    elif mode == "bilinear":
        u0 = np.floor(u).astype(np.intp)
        fu = u - u0
        u0 = np.mod(u0, grid.ma)
        u1 = np.mod(u0 + 1, grid.ma)
        w0 = np.minimum(np.floor(w).astype(np.intp), max(grid.mp - 2, 0))
        fw = w - w0
        w1 = np.minimum(w0 + 1, grid.mp - 1)
        r = ((radii[u0, w0] * (1 - fw) + radii[u0, w1] * fw) * (1 - fu)
             + (radii[u1, w0] * (1 - fw) + radii[u1, w1] * fw) * fu)
    else:
        raise ValueError(f"unknown membership mode {mode!r}")
    return dist <= r


def _shell_box(pivot, radii):
    rmax = float(np.max(radii)) if np.size(radii) else 0.0
    p = np.asarray(pivot, dtype=np.float64)
    return p - rmax, p + rmax


def _paired_samples(a, b, count, seed):
    (pa, ra), (pb, rb) = a, b
    lo_a, hi_a = _shell_box(pa, ra)
    lo_b, hi_b = _shell_box(pb, rb)
    lo, hi = np.minimum(lo_a, lo_b), np.maximum(hi_a, hi_b)
    if np.any(hi - lo <= 0):
        return None
    rng = np.random.default_rng(seed)
    return lo + rng.random((int(count), 3)) * (hi - lo)


def _overlap_counts(a, b, grid, count, seed, mode):
    pts = _paired_samples(a, b, count, seed)
    if pts is None:
        return 0, 0, 0
    ia = shell_membership(a[0], a[1], grid, pts, mode)
    ib = shell_membership(b[0], b[1], grid, pts, mode)
    return int(ia.sum()), int(ib.sum()), int((ia & ib).sum())


def estimate_iou(shell_a, shell_b, grid, sample_count=2000, seed=0, mode="bilinear"):
    """Monte Carlo IOU of two shells given as ``(pivot, radii)`` (or objects with those attributes).

    Points are uniform in the bounding box enclosing both shells' boxes, so the
    estimate is symmetric in its arguments. Returns 0 when no point hits either shell.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    a, b = _as_pair(shell_a), _as_pair(shell_b)
    na, nb, ni = _overlap_counts(a, b, grid, sample_count, seed, mode)
    union = na + nb - ni
    return ni / union if union else 0.0


def estimate_dsc(shell_a, shell_b, grid, sample_count=2000, seed=0, mode="bilinear"):
    """Monte Carlo DSC of the two shell volumes; 0 when both are empty."""
    a, b = _as_pair(shell_a), _as_pair(shell_b)
    na, nb, ni = _overlap_counts(a, b, grid, sample_count, seed, mode)
    return 2.0 * ni / (na + nb) if na + nb else 0.0


def _as_pair(shell):
    if isinstance(shell, tuple):
        return np.asarray(shell[0], dtype=np.float64), np.asarray(shell[1], dtype=np.float64)
    return shell.pivot, shell.radii


def pair_seed(seed, i, j):
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, min(int(i), int(j)), max(int(i), int(j))]


@dataclass
class ConsistencyGraph:
    n: int
    edges: np.ndarray     # (E, 2), i < j
    weights: np.ndarray   # (E,), IOU in [0, 1]

    def incident_sum(self):
        s = np.zeros(self.n)
        np.add.at(s, self.edges[:, 0], self.weights)
        np.add.at(s, self.edges[:, 1], self.weights)
        return s

    def degree(self):
        d = np.zeros(self.n, dtype=np.intp)
        np.add.at(d, self.edges[:, 0], 1)
        np.add.at(d, self.edges[:, 1], 1)
        return d


def build_consistency_graph(pivots, radii, grid, edges, sample_count=2000, seed=0, threads=1,
                            mode="bilinear"):
    pivots = np.asarray(pivots, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)

    def work(s, e):
        return [estimate_iou((pivots[i], radii[i]), (pivots[j], radii[j]), grid, sample_count,
                             pair_seed(seed, i, j), mode) for i, j in edges[s:e]]

    parts = map_chunks(work, len(edges), 64, threads)
    weights = np.asarray([w for part in parts for w in part], dtype=np.float64)
    return ConsistencyGraph(len(pivots), edges, weights)


def max_flow_min_cut(n, edges, weights, source, sinks, source_caps=None, sink_caps=None, tol=1e-12):
    """Seeded s-t minimum cut on an undirected weighted graph.

    ``source`` is a node index; ``sinks`` flags nodes tied to a virtual sink
    with capacity exceeding every finite cut. Optional ``source_caps`` and
    ``sink_caps`` add finite per-node links to the source node and the sink.
    Returns ``(cut_value, source_side)`` where ``source_side`` is the set
    reachable from ``source`` in the final residual graph, which is the same for
    every maximum flow.
    """
    big = float(np.sum(weights)) + 1.0
    for caps in (source_caps, sink_caps):
        if caps is not None:
            big += float(np.sum(caps))
    t = n
    head, cap, adj = [], [], [[] for _ in range(n + 1)]

    def arc(u, v, c_uv, c_vu):
        adj[u].append(len(head)); head.append(v); cap.append(c_uv)
        adj[v].append(len(head)); head.append(u); cap.append(c_vu)

    for (i, j), w in zip(np.asarray(edges).tolist(), np.asarray(weights, dtype=float).tolist()):
        if w > 0:
            arc(i, j, w, w)
    for s in np.flatnonzero(sinks):
        arc(int(s), t, big, 0.0)
    if source_caps is not None:
        for i, c in enumerate(np.asarray(source_caps, dtype=float).tolist()):
            if c > 0 and i != source:
                arc(source, i, c, 0.0)
    if sink_caps is not None:
        for i, c in enumerate(np.asarray(sink_caps, dtype=float).tolist()):
            if c > 0:
                arc(i, t, c, 0.0)

    flow = 0.0
    while True:
        # breadth-first augmenting path (Edmonds-Karp)
        parent = [-1] * (n + 1)
        parent[source] = -2
        queue = deque([source])
        while queue and parent[t] == -1:
            u = queue.popleft()
            for a in adj[u]:
                v = head[a]
                if parent[v] == -1 and cap[a] > tol:
                    parent[v] = a
                    queue.append(v)
        if parent[t] == -1:
            break
        push, v = float("inf"), t
        while v != source:
            a = parent[v]
            push = min(push, cap[a])
            v = head[a ^ 1]
        v = t
        while v != source:
            a = parent[v]
            cap[a] -= push
            cap[a ^ 1] += push
            v = head[a ^ 1]
        flow += push

    seen = np.zeros(n + 1, dtype=bool)
    seen[source] = True
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for a in adj[u]:
            v = head[a]
            if not seen[v] and cap[a] > tol:
                seen[v] = True
                queue.append(v)
    return flow, seen[:n]


def collapse_evidence(radii, weights=None):
    """Per-shell inner evidence in [-1, 1]: ``1 - 2 * (collapsed solid-angle fraction)``.

    A pivot outside a convex object loses at least the half of its directions
    that point away from the object; an inner pivot loses none.
    """
    radii = np.asarray(radii)
    collapsed = (radii <= 0).reshape(len(radii), -1).astype(np.float64)
    if weights is None:
        frac = collapsed.mean(axis=1)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        frac = collapsed @ w / w.sum()
    return 1.0 - 2.0 * frac


def classify_pivots(graph, faces, mode="mincut", threshold=0.5, evidence=None, evidence_weight=0.0):
    """Boolean inner flag per pivot.

    ``mincut``: the source is the non-face pivot with the largest summed
    incident IOU, the sink is tied to every face pivot, and the source side
    of the minimum cut is inner. With ``evidence`` (per-pivot values in
    [-1, 1], positive meaning inner) and ``evidence_weight > 0``, each pivot is
    also linked to the source or the sink with capacity
    ``evidence_weight * |evidence|``. ``threshold``: a pivot is inner when its
    mean incident IOU is at least ``threshold``.
    """
    n = graph.n
    faces = np.asarray(faces, dtype=bool)
    if n < 2:
        log.warning("consistency graph has %d node(s); declaring every pivot inner", n)
        return np.ones(n, dtype=bool)
    if mode == "threshold":
        deg = graph.degree()
        mean = np.divide(graph.incident_sum(), deg, out=np.zeros(n), where=deg > 0)
        return mean >= threshold
    if mode != "mincut":
        raise ValueError(f"unknown classification mode {mode!r}")
    score = graph.incident_sum()
    candidates = np.flatnonzero(~faces)
    if len(candidates) == 0:
        log.warning("every pivot touches the ROI faces; falling back to the IOU threshold")
        return classify_pivots(graph, faces, "threshold", threshold)
    source = int(candidates[np.argmax(score[candidates])])
    src_caps = snk_caps = None
    if evidence is not None and evidence_weight > 0:
        ev = np.clip(np.asarray(evidence, dtype=np.float64), -1.0, 1.0)
        src_caps = evidence_weight * np.maximum(ev, 0.0)
        snk_caps = evidence_weight * np.maximum(-ev, 0.0)
    _, inner = max_flow_min_cut(n, graph.edges, graph.weights, source, faces, src_caps, snk_caps)
    return inner


def inner_outer_dsc_stats(pivots, radii, grid, edges, labels, sample_count=2000, seed=0):
    """Mean neighbor-shell DSC for inner-inner and inner-outer pairs near the boundary.

    Only pairs with at least one boundary pivot (an inner pivot with an outer
    neighbor) count. A category without pairs is reported as ``None``.
    """
    labels = np.asarray(labels, dtype=bool)
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    has_outer = np.zeros(len(labels), dtype=bool)
    for i, j in edges:
        if labels[i] and not labels[j]:
            has_outer[i] = True
        if labels[j] and not labels[i]:
            has_outer[j] = True
    boundary = labels & has_outer
    ii, io = [], []
    for i, j in edges:
        if not (boundary[i] or boundary[j]):
            continue
        d = estimate_dsc((pivots[i], radii[i]), (pivots[j], radii[j]), grid, sample_count,
                         pair_seed(seed, i, j))
        (ii if labels[i] and labels[j] else io).append(d)
    return {
        "inner_inner": float(np.mean(ii)) if ii else None,
        "inner_outer": float(np.mean(io)) if io else None,
        "n_inner_inner": len(ii),
        "n_inner_outer": len(io),
    }


def write_graph_csv(path, graph):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "iou"])
        for (i, j), v in zip(graph.edges.tolist(), graph.weights.tolist()):
            w.writerow([i, j, repr(float(v))])


def write_partition_csv(path, inner):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pivotIndex", "inner"])
        for i, v in enumerate(np.asarray(inner, dtype=bool).tolist()):
            w.writerow([i, int(v)])
