"""Stage functions shared by the command-line driver and the tests.

Each function takes the effective config dict (see ``config``) plus the
in-memory inputs it needs and returns plain results; file handling lives in
``cli``.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import config as C
from .distance import build_distance_field
from .phantoms import generate_phantom
from .pivots import (Box, build_consistency_graph, classify_pivots, collapse_evidence, face_pivots,
                     inner_outer_dsc_stats, neighbor_edges, sample_pivots)
from .predictor import ConvRegressor, OraclePredictor, mean_abs_error, train
from .reconstruction import reconstruct
from .shell import ending_points, generate_training_pairs, linear_curriculum, run_shells
from .sphere import build_direction_grid
from .volume import mask_array

log = logging.getLogger(__name__)


def direction_grid(cfg):
    return build_direction_grid(cfg["grid"]["ma"], cfg["grid"]["mp"])


def region_of_interest(cfg, mask=None, spacing=None):
    piv = cfg["pivots"]
    if piv["roi"] is not None:
        return Box(*piv["roi"])
    if mask is None:
        raise ValueError("no ROI configured and no mask to derive one from")
    spacing = piv["spacing"] if spacing is None else spacing
    margin = spacing if piv["roi_margin"] is None else piv["roi_margin"]
    return Box.around_mask(mask, margin)


def make_pivots(cfg, mask=None, seed=None):
    piv = cfg["pivots"]
    roi = region_of_interest(cfg, mask)
    seed = cfg["seed"] if seed is None else seed
    return sample_pivots(roi, piv["strategy"], piv["spacing"], piv["count"], seed, piv["jitter"])


def mask_lookup(mask, points):
    """Mask value at the voxel nearest to each point (False outside the grid)."""
    data = mask_array(mask)
    idx = np.rint(np.asarray(points)).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < np.asarray(data.shape)), axis=1)
    out = np.zeros(len(idx), dtype=bool)
    out[ok] = data[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
    return out


@dataclass
class Segmentation:
    pivots: object          # PivotSet
    faces: np.ndarray
    run: object             # RunResult
    graph: object           # ConsistencyGraph
    inner: np.ndarray
    cloud: np.ndarray
    mask: np.ndarray
    stages: dict


def segment(cfg, vol, predictor, roi_mask=None):
    """Pivots, shells, classification, ending-point cloud and reconstruction."""
    grid = direction_grid(cfg)
    threads = cfg["threads"]
    pivots = make_pivots(cfg, roi_mask)
    log.info("%d pivots in ROI %s..%s", len(pivots), pivots.roi.lo, pivots.roi.hi)
    run = run_shells(predictor, vol, pivots.pivots, grid, C.iteration_policy(cfg), threads=threads)
    g = cfg["graph"]
    edges = neighbor_edges(pivots)
    graph = build_consistency_graph(pivots.pivots, run.radii, grid, edges, g["sample_count"],
                                    cfg["seed"], threads, g["membership"])
    faces = face_pivots(pivots)
    inner = classify_pivots(graph, faces, g["mode"], g["threshold"],
                            evidence=collapse_evidence(run.radii), evidence_weight=g["evidence_weight"])
    log.info("%d of %d pivots classified inner", int(inner.sum()), len(inner))
    pts = ending_points(pivots.pivots[inner], run.radii[inner], grid)
    cloud = pts[run.radii[inner] > 0]
    stages = {}
    out = reconstruct(cloud, vol.dims, C.recon_params(cfg), stages)
    return Segmentation(pivots, faces, run, graph, inner, cloud, out, stages)


def phantom_case(cfg, seed):
    """Volume, mask and truncated field of the configured phantom with noise seed ``seed``."""
    vol, mask = generate_phantom(C.phantom_spec(cfg, seed).validate())
    field = build_distance_field(mask, cfg["field"]["tau"], workers=cfg["threads"])
    return vol, mask, field


def _training_pivots(cfg, mask, seed):
    t = cfg["train"]
    roi = Box.around_mask(mask, t["pivot_spacing"] / 2.0)
    return sample_pivots(roi, "lattice", t["pivot_spacing"], seed=seed, jitter=cfg["pivots"]["jitter"]).pivots


def new_model(cfg):
    t = cfg["train"]
    return ConvRegressor(C.channel_spec(cfg), t["base_width"], cfg["field"]["tau"], t["input_scale"],
                         seed=cfg["seed"])


def train_model(cfg, on_epoch=None):
    """Train a regressor on rollouts over the configured training phantoms.

    Pairs are regenerated every epoch with the curriculum's replacement
    probability (and reused while it stays zero). Returns
    ``(model, loss_curve, heldout_mae)``; the held-out error is ``None``
    without a held-out seed.
    """
    t = cfg["train"]
    grid = direction_grid(cfg)
    spec = C.channel_spec(cfg)
    policy = C.iteration_policy(cfg)
    cases = []
    for s in t["phantom_seeds"]:
        vol, mask, field = phantom_case(cfg, s)
        cases.append((vol, field, _training_pivots(cfg, mask, cfg["seed"] + s)))
    log.info("training on %d phantoms, %d pivots each", len(cases), len(cases[0][2]))
    model = new_model(cfg)
    q = linear_curriculum(t["epochs"]) if t["curriculum"] == "linear" else (lambda epoch: 0.0)
    cache = {}

    def pairs(epoch, current):
        qe = q(epoch)
        if qe == 0.0 and "zero" in cache:
            return cache["zero"]
        out = []
        for k, (vol, field, piv) in enumerate(cases):
            seed = (cfg["seed"] << 16) + (epoch << 8) + k
            out += list(generate_training_pairs(vol, field, piv, grid, spec, policy, qe,
                                                current if qe > 0 else None, seed))
        if qe == 0.0:
            cache["zero"] = out
        log.info("epoch %d: %d pairs at q=%.3f", epoch, len(out), qe)
        return out

    curve = train(model, pairs, C.train_config(cfg), on_epoch)
    cache.clear()
    heldout = None
    if t["heldout_seed"] is not None and t["heldout_pivots"] > 0:
        heldout = heldout_error(cfg, model, t["heldout_seed"])
    return model, curve, heldout


def heldout_error(cfg, model, seed):
    """Mean |O_pred - O_gt| over ground-truth rollouts of pivots in a held-out phantom."""
    t = cfg["train"]
    vol, mask, field = phantom_case(cfg, seed)
    piv = make_pivots(cfg, mask, seed=cfg["seed"] + seed).pivots
    rng = np.random.default_rng([cfg["seed"], seed])
    pick = np.sort(rng.choice(len(piv), size=min(t["heldout_pivots"], len(piv)), replace=False))
    pairs = list(generate_training_pairs(vol, field, piv[pick], direction_grid(cfg), C.channel_spec(cfg),
                                         C.iteration_policy(cfg), 0.0, None, seed))
    return mean_abs_error(model, pairs)


def load_predictor(cfg, field_loader, model_loader):
    kind = cfg["predictor"]["kind"]
    if kind == "oracle":
        return OraclePredictor(field_loader())
    return model_loader()


def diag_pivots(cfg, mask):
    """``diag.pivot_count`` seeded pivots inside the mask near the object's center."""
    d = cfg["diag"]
    data = mask_array(mask)
    idx = np.argwhere(data)
    if d["pivot_count"] < 1 or len(idx) == 0:
        raise ValueError("diagnostics need at least one pivot inside a non-empty mask")
    center = idx.mean(axis=0)
    half = (idx.max(axis=0) - idx.min(axis=0)) / 2.0 * d["pivot_spread"]
    rng = np.random.default_rng([cfg["seed"], 17])
    out = []
    for _ in range(1000):
        cand = center + rng.uniform(-1.0, 1.0, (4 * d["pivot_count"], 3)) * half
        out += [p for p, ok in zip(cand, mask_lookup(data, cand)) if ok]
        if len(out) >= d["pivot_count"]:
            return np.asarray(out[:d["pivot_count"]])
    raise ValueError("could not place diagnostic pivots inside the mask")


def inner_outer_stats(cfg, vol, predictor, mask):
    """Neighbor-shell DSC by category, with ground-truth labels of lattice pivots."""
    grid = direction_grid(cfg)
    pivots = make_pivots(cfg, mask)
    run = run_shells(predictor, vol, pivots.pivots, grid, C.iteration_policy(cfg), threads=cfg["threads"])
    labels = mask_lookup(mask, pivots.pivots)
    return inner_outer_dsc_stats(pivots.pivots, run.radii, grid, neighbor_edges(pivots), labels,
                                 cfg["graph"]["sample_count"], cfg["seed"])
