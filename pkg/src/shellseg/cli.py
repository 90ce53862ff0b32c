"""Command-line driver: ``shellseg {phantom,prepare,train,segment,eval,diag}``.

Every stage reads its inputs from and writes its outputs to files (by default
inside ``paths.output_dir``), so stages can be re-run independently. Exit codes:
0 on success, 2 for configuration errors, 3 for runtime errors.
"""

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as C
from . import diagnostics as D
from . import pipeline as P
from .distance import build_distance_field, load_field, save_field
from .phantoms import generate_phantom, save_spec
from .pivots import write_graph_csv, write_partition_csv
from .predictor import ConvRegressor
from .predictor.training import write_loss_csv
from .reconstruction import write_cloud_csv
from .volume import load_mask, load_volume, save_mask, save_volume, voxel_stats

log = logging.getLogger("shellseg")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _out(cfg, name):
    path = Path(cfg["paths"]["output_dir"]) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _path(cfg, key, name):
    return C.output_path(cfg, key, name)


def _dest(cfg, key, name):
    """Like ``_path`` but for writing: creates the parent directory."""
    path = _path(cfg, key, name)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def cmd_phantom(cfg, args):
    spec = C.phantom_spec(cfg)
    vol, mask = generate_phantom(spec.validate())
    save_volume(_dest(cfg, "volume", "volume"), vol)
    save_mask(_dest(cfg, "mask", "mask"), mask)
    save_spec(_out(cfg, "phantom.json"), spec)
    log.info("%s phantom %s: %d foreground voxels", spec.kind, spec.dims, mask.count)


def cmd_prepare(cfg, args):
    mask = load_mask(_path(cfg, "mask", "mask"))
    start = time.perf_counter()
    field = build_distance_field(mask, cfg["field"]["tau"], workers=cfg["threads"])
    log.info("distance field built in %.2f s", time.perf_counter() - start)
    save_field(_dest(cfg, "field", "field"), field)


def cmd_train(cfg, args):
    model, curve, heldout = P.train_model(cfg, on_epoch=lambda e, l: log.info("epoch %d loss %.5f", e, l))
    model.save(_dest(cfg, "model", "model"))
    write_loss_csv(_out(cfg, "loss.csv"), curve)
    rows = [("final_loss", curve[-1])]
    if heldout is not None:
        rows.append(("heldout_mae", heldout))
        log.info("held-out mean |O_pred - O_gt| = %.4f", heldout)
    _write_rows(_out(cfg, "train_metrics.csv"), ["metric", "value"], rows)


def _predictor(cfg):
    def field():
        return load_field(_path(cfg, "field", "field"))

    def model():
        path = _path(cfg, "model", "model")
        if not path.with_suffix(".bin").exists() or not path.with_suffix(".json").exists():
            raise FileNotFoundError(f"model checkpoint {path}.bin/.json not found; run 'train' first")
        return ConvRegressor.load(path)

    return P.load_predictor(cfg, field, model)


def _roi_mask(cfg):
    if cfg["pivots"]["roi"] is not None:
        return None
    return load_mask(_path(cfg, "mask", "mask"))


def cmd_segment(cfg, args):
    vol = load_volume(_path(cfg, "volume", "volume"))
    result = P.segment(cfg, vol, _predictor(cfg), _roi_mask(cfg))
    save_mask(_dest(cfg, "prediction", "segmentation"), result.mask)
    write_cloud_csv(_out(cfg, "cloud.csv"), result.cloud)
    write_partition_csv(_out(cfg, "partition.csv"), result.inner)
    write_graph_csv(_out(cfg, "graph.csv"), result.graph)
    piv = result.pivots.pivots
    _write_rows(_out(cfg, "pivots.csv"), ["pivotIndex", "x", "y", "z", "face", "inner", "iterations"],
                [(i, *map(float, piv[i]), int(result.faces[i]), int(result.inner[i]),
                  int(result.run.iterations[i])) for i in range(len(piv))])
    _write_rows(_out(cfg, "traces.csv"), ["pivotIndex", "iteration", "meanAbsO"],
                [(i, t + 1, float(v)) for i, trace in enumerate(result.run.traces) for t, v in enumerate(trace)])
    log.info("segmentation: %d voxels from %d ending points", int(result.mask.sum()), len(result.cloud))


def cmd_eval(cfg, args):
    pred_path = Path(args.prediction) if args.prediction else _path(cfg, "prediction", "segmentation")
    truth_path = Path(args.truth) if args.truth else _path(cfg, "mask", "mask")
    pred, truth = load_mask(pred_path), load_mask(truth_path)
    if pred.dims != truth.dims:
        raise ValueError(f"dimension mismatch: prediction {pred.dims} vs ground truth {truth.dims}")
    st = voxel_stats(truth, pred)
    _write_rows(_out(cfg, "metrics.csv"), ["dsc", "intersection", "predicted", "truth"],
                [(float(st.dsc), st.intersection_count, st.pred_count, st.true_count)])
    print(f"DSC {st.dsc:.6f}")


def cmd_diag(cfg, args):
    d = cfg["diag"]
    vol = load_volume(_path(cfg, "volume", "volume"))
    mask = load_mask(_path(cfg, "mask", "mask"))
    predictor = _predictor(cfg)
    grid = P.direction_grid(cfg)
    policy = C.iteration_policy(cfg, d["consistency_samples"])

    pivots = P.diag_pivots(cfg, mask)
    traces, _ = D.convergence_traces(predictor, vol, pivots, grid, policy, d["iterations"], cfg["threads"])
    D.write_traces_csv(_out(cfg, "diag_traces.csv"), traces)
    its = np.arange(1, traces.shape[1] + 1)
    D.svg_line_chart(_out(cfg, "diag_convergence.svg"), [("mean |O|", its, traces.mean(axis=0))],
                     "Mean |O| per iteration", "iteration", "mean |O|")

    center = np.argwhere(mask.data).mean(axis=0)
    step = cfg["pivots"]["spacing"] if d["walk_step"] is None else d["walk_step"]
    walk = D.walk_pivots(center, d["walk_direction"], step, d["walk_count"])
    _, pair = D.pivot_walk(predictor, vol, grid, policy, walk, d["sample_count"], cfg["seed"], cfg["threads"])
    inside = P.mask_lookup(mask, walk)
    D.write_walk_csv(_out(cfg, "diag_walk.csv"), walk, pair, inside)
    D.svg_line_chart(_out(cfg, "diag_walk.svg"), [("neighbor DSC", np.arange(len(pair)), pair)],
                     "Pivot walk", "pair index", "DSC")

    stats = P.inner_outer_stats(cfg, vol, predictor, mask)
    _write_rows(_out(cfg, "diag_inner_outer.csv"), ["category", "meanDsc", "pairs"],
                [("inner_inner", "" if stats["inner_inner"] is None else float(stats["inner_inner"]),
                  stats["n_inner_inner"]),
                 ("inner_outer", "" if stats["inner_outer"] is None else float(stats["inner_outer"]),
                  stats["n_inner_outer"])])
    log.info("mean |O| at iteration %d: %.4f; inner-inner DSC %s, inner-outer DSC %s",
             traces.shape[1], traces.mean(axis=0)[-1], stats["inner_inner"], stats["inner_outer"])


COMMANDS = {
    "phantom": (cmd_phantom, "generate a phantom volume and its mask"),
    "prepare": (cmd_prepare, "build the truncated signed distance field"),
    "train": (cmd_train, "train the learned predictor"),
    "segment": (cmd_segment, "segment a volume"),
    "eval": (cmd_eval, "DSC of a predicted mask against ground truth"),
    "diag": (cmd_diag, "convergence traces, pivot walk and neighbor-shell DSC"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (missing keys take defaults)")
    common.add_argument("--threads", type=int, help="worker threads (outputs do not depend on it)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--print-effective-config", action="store_true",
                        help="print the merged, validated config and exit")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="shellseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "eval":
            p.add_argument("prediction", nargs="?", help="predicted mask (raw+json path stem)")
            p.add_argument("truth", nargs="?", help="ground-truth mask (raw+json path stem)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.threads is not None and args.threads < 1:
            raise C.ConfigError("--threads must be >= 1")
        cfg = C.load_config(args.config, args.seed, args.threads)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_effective_config:
        print(json.dumps(cfg, indent=2))
        return EXIT_OK
    try:
        COMMANDS[args.command][0](cfg, args)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:   # reported as a runtime failure with a clean message
        log.debug("traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
