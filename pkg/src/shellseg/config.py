"""Pipeline configuration: one JSON document, merged over explicit defaults and validated.

Structural checks (types, ranges, unknown keys) use a JSON schema; semantic
checks construct the module-level parameter objects so that their own
preconditions apply. ``effective_config`` returns the merged document that
``--print-effective-config`` dumps.
"""

import copy
import json
from pathlib import Path

import jsonschema

from .phantoms import PhantomSpec
from .predictor import TrainConfig
from .reconstruction import ReconParams
from .shell import ChannelSpec, IterationPolicy


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "paths": {
        "output_dir": "out",
        "volume": None,       # defaults below are resolved inside output_dir
        "mask": None,
        "field": None,
        "model": None,
        "prediction": None,
    },
    "phantom": json.loads(json.dumps(PhantomSpec().to_dict())),
    "field": {"tau": 2.0},
    "grid": {"ma": 120, "mp": 120},
    "channels": {"la": 5, "lb": 5, "append_directions": True},
    "shell": {
        "r0": 6.0,
        "max_rounds": 10,
        "convergence_threshold": 0.5,
        "consistency_samples": 3,
        "consistency_sigma": 0.5,
    },
    "pivots": {
        "strategy": "lattice",
        "spacing": 8.0,
        "count": None,
        "jitter": 0.25,
        "roi": None,           # [[x0, y0, z0], [x1, y1, z1]]; None = mask bounding box
        "roi_margin": None,    # None = one lattice spacing
    },
    "graph": {
        "sample_count": 2000,
        "mode": "mincut",
        "threshold": 0.5,
        "evidence_weight": 6.0,
        "membership": "bilinear",
    },
    "reconstruction": {
        "bandwidth": 1.0,
        "log_threshold": -14.0,
        "alpha": None,         # None = twice the pivot spacing
        "thinning": 3,
        "closing": None,
    },
    "predictor": {"kind": "oracle"},
    "train": {
        "phantom_seeds": [0, 1, 2],
        "pivot_spacing": 16.0,
        "epochs": 4,
        "batch_size": 16,
        "learning_rate": 0.02,
        "momentum": 0.9,
        "base_width": 8,
        "input_scale": 0.01,
        "curriculum": "linear",
        "heldout_seed": 3,
        "heldout_pivots": 64,
    },
    "diag": {
        "iterations": 200,
        "pivot_count": 16,
        "pivot_spread": 0.5,   # fraction of the half-extent around the object center
        "consistency_samples": 1,
        "walk_direction": [1.0, 0.3, 0.2],
        "walk_step": None,     # None = the pivot spacing, the distance between graph neighbors
        "walk_count": 8,
        "sample_count": 4000,
    },
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_path = {"type": ["string", "null"]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "threads": _int_pos,
    "paths": _obj({k: _path for k in DEFAULTS["paths"]}),
    "phantom": _obj({
        "kind": {"enum": ["sphere", "ellipsoid", "dumbbell", "torus"]},
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3},
        "center": {"anyOf": [{"type": "null"}, _vec3]},
        "radius": _pos,
        "semi_axes": {"type": "array", "items": _pos, "minItems": 3, "maxItems": 3},
        "offsets": {"type": "array", "items": _vec3, "minItems": 2, "maxItems": 2},
        "radii": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
        "ring_radius": _pos,
        "tube_radius": _pos,
        "inside_mean": _num,
        "outside_mean": _num,
        "noise_sigma": {"type": "number", "minimum": 0},
        "smoothing_width": {"type": "number", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "margin": {"type": "number", "minimum": 0},
    }),
    "field": _obj({"tau": _pos}),
    "grid": _obj({"ma": _int_pos, "mp": _int_pos}),
    "channels": _obj({"la": {"type": "integer", "minimum": 0},
                      "lb": {"type": "integer", "minimum": 0},
                      "append_directions": {"type": "boolean"}}),
    "shell": _obj({
        "r0": _pos,
        "max_rounds": _int_pos,
        "convergence_threshold": {"type": "number", "minimum": 0},
        "consistency_samples": {"type": "integer", "minimum": 0},
        "consistency_sigma": {"type": "number", "minimum": 0},
    }),
    "pivots": _obj({
        "strategy": {"enum": ["lattice", "uniformRandom"]},
        "spacing": _pos,
        "count": {"type": ["integer", "null"], "minimum": 1},
        "jitter": {"type": "number", "minimum": 0, "maximum": 0.25},
        "roi": {"anyOf": [{"type": "null"},
                          {"type": "array", "items": _vec3, "minItems": 2, "maxItems": 2}]},
        "roi_margin": {"type": ["number", "null"], "minimum": 0},
    }),
    "graph": _obj({
        "sample_count": _int_pos,
        "mode": {"enum": ["mincut", "threshold"]},
        "threshold": _num,
        "evidence_weight": {"type": "number", "minimum": 0},
        "membership": {"enum": ["bilinear", "nearest"]},
    }),
    "reconstruction": _obj({
        "bandwidth": _pos,
        "log_threshold": _num,
        "alpha": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "thinning": {"type": "integer", "minimum": 0},
        "closing": {"type": ["integer", "null"], "minimum": 0},
    }),
    "predictor": _obj({"kind": {"enum": ["oracle", "learned"]}}),
    "train": _obj({
        "phantom_seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "pivot_spacing": _pos,
        "epochs": _int_pos,
        "batch_size": _int_pos,
        "learning_rate": {"type": "number", "minimum": 0},
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "base_width": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "input_scale": _pos,
        "curriculum": {"enum": ["linear", "none"]},
        "heldout_seed": {"type": ["integer", "null"], "minimum": 0},
        "heldout_pivots": {"type": "integer", "minimum": 0},
    }),
    "diag": _obj({
        "iterations": _int_pos,
        "pivot_count": {"type": "integer", "minimum": 0},
        "pivot_spread": {"type": "number", "minimum": 0, "maximum": 1},
        "consistency_samples": {"type": ["integer", "null"], "minimum": 0},
        "walk_direction": _vec3,
        "walk_step": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "walk_count": {"type": "integer", "minimum": 2},
        "sample_count": _int_pos,
    }),
})


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def effective_config(doc=None, seed=None, threads=None):
    """Defaults overlaid with ``doc`` and the command-line overrides, validated."""
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, doc)
    if seed is not None:
        cfg["seed"] = int(seed)
    if threads is not None:
        cfg["threads"] = int(threads)
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    _check_semantics(cfg)
    return cfg


def load_config(path=None, seed=None, threads=None):
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return effective_config(doc, seed, threads)


def _check_semantics(cfg):
    try:
        phantom_spec(cfg).validate()
        channel_spec(cfg)
        iteration_policy(cfg)
        recon_params(cfg)
        train_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    piv = cfg["pivots"]
    if piv["strategy"] == "uniformRandom" and piv["count"] is None:
        raise ConfigError("pivots/count is required for uniformRandom pivots")
    if piv["roi"] is not None and any(lo >= hi for lo, hi in zip(*piv["roi"])):
        raise ConfigError("pivots/roi must have lo < hi on every axis")


def phantom_spec(cfg, seed=None):
    doc = dict(cfg["phantom"])
    if seed is not None:
        doc["seed"] = int(seed)
    return PhantomSpec.from_dict(doc)


def channel_spec(cfg):
    c = cfg["channels"]
    return ChannelSpec(c["la"], c["lb"], c["append_directions"])


def iteration_policy(cfg, consistency_samples=None):
    s = cfg["shell"]
    k = s["consistency_samples"] if consistency_samples is None else consistency_samples
    return IterationPolicy(max_rounds=s["max_rounds"], convergence_threshold=s["convergence_threshold"],
                           consistency_samples=k, consistency_sigma=s["consistency_sigma"],
                           seed=cfg["seed"], r0=s["r0"])


def recon_params(cfg):
    r = cfg["reconstruction"]
    alpha = r["alpha"] if r["alpha"] is not None else 2.0 * cfg["pivots"]["spacing"]
    return ReconParams(bandwidth=r["bandwidth"], log_threshold=r["log_threshold"], alpha=alpha,
                       thinning=r["thinning"], closing=r["closing"])


def train_config(cfg):
    t = cfg["train"]
    return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
                       momentum=t["momentum"], seed=cfg["seed"])


def output_path(cfg, key, default_name):
    """Configured path for ``key``, or ``default_name`` inside the output directory."""
    explicit = cfg["paths"].get(key)
    if explicit:
        return Path(explicit)
    return Path(cfg["paths"]["output_dir"]) / default_name
