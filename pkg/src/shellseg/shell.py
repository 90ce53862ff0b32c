"""Elastic shells: ending points, projection images, radius updates and rollouts.

A shell is a pivot plus one radius per grid direction. Each round samples the
image along the current shell, asks a predictor for the signed distance of
every ending point to the boundary, and moves each radius by that amount
(clamped at zero). Most functions here come in a batched form working on
``pivots`` of shape (B, 3) and ``radii`` of shape (B, Ma, Mp).
"""

import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Protocol

import numpy as np

from .parallel import map_chunks

DEFAULT_R0 = 6.0
PIVOT_CHUNK = 8


@dataclass
class Shell:
    pivot: np.ndarray
    radii: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.pivot = np.asarray(self.pivot, dtype=np.float64).reshape(3)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        if np.any(self.radii < 0):
            raise ValueError("shell radii must be non-negative")

    @classmethod
    def sphere(cls, pivot, grid, r0=DEFAULT_R0):
        return cls(pivot, np.full(grid.shape, float(r0)))


@dataclass(frozen=True)
class ChannelSpec:
    """``la`` boundary channels around the shell, ``lb`` channels inside it."""

    la: int = 5
    lb: int = 5
    append_directions: bool = True

    def __post_init__(self):
        if self.la < 1 or self.lb < 0:
            raise ValueError(f"need la >= 1 and lb >= 0, got la={self.la}, lb={self.lb}")

    @property
    def parts(self):
        return 1 if self.lb == 0 else 2

    @property
    def n_channels(self):
        extra = 3 * self.parts if self.append_directions else 0
        return self.la + self.lb + extra


@dataclass(frozen=True)
class IterationPolicy:
    max_rounds: int = 10
    convergence_threshold: float = 0.5
    consistency_samples: int = 3
    consistency_sigma: float = 0.5
    seed: int = 0
    r0: float = DEFAULT_R0

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not self.convergence_threshold > 0:
            raise ValueError("convergence_threshold must be positive")
        if self.consistency_samples < 0:
            raise ValueError("consistency_samples must be >= 0")
        if not self.consistency_sigma > 0:
            raise ValueError("consistency_sigma must be positive")
        if self.r0 < 0:
            raise ValueError("r0 must be non-negative")


@dataclass
class ProjectionPair:
    image: np.ndarray       # (C, Ma, Mp)
    response: np.ndarray    # (Ma, Mp)
    pivot_index: int = 0
    iteration: int = 0


class Predictor(Protocol):
    """Maps shells to per-direction signed distances bounded by ``tau``."""

    tau: float

    def predict(self, vol, grid, pivots, radii) -> np.ndarray: ...


def shell_rng(seed, index):
    """Private random stream of one shell; independent of processing order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def ending_points(pivots, radii, grid):
    """``pivot + radius * direction`` for every direction; (..., Ma, Mp, 3)."""
    pivots = np.asarray(pivots, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    return pivots[..., None, None, :] + radii[..., None] * grid.dirs


def channel_radii(radii, spec):
    """Sampling radii of every intensity channel, shape (la + lb, ...).

    Boundary channels sit at integer offsets around the shell; inner channels
    split the segment from the pivot to the innermost boundary channel into
    ``lb + 1`` equal parts. Both are clamped at zero.
    """
    radii = np.asarray(radii, dtype=np.float64)
    half = (spec.la + 1) / 2.0
    out = np.empty((spec.la + spec.lb,) + radii.shape)
    for i in range(spec.la):
        out[i] = np.maximum(radii + (i + 1) - half, 0.0)
    inner = np.maximum(radii - half, 0.0)
    for j in range(spec.lb):
        out[spec.la + j] = (j + 1) / (spec.lb + 1) * inner
    return out


def project(vol, pivots, radii, grid, spec):
    """Multi-channel projection image(s) of the volume along shells.

    For a single shell (``pivots`` shape (3,)) returns (C, Ma, Mp); for a batch
    returns (B, C, Ma, Mp). Channel order: boundary intensities, then direction
    components, then inner intensities and direction components again.
    """
    pivots = np.asarray(pivots, dtype=np.float64)
    single = pivots.ndim == 1
    pivots = np.atleast_2d(pivots)
    radii = np.asarray(radii, dtype=np.float64).reshape((len(pivots),) + grid.shape)
    s = channel_radii(radii, spec)                                 # (L, B, Ma, Mp)
    pts = pivots[None, :, None, None, :] + s[..., None] * grid.dirs  # (L, B, Ma, Mp, 3)
    vals = vol.sample(pts).astype(np.float32)
    dirs = np.moveaxis(grid.dirs, -1, 0).astype(np.float32)          # (3, Ma, Mp)
    b = len(pivots)
    parts = [np.moveaxis(vals[:spec.la], 0, 1)]
    if spec.append_directions:
        parts.append(np.broadcast_to(dirs, (b,) + dirs.shape))
    if spec.lb:
        parts.append(np.moveaxis(vals[spec.la:], 0, 1))
        if spec.append_directions:
            parts.append(np.broadcast_to(dirs, (b,) + dirs.shape))
    image = np.concatenate(parts, axis=1)
    return image[0] if single else image


def ground_truth_response(field, pivots, radii, grid):
    """Field value at every ending point; within ``[-tau, tau]``."""
    return field.sample(ending_points(pivots, radii, grid))


def update_radii(radii, response):
    """One radius step: ``max(r + O, 0)``."""
    return np.maximum(np.asarray(radii, dtype=np.float64) + response, 0.0)


def update_shell(shell, response):
    return replace(shell, radii=update_radii(shell.radii, response), iteration=shell.iteration + 1)


def refine_with_consistency(predictor, vol, grid, pivots, radii, k, sigma, rngs):
    """Response at zero perturbation, estimated from ``k`` jittered predictions.

    Each round adds ``eps ~ N(0, sigma^2)`` to every radius, and the per-direction
    intercept of the least-squares line of prediction against ``eps`` is
    returned. ``k == 1`` returns the unperturbed prediction. ``rngs`` holds one
    generator per shell.
    """
    pivots = np.atleast_2d(np.asarray(pivots, dtype=np.float64))
    radii = np.asarray(radii, dtype=np.float64).reshape((len(pivots),) + grid.shape)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return predictor.predict(vol, grid, pivots, radii)
    eps = np.stack([np.stack([rng.normal(0.0, sigma, grid.shape) for _ in range(k)]) for rng in rngs], axis=1)
    # eps: (k, B, Ma, Mp)
    ys = np.stack([predictor.predict(vol, grid, pivots, radii + eps[i]) for i in range(k)])
    e_mean, y_mean = eps.mean(axis=0), ys.mean(axis=0)
    de = eps - e_mean
    var = (de * de).sum(axis=0)
    cov = (de * (ys - y_mean)).sum(axis=0)
    slope = np.divide(cov, var, out=np.zeros_like(cov), where=var > 0)
    return y_mean - slope * e_mean


@dataclass
class RunResult:
    radii: np.ndarray                 # (B, Ma, Mp)
    iterations: np.ndarray            # (B,)
    traces: list = field(default_factory=list)  # per shell: mean |O| after each round

    def shells(self, pivots):
        return [Shell(p, r, int(t)) for p, r, t in zip(np.atleast_2d(pivots), self.radii, self.iterations)]


def _run_batch(predictor, vol, grid, pivots, indices, policy, radii0, stop_on_convergence=True):
    b = len(pivots)
    radii = np.array(radii0, dtype=np.float64)
    iters = np.zeros(b, dtype=np.int64)
    traces = [[] for _ in range(b)]
    rngs = [shell_rng(policy.seed, i) for i in indices]
    active = np.ones(b, dtype=bool)
    for _ in range(policy.max_rounds):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        if policy.consistency_samples > 0:
            o = refine_with_consistency(predictor, vol, grid, pivots[idx], radii[idx],
                                        policy.consistency_samples, policy.consistency_sigma,
                                        [rngs[i] for i in idx])
        else:
            o = predictor.predict(vol, grid, pivots[idx], radii[idx])
        radii[idx] = update_radii(radii[idx], o)
        iters[idx] += 1
        mean_abs = np.abs(o).reshape(len(idx), -1).mean(axis=1)
        for i, m in zip(idx, mean_abs):
            traces[i].append(float(m))
        if stop_on_convergence:
            active[idx[mean_abs < policy.convergence_threshold]] = False
    return radii, iters, traces


def run_shells(predictor, vol, pivots, grid, policy, indices=None, radii0=None, threads=1,
               stop_on_convergence=True):
    """Iterate every shell until its mean |O| drops below the threshold or ``max_rounds``.

    ``indices`` name each pivot's random stream (defaults to ``0..B-1``), so a
    shell's trajectory does not depend on which other shells share its batch.
    """
    pivots = np.atleast_2d(np.asarray(pivots, dtype=np.float64))
    n = len(pivots)
    indices = np.arange(n) if indices is None else np.asarray(indices)
    if radii0 is None:
        radii0 = np.full((n,) + grid.shape, float(policy.r0))
    radii0 = np.broadcast_to(np.asarray(radii0, dtype=np.float64), (n,) + grid.shape)

    def work(s, e):
        return _run_batch(predictor, vol, grid, pivots[s:e], indices[s:e], policy, radii0[s:e],
                          stop_on_convergence)

    parts = map_chunks(work, n, PIVOT_CHUNK, threads)
    if not parts:
        return RunResult(np.zeros((0,) + grid.shape), np.zeros(0, dtype=np.int64), [])
    return RunResult(
        radii=np.concatenate([p[0] for p in parts]),
        iterations=np.concatenate([p[1] for p in parts]),
        traces=[t for p in parts for t in p[2]],
    )


def run_shell(predictor, vol, shell0, grid, policy, index=0):
    """Single-shell rollout; returns ``(final shell, trace)``."""
    res = run_shells(predictor, vol, shell0.pivot[None], grid, policy, indices=[index],
                     radii0=shell0.radii[None])
    final = Shell(shell0.pivot, res.radii[0], shell0.iteration + int(res.iterations[0]))
    return final, res.traces[0]


def linear_curriculum(epochs):
    """Replacement probability rising linearly from 0 at the first epoch to 1 at the last."""
    def q(epoch):
        if epochs <= 1:
            return 0.0
        return min(max(epoch / (epochs - 1), 0.0), 1.0)
    return q


def generate_training_pairs(vol, field, pivots, grid, spec, policy, q=0.0, model=None,
                            seed=None) -> Iterator[ProjectionPair]:
    """Simulated rollouts emitting ``(image, ground-truth response)`` at every round.

    Every pivot runs exactly ``policy.max_rounds`` rounds. At each round the
    radius update uses the model's prediction with probability ``q`` and the
    ground truth otherwise; the coin flips come from the pivot's own stream.
    """
    if vol.dims != field.dims:
        raise ValueError(f"volume dims {vol.dims} differ from field dims {field.dims}")
    if q > 0 and model is None:
        raise ValueError("a model is required when q > 0")
    seed = policy.seed if seed is None else seed
    pivots = np.atleast_2d(np.asarray(pivots, dtype=np.float64)).reshape(-1, 3)
    for s in range(0, len(pivots), PIVOT_CHUNK):
        p = pivots[s:s + PIVOT_CHUNK]
        idx = np.arange(s, s + len(p))
        rngs = [shell_rng(seed, i) for i in idx]
        radii = np.full((len(p),) + grid.shape, float(policy.r0))
        for t in range(policy.max_rounds):
            images = project(vol, p, radii, grid, spec)
            truth = ground_truth_response(field, p, radii, grid)
            for j in range(len(p)):
                yield ProjectionPair(images[j], truth[j].astype(np.float32), int(idx[j]), t)
            use_model = np.array([rng.random() < q for rng in rngs]) if q > 0 else np.zeros(len(p), bool)
            step = truth
            if use_model.any():
                step = truth.copy()
                step[use_model] = model.predict(vol, grid, p[use_model], radii[use_model])
            radii = update_radii(radii, step)


_RECORD = struct.Struct("<5i")


def write_pairs(path, pairs):
    """Spool pairs as records: int32 header (pivot, t, C, Ma, Mp), then I, then O (float32 LE)."""
    n = 0
    with open(path, "wb") as fh:
        for pair in pairs:
            c, ma, mp = pair.image.shape
            fh.write(_RECORD.pack(pair.pivot_index, pair.iteration, c, ma, mp))
            fh.write(np.asarray(pair.image, dtype="<f4").tobytes())
            fh.write(np.asarray(pair.response, dtype="<f4").tobytes())
            n += 1
    return n


def read_pairs(path):
    out = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(_RECORD.size)
            if not head:
                break
            if len(head) < _RECORD.size:
                raise ValueError(f"{path}: truncated record header")
            pivot, t, c, ma, mp = _RECORD.unpack(head)
            image = np.frombuffer(fh.read(4 * c * ma * mp), dtype="<f4").reshape(c, ma, mp)
            response = np.frombuffer(fh.read(4 * ma * mp), dtype="<f4").reshape(ma, mp)
            out.append(ProjectionPair(image.astype(np.float32), response.astype(np.float32), pivot, t))
    return out
