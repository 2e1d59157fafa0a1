"""Seeded feature-space interventions and the per-channel invariance statistic.

Perturbations realize the exogenous randomness source: each one is a pure
function of (master seed, stage, channel, intensity index, draw index, tensor
shape) and never of the activations themselves, so applying the same spec to
a reference stack and a distorted stack uses the identical realization.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import IndexOutOfRange, ShapeMismatch
from .transport import DistanceConfig, stage_channel_costs
from .validation import check_stack_pair

KINDS = ("additive_gaussian", "channel_scale", "channel_dropout")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}

# canonical relative grid; scaled per stage once stage_scales are calibrated
DEFAULT_INTENSITY_GRID = (0.0, 0.05, 0.1, 0.2, 0.4)


@dataclass(frozen=True)
class InterventionSpec:
    """Perturbation family, intensity grid, draw count, and seed policy.

    For ``additive_gaussian`` the effective noise std at stage s and level k
    is ``intensity_grid[k] * stage_scales[s]``; stage_scales default to 1 and
    are frozen constants (see :func:`calibrate_stage_scales`), keeping the
    perturbation independent of the stacks it is applied to.
    """

    kind: str = "additive_gaussian"
    intensity_grid: tuple = DEFAULT_INTENSITY_GRID
    draws_per_intensity: int = 2
    master_seed: int = 0
    stage_scales: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown intervention kind {self.kind!r}")
        grid = tuple(float(g) for g in self.intensity_grid)
        if not grid:
            raise ValueError("intensity_grid must be non-empty")
        if grid[0] < 0:
            raise ValueError("intensities must be non-negative")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("intensity_grid must be strictly increasing")
        object.__setattr__(self, "intensity_grid", grid)
        if self.draws_per_intensity < 1:
            raise ValueError("draws_per_intensity must be >= 1")
        if self.stage_scales is not None:
            scales = tuple(float(s) for s in self.stage_scales)
            if any(s <= 0 for s in scales):
                raise ValueError("stage_scales must be positive")
            object.__setattr__(self, "stage_scales", scales)

    def to_dict(self):
        doc = {
            "kind": self.kind,
            "intensity_grid": list(self.intensity_grid),
            "draws_per_intensity": int(self.draws_per_intensity),
            "master_seed": int(self.master_seed),
        }
        if self.stage_scales is not None:
            doc["stage_scales"] = list(self.stage_scales)
        return doc

    @classmethod
    def from_dict(cls, doc):
        return cls(
            kind=doc.get("kind", "additive_gaussian"),
            intensity_grid=doc.get("intensity_grid", DEFAULT_INTENSITY_GRID),
            draws_per_intensity=doc.get("draws_per_intensity", 2),
            master_seed=doc.get("master_seed", 0),
            stage_scales=doc.get("stage_scales"),
        )

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def spec_hash(self):
        """Stable 64-bit digest of the canonical JSON form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def calibrate_stage_scales(spec: InterventionSpec, stacks) -> InterventionSpec:
    """Freeze per-stage scale constants from representative stacks.

    Uses the mean per-stage activation standard deviation over the given
    stacks, so relative intensities are comparable across stages. The result
    is a new spec; the perturbations it generates remain input-independent.
    """
    stacks = list(stacks)
    if not stacks:
        raise ValueError("need at least one stack to calibrate")
    n_stages = len(stacks[0].stages)
    stds = np.zeros(n_stages)
    for stack in stacks:
        if len(stack.stages) != n_stages:
            raise ShapeMismatch("stacks disagree on stage count")
        for s, t in enumerate(stack.stages):
            stds[s] += float(np.std(t))
    stds /= len(stacks)
    stds = np.maximum(stds, 1e-12)
    return replace(spec, stage_scales=tuple(float(v) for v in stds))


def _rng(spec, stage, channel, intensity_index, draw_index):
    seq = np.random.SeedSequence(
        int(spec.master_seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=(_KIND_CODE[spec.kind], stage, channel, intensity_index, draw_index))
    return np.random.Generator(np.random.Philox(seq))


def realize_perturbation(spec, shapes, intensity_index, draw_index):
    """Deterministic perturbation parameters for stacks with the given stage shapes.

    Returns, per stage: the additive noise tensor (additive_gaussian), the
    per-channel scale factors (channel_scale), or the per-channel keep mask
    (channel_dropout). A pure function of spec, shape, and indices.
    """
    if not 0 <= intensity_index < len(spec.intensity_grid):
        raise IndexOutOfRange(
            f"intensity_index {intensity_index} outside grid of "
            f"{len(spec.intensity_grid)}")
    if not 0 <= draw_index < spec.draws_per_intensity:
        raise IndexOutOfRange(
            f"draw_index {draw_index} outside {spec.draws_per_intensity} draws")
    if spec.stage_scales is not None and len(spec.stage_scales) != len(shapes):
        raise ShapeMismatch(
            f"spec calibrated for {len(spec.stage_scales)} stages, "
            f"stack has {len(shapes)}")
    level = spec.intensity_grid[intensity_index]
    out = []
    for s, shape in enumerate(shapes):
        c = int(shape[0])
        spatial = int(np.prod(shape[1:]))
        if spec.kind == "additive_gaussian":
            sigma = level * (spec.stage_scales[s] if spec.stage_scales else 1.0)
            noise = np.empty((c, spatial), dtype=np.float32)
            for ch in range(c):
                g = _rng(spec, s, ch, intensity_index, draw_index)
                noise[ch] = g.standard_normal(spatial, dtype=np.float32)
            out.append((noise * np.float32(sigma)).reshape(shape))
        elif spec.kind == "channel_scale":
            u = np.empty(c, dtype=np.float64)
            for ch in range(c):
                g = _rng(spec, s, ch, intensity_index, draw_index)
                u[ch] = g.uniform(-1.0, 1.0)
            out.append((1.0 + level * u).astype(np.float32))
        else:  # channel_dropout
            p = min(level, 1.0)
            keep = np.empty(c, dtype=bool)
            for ch in range(c):
                g = _rng(spec, s, ch, intensity_index, draw_index)
                keep[ch] = g.uniform() >= p
            out.append(keep)
    return out


def apply_intervention(stack, spec, intensity_index, draw_index):
    """Apply one perturbation realization to a feature stack.

    Intensity 0 returns a value-identical copy; otherwise additive noise,
    per-channel scaling, or per-channel dropout per the spec's kind.
    """
    shapes = [s.shape for s in stack.stages]
    realization = realize_perturbation(spec, shapes, intensity_index, draw_index)
    if spec.intensity_grid[intensity_index] == 0.0:
        return stack.copy()
    stages = []
    for s, t in enumerate(stack.stages):
        r = realization[s]
        if spec.kind == "additive_gaussian":
            stages.append((t + r).astype(np.float32, copy=False))
        elif spec.kind == "channel_scale":
            stages.append((t * r.reshape(-1, *([1] * (t.ndim - 1))))
                          .astype(np.float32, copy=False))
        else:
            masked = t.copy()
            masked[~r] = 0.0
            stages.append(masked)
    return type(stack)(stack.backbone_id, stages)


def channel_delta(f_i, f_d, fp_i, fp_d, dist: DistanceConfig | None = None):
    """Invariance statistic: pre- minus post-intervention channel distance.

    Returns, per stage, a (C,) array of
    Dis(f_I[s,c], f_D[s,c]) - Dis(f'_I[s,c], f'_D[s,c]).
    """
    dist = dist or DistanceConfig()
    check_stack_pair(f_i, f_d)
    check_stack_pair(f_i, fp_i, "pre vs post stacks")
    check_stack_pair(fp_i, fp_d, "post stacks")
    deltas = []
    for s in range(len(f_i.stages)):
        base = stage_channel_costs(f_i.stages[s], f_d.stages[s], dist.per_channel_metric)
        post = stage_channel_costs(fp_i.stages[s], fp_d.stages[s], dist.per_channel_metric)
        deltas.append(base - post)
    return deltas


@dataclass
class InterventionOutcome:
    """Per-(stage, channel, intensity) delta statistics for one image pair."""

    intensity_grid: tuple
    delta_mean: list   # per stage, (K, C)
    delta_std: list    # per stage, (K, C)
    baseline_dist: list  # per stage, (C,)
    spec_hash: str = ""

    def channel_counts(self):
        return tuple(int(b.shape[0]) for b in self.baseline_dist)


def sweep(f_i, f_d, spec: InterventionSpec, dist: DistanceConfig | None = None):
    """Measure the invariance statistic over the whole intensity grid.

    delta_mean/delta_std aggregate draws_per_intensity independent draws per
    level; intensity 0 is exactly zero by construction.
    """
    dist = dist or DistanceConfig()
    check_stack_pair(f_i, f_d)
    n_stages = len(f_i.stages)
    k_levels = len(spec.intensity_grid)
    baselines = [stage_channel_costs(f_i.stages[s], f_d.stages[s], dist.per_channel_metric)
                 for s in range(n_stages)]
    counts = [b.shape[0] for b in baselines]
    delta_mean = [np.zeros((k_levels, c)) for c in counts]
    delta_std = [np.zeros((k_levels, c)) for c in counts]
    for k, level in enumerate(spec.intensity_grid):
        if level == 0.0:
            continue
        per_draw = [np.empty((spec.draws_per_intensity, c)) for c in counts]
        for d in range(spec.draws_per_intensity):
            fp_i = apply_intervention(f_i, spec, k, d)
            fp_d = apply_intervention(f_d, spec, k, d)
            deltas = channel_delta(f_i, f_d, fp_i, fp_d, dist)
            for s in range(n_stages):
                per_draw[s][d] = deltas[s]
        for s in range(n_stages):
            delta_mean[s][k] = per_draw[s].mean(axis=0)
            delta_std[s][k] = per_draw[s].std(axis=0)
    return InterventionOutcome(
        intensity_grid=tuple(spec.intensity_grid),
        delta_mean=delta_mean,
        delta_std=delta_std,
        baseline_dist=baselines,
        spec_hash=spec.spec_hash(),
    )
