"""Optimal-transport feature distances.

Per-channel activations are treated as 1-D empirical distributions; the
sorted-sample coupling gives the exact Wasserstein distance there. The
causal transport cost weights each channel by its confounder-dictionary
entry and averages within stages before a stage-weighted sum.

``ot_oracle`` solves the small transportation LP exactly and exists to
cross-check the closed form; it is deliberately a separate code path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import (
    BackboneMismatch,
    EmptyCausalSet,
    EmptyDistribution,
    ShapeMismatch,
    WeightMismatch,
)
from .validation import as_samples, check_stack_pair

PER_CHANNEL_METRICS = ("wasserstein2", "wasserstein1", "mean_abs_diff")


@dataclass(frozen=True)
class EmpiricalDistribution:
    """A channel's flattened activations, optionally pre-sorted."""

    samples: np.ndarray
    sorted: bool = False

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64).ravel()
        if arr.size == 0:
            raise EmptyDistribution("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise EmptyDistribution("samples must be finite")
        object.__setattr__(self, "samples", arr)


@dataclass(frozen=True)
class DistanceConfig:
    """Which per-channel metric to use and how stages are weighted."""

    per_channel_metric: str = "wasserstein2"
    stage_weights: tuple | None = None  # None = uniform at use time

    def __post_init__(self):
        if self.per_channel_metric not in PER_CHANNEL_METRICS:
            raise ValueError(f"unknown metric {self.per_channel_metric!r}; "
                             f"choose from {PER_CHANNEL_METRICS}")
        if self.stage_weights is not None:
            w = tuple(float(v) for v in self.stage_weights)
            if any(v < 0 for v in w):
                raise ValueError("stage_weights must be non-negative")
            if abs(sum(w) - 1.0) > 1e-6:
                raise ValueError("stage_weights must sum to 1")
            object.__setattr__(self, "stage_weights", w)

    def weights_for(self, n_stages):
        if self.stage_weights is None:
            return np.full(n_stages, 1.0 / n_stages)
        if len(self.stage_weights) != n_stages:
            raise ShapeMismatch(
                f"stage_weights has {len(self.stage_weights)} entries for "
                f"{n_stages} stages")
        return np.asarray(self.stage_weights)


@dataclass
class TransportResult:
    per_stage_cost: list
    per_channel_cost: list  # per stage, (C,) array
    total: float
    skipped_stages: tuple = field(default_factory=tuple)

    def to_dict(self, include_channels=False):
        doc = {
            "total": self.total,
            "per_stage_cost": [float(c) for c in self.per_stage_cost],
            "skipped_stages": list(self.skipped_stages),
        }
        if include_channels:
            doc["per_channel_cost"] = [c.tolist() for c in self.per_channel_cost]
        return doc


def channel_wasserstein(x, y, order=2):
    """Exact Wasserstein-p distance between two 1-D empirical distributions.

    Equal sample counts use the sorted-sample formula; unequal counts
    integrate the quantile functions exactly over the union grid (the
    quantile coupling is optimal in 1-D for any uniform-weight sizes).
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    xs = np.sort(as_samples(x, "x"))
    ys = np.sort(as_samples(y, "y"))
    n, m = xs.size, ys.size
    if n == m:
        d = np.abs(xs - ys)
        return float(np.mean(d) if order == 1 else np.sqrt(np.mean(d * d)))
    # union of quantile breakpoints; both inverse CDFs are constant inside
    edges = np.union1d(np.arange(1, n) / n, np.arange(1, m) / m)
    edges = np.concatenate(([0.0], edges, [1.0]))
    widths = np.diff(edges)
    mids = (edges[:-1] + edges[1:]) / 2.0
    ix = np.minimum((mids * n).astype(np.int64), n - 1)
    iy = np.minimum((mids * m).astype(np.int64), m - 1)
    d = np.abs(xs[ix] - ys[iy])
    cost = float(np.sum(widths * (d if order == 1 else d * d)))
    return cost if order == 1 else float(np.sqrt(cost))


def mean_abs_diff(x, y):
    """Mean absolute elementwise difference between two aligned channels."""
    xa = as_samples(x, "x")
    ya = as_samples(y, "y")
    if xa.size != ya.size:
        raise ShapeMismatch("mean_abs_diff requires equal sample counts")
    return float(np.mean(np.abs(xa - ya)))


def stage_channel_costs(a, b, metric):
    """Per-channel distance between two (C, H, W) stage tensors -> (C,)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"stage shapes differ: {a.shape} vs {b.shape}")
    c = a.shape[0]
    x = a.reshape(c, -1).astype(np.float64)
    y = b.reshape(c, -1).astype(np.float64)
    if metric == "mean_abs_diff":
        return np.mean(np.abs(x - y), axis=1)
    xs = np.sort(x, axis=1)
    ys = np.sort(y, axis=1)
    d = np.abs(xs - ys)
    if metric == "wasserstein1":
        return np.mean(d, axis=1)
    return np.sqrt(np.mean(d * d, axis=1))


def ot_oracle(a, b, cost):
    """Exact minimal transport cost between two small weighted point sets.

    `a` and `b` are weight vectors (each summing to 1 within 1e-12) over at
    most 6 points per side; `cost[i, j]` is the ground cost. Solves the
    transportation LP directly.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    cost = np.asarray(cost, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptyDistribution("oracle sides must be non-empty")
    if a.size > 6 or b.size > 6:
        raise ValueError("ot_oracle is limited to 6 points per side")
    if np.any(a < 0) or np.any(b < 0):
        raise WeightMismatch("weights must be non-negative")
    if abs(a.sum() - 1.0) > 1e-12 or abs(b.sum() - 1.0) > 1e-12:
        raise WeightMismatch("each side's weights must sum to 1 within 1e-12")
    if cost.shape != (a.size, b.size):
        raise ShapeMismatch(f"cost matrix {cost.shape} does not match ({a.size}, {b.size})")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")

    n, m = a.size, b.size
    # equality constraints: row sums = a, column sums = b
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    res = optimize.linprog(cost.ravel(), A_eq=a_eq, b_eq=np.concatenate([a, b]),
                           bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def cot_distance(f_i, f_d, gamma, cfg: DistanceConfig | None = None):
    """Confounder-weighted transport cost between two feature stacks.

    Channels with zero causal weight contribute nothing and do not enter the
    stage mean's denominator; a stage with no causal channel is skipped with
    a warning, and it is an error if every stage is empty.
    """
    cfg = cfg or DistanceConfig()
    check_stack_pair(f_i, f_d)
    if gamma.backbone_id and f_i.backbone_id and gamma.backbone_id != f_i.backbone_id:
        raise BackboneMismatch(
            f"dictionary built for {gamma.backbone_id!r}, stacks from {f_i.backbone_id!r}")
    counts = tuple(int(s.shape[0]) for s in f_i.stages)
    if gamma.channel_counts() != counts:
        raise ShapeMismatch(
            f"dictionary channels {gamma.channel_counts()} != stacks {counts}")

    n_stages = len(f_i.stages)
    weights = cfg.weights_for(n_stages)
    per_channel = []
    per_stage = []
    skipped = []
    for s in range(n_stages):
        costs = stage_channel_costs(f_i.stages[s], f_d.stages[s], cfg.per_channel_metric)
        per_channel.append(costs)
        g = np.asarray(gamma.weights[s], dtype=np.float64)
        active = g > 0
        if not np.any(active):
            skipped.append(s)
            per_stage.append(0.0)
            continue
        per_stage.append(float(np.sum(g[active] * costs[active]) / active.sum()))
    if len(skipped) == n_stages:
        raise EmptyCausalSet("no stage has a channel with positive causal weight")
    if skipped:
        warnings.warn(f"stages {skipped} have no causal channels and were skipped",
                      RuntimeWarning, stacklevel=2)
    total = float(np.dot(weights, per_stage))
    return TransportResult(per_stage_cost=per_stage, per_channel_cost=per_channel,
                           total=total, skipped_stages=tuple(skipped))
