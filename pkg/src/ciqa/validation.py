"""Input validation helpers shared across the pipeline."""

from __future__ import annotations

import numpy as np

from .errors import EmptyDistribution, ShapeMismatch


def as_samples(x, name="samples"):
    """Coerce to a 1-D float64 array of finite samples."""
    arr = np.asarray(getattr(x, "samples", x), dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyDistribution(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise EmptyDistribution(f"{name} contains non-finite values")
    return arr


def check_stack_pair(a, b, what="feature stacks"):
    """Raise ShapeMismatch unless two FeatureStacks are shape-compatible."""
    if len(a.stages) != len(b.stages):
        raise ShapeMismatch(f"{what}: stage counts differ "
                            f"({len(a.stages)} vs {len(b.stages)})")
    for i, (sa, sb) in enumerate(zip(a.stages, b.stages)):
        if sa.shape != sb.shape:
            raise ShapeMismatch(f"{what}: stage {i} shapes differ "
                                f"({sa.shape} vs {sb.shape})")


def check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatch(f"{name} contains non-finite values")


def stage_channel_counts(stack):
    return tuple(int(s.shape[0]) for s in stack.stages)
