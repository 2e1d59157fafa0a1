"""Backbone loading, image preprocessing, and feature extraction.

A backbone is an ONNX graph with a single input named ``input`` and one named
output per stage tap, described by a JSON sidecar (:class:`BackboneSpec`).
Features come back as a :class:`FeatureStack`: one ``C x H x W`` float32
tensor per tap, deterministic for a given graph and image.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import _onnx, ops
from .errors import (
    DecodeError,
    GraphParseError,
    ImageTooSmall,
    InferenceError,
    UnknownStageTap,
)

MIN_IMAGE_SIDE = 32


@dataclass(frozen=True)
class BackboneSpec:
    """Sidecar metadata describing how to talk to a backbone graph."""

    id: str
    stage_taps: tuple
    input_norm_mean: tuple
    input_norm_std: tuple
    expected_input_layout: str = "CHW:RGB"

    def __post_init__(self):
        object.__setattr__(self, "stage_taps", tuple(self.stage_taps))
        object.__setattr__(self, "input_norm_mean", tuple(float(v) for v in self.input_norm_mean))
        object.__setattr__(self, "input_norm_std", tuple(float(v) for v in self.input_norm_std))
        if not self.stage_taps:
            raise ValueError("stage_taps must be non-empty")
        if len(set(self.stage_taps)) != len(self.stage_taps):
            raise ValueError("stage_taps must be unique")
        if len(self.input_norm_mean) != 3 or len(self.input_norm_std) != 3:
            raise ValueError("input_norm_mean/std must have 3 entries")
        if any(s <= 0 for s in self.input_norm_std):
            raise ValueError("input_norm_std entries must be positive")

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        try:
            return cls(
                id=raw["id"],
                stage_taps=raw["stage_taps"],
                input_norm_mean=raw["input_norm_mean"],
                input_norm_std=raw["input_norm_std"],
                expected_input_layout=raw.get("expected_input_layout", "CHW:RGB"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphParseError(f"invalid backbone spec {path}: {exc}") from exc

    def to_json(self, path):
        doc = {
            "id": self.id,
            "stage_taps": list(self.stage_taps),
            "input_norm_mean": list(self.input_norm_mean),
            "input_norm_std": list(self.input_norm_std),
            "expected_input_layout": self.expected_input_layout,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class ImageTensor:
    """Normalized 3 x H x W float32 image plus its pixel dimensions."""

    data: np.ndarray
    source_dims: tuple  # (H, W)

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError(f"expected 3 x H x W tensor, got {self.data.shape}")
        if min(self.data.shape[1:]) < MIN_IMAGE_SIDE:
            raise ImageTooSmall(
                f"image {self.data.shape[2]}x{self.data.shape[1]} below "
                f"{MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image tensor contains non-finite values")


@dataclass
class FeatureStack:
    """Per-stage activation tensors of one image under one backbone."""

    backbone_id: str
    stages: list  # ordered list of (C, H, W) float32 arrays

    def channel_counts(self):
        return tuple(int(s.shape[0]) for s in self.stages)

    def copy(self):
        return FeatureStack(self.backbone_id, [s.copy() for s in self.stages])


class BackboneHandle:
    """Loaded graph ready for repeated inference. Immutable after load."""

    def __init__(self, spec: BackboneSpec, model: _onnx.OnnxModel):
        self.spec = spec
        self._nodes = tuple(model.graph.nodes)
        self._initializers = dict(model.graph.initializers)
        self._input_name = "input"
        self._graph_outputs = tuple(v.name for v in model.graph.outputs)

    def list_stages(self):
        return tuple(self.spec.stage_taps)

    def extract(self, img: ImageTensor) -> FeatureStack:
        return extract_features(self, img)


def load_backbone(path, spec: BackboneSpec) -> BackboneHandle:
    """Load an ONNX graph and bind the spec's stage taps to its outputs."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        model = _onnx.load_model(path)
    except GraphParseError:
        raise
    except OSError:
        raise
    except Exception as exc:
        raise GraphParseError(f"{path}: {exc}") from exc

    if model.opset_version is not None and model.opset_version < 13:
        raise GraphParseError(
            f"{path}: opset {model.opset_version} < 13 is not supported")
    graph_inputs = [v.name for v in model.graph.inputs
                    if v.name not in model.graph.initializers]
    if graph_inputs != ["input"]:
        raise GraphParseError(
            f"{path}: expected a single graph input named 'input', got {graph_inputs}")
    available = set(v.name for v in model.graph.outputs)
    for tap in spec.stage_taps:
        if tap not in available:
            raise UnknownStageTap(tap, sorted(available))
    return BackboneHandle(spec, model)


def preprocess(image_bytes: bytes, spec: BackboneSpec) -> ImageTensor:
    """Decode PNG/BMP/JPEG bytes and normalize to the backbone's input domain.

    Pixels are scaled to [0, 1] and normalized per channel as (x - mean)/std.
    No resizing or cropping is performed.
    """
    try:
        img = Image.open(io.BytesIO(image_bytes))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc
    if img.width < MIN_IMAGE_SIDE or img.height < MIN_IMAGE_SIDE:
        raise ImageTooSmall(
            f"image {img.width}x{img.height} below {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")
    rgb = img.convert("RGB")
    arr = np.asarray(rgb, dtype=np.float32) / np.float32(255.0)  # H x W x 3
    mean = np.asarray(spec.input_norm_mean, dtype=np.float32)
    std = np.asarray(spec.input_norm_std, dtype=np.float32)
    arr = (arr - mean) / std
    chw = np.ascontiguousarray(arr.transpose(2, 0, 1))
    return ImageTensor(data=chw, source_dims=(rgb.height, rgb.width))


def extract_features(handle: BackboneHandle, img: ImageTensor) -> FeatureStack:
    """Run the graph and collect the stage-tap activations for one image."""
    tensors = dict(handle._initializers)
    tensors[handle._input_name] = img.data[np.newaxis].astype(np.float32, copy=False)
    try:
        outs = ops.execute(handle._nodes, tensors, handle.spec.stage_taps)
    except InferenceError:
        raise
    except Exception as exc:
        raise InferenceError(str(exc)) from exc
    stages = []
    for tap in handle.spec.stage_taps:
        t = outs[tap]
        if t.ndim != 4 or t.shape[0] != 1:
            raise InferenceError(f"tap {tap!r} produced shape {t.shape}, expected 1xCxHxW")
        stages.append(np.ascontiguousarray(t[0], dtype=np.float32))
    return FeatureStack(backbone_id=handle.spec.id, stages=stages)


# --- optional content-addressed feature cache --------------------------------

CACHE_ENV_VAR = "CIQA_CACHE_DIR"


def image_digest(image_bytes: bytes) -> str:
    return hashlib.sha256(image_bytes).hexdigest()


def extract_features_for_bytes(handle, image_bytes, cache_dir=None):
    """preprocess + extract, with an optional on-disk cache.

    Cache entries are keyed by image digest + backbone id + normalization, so
    a changed sidecar never reuses stale features. Enabled when `cache_dir`
    or the CIQA_CACHE_DIR environment variable is set.
    """
    cache_dir = cache_dir or os.environ.get(CACHE_ENV_VAR)
    key = None
    if cache_dir:
        spec = handle.spec
        norm = json.dumps([spec.input_norm_mean, spec.input_norm_std])
        key = hashlib.sha256(
            (image_digest(image_bytes) + "|" + spec.id + "|" + norm).encode()
        ).hexdigest()
        path = os.path.join(cache_dir, key[:2], key + ".npz")
        if os.path.exists(path):
            with np.load(path) as zf:
                return FeatureStack(
                    backbone_id=handle.spec.id,
                    stages=[zf[f"stage_{i}"] for i in range(len(handle.spec.stage_taps))])
    stack = extract_features(handle, preprocess(image_bytes, handle.spec))
    if cache_dir and key is not None:
        path = os.path.join(cache_dir, key[:2], key + ".npz")
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = f"{path}.{os.getpid()}.tmp.npz"
        np.savez(tmp, **{f"stage_{i}": s for i, s in enumerate(stack.stages)})
        os.replace(tmp, path)
    return stack
