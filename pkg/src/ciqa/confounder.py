"""Causal channel screening and the persisted confounder dictionary.

A channel earns weight 1 when its invariance statistic stays above a
baseline-relative threshold at every positive intensity (optionally a
majority of them); everything else gets 0. The complement dictionary holds
the residual, non-causal channel set used by the ablation modes.

File format (versioned binary container):
  magic "CIQA" | u32 version | u32 header_len | header JSON (utf-8) |
  float32 little-endian weight arrays, one per stage, concatenated.
The header carries backbone_id, the per-stage shape table, and provenance.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BackboneMismatch,
    DimMismatch,
    EmptyCalibrationSet,
    SchemaVersionMismatch,
)

MAGIC = b"CIQA"
SCHEMA_VERSION = 1

SCREENING_RULES = ("all_intensities", "majority")


@dataclass(frozen=True)
class ScreeningConfig:
    """Thresholding policy for turning intervention outcomes into weights."""

    tau_rel: float = 0.05
    rule: str = "all_intensities"
    min_baseline: float = 1e-8
    calibration_pairs: int | None = None

    def __post_init__(self):
        if not 0.0 < self.tau_rel < 1.0:
            raise ValueError("tau_rel must be in (0, 1)")
        if self.rule not in SCREENING_RULES:
            raise ValueError(f"rule must be one of {SCREENING_RULES}")
        if self.min_baseline <= 0:
            raise ValueError("min_baseline must be positive")

    def to_dict(self):
        return {
            "tau_rel": self.tau_rel,
            "rule": self.rule,
            "min_baseline": self.min_baseline,
            "calibration_pairs": self.calibration_pairs,
        }


@dataclass
class ConfounderDictionary:
    """Per-stage, per-channel causal weights in [0, 1] plus build provenance."""

    backbone_id: str
    weights: list  # per stage, (C,) float32 array
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float32) for w in self.weights]
        for w in self.weights:
            if w.ndim != 1:
                raise DimMismatch("weights must be one array of channels per stage")
            if np.any(w < 0) or np.any(w > 1):
                raise ValueError("weights must lie in [0, 1]")

    def channel_counts(self):
        return tuple(int(w.shape[0]) for w in self.weights)

    def n_causal(self):
        return sum(int(np.count_nonzero(w)) for w in self.weights)

    def __eq__(self, other):
        if not isinstance(other, ConfounderDictionary):
            return NotImplemented
        return (self.backbone_id == other.backbone_id
                and self.channel_counts() == other.channel_counts()
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and self.provenance == other.provenance)

    @classmethod
    def all_ones(cls, backbone_id, channel_counts, provenance=None):
        return cls(backbone_id=backbone_id,
                   weights=[np.ones(c, dtype=np.float32) for c in channel_counts],
                   provenance=provenance or {"mode": "all_ones"})


def _deterministic_timestamp():
    """ISO timestamp honoring SOURCE_DATE_EPOCH for reproducible builds."""
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return _dt.datetime.fromtimestamp(epoch, _dt.timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ")


def screen_channels(outcomes, cfg: ScreeningConfig,
                    backbone_id="", calibration_set_digest=None,
                    build_timestamp=None) -> ConfounderDictionary:
    """Aggregate outcomes over the calibration set and threshold each channel.

    A channel is causal (weight 1) when |mean delta| exceeds
    tau_rel * mean baseline at every positive intensity (rule
    "all_intensities") or at more than half of them ("majority"), and its
    baseline distance is at least min_baseline. A grid without positive
    intensities yields an all-zero dictionary: no evidence, not causal.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise EmptyCalibrationSet("screening needs at least one outcome")
    first = outcomes[0]
    counts = first.channel_counts()
    grid = first.intensity_grid
    spec_hash = first.spec_hash
    for o in outcomes[1:]:
        if o.channel_counts() != counts:
            raise DimMismatch(f"outcome channels {o.channel_counts()} != {counts}")
        if o.intensity_grid != grid:
            raise DimMismatch("outcomes disagree on the intensity grid")
        if o.spec_hash != spec_hash:
            raise DimMismatch("outcomes were produced by different intervention specs")

    positive = [k for k, g in enumerate(grid) if g > 0]
    weights = []
    for s, c in enumerate(counts):
        agg_delta = np.mean([o.delta_mean[s] for o in outcomes], axis=0)  # (K, C)
        agg_base = np.mean([o.baseline_dist[s] for o in outcomes], axis=0)  # (C,)
        if positive:
            above = np.abs(agg_delta[positive]) > cfg.tau_rel * agg_base[None, :]
            if cfg.rule == "all_intensities":
                causal = above.all(axis=0)
            else:
                causal = above.sum(axis=0) * 2 > len(positive)
        else:
            causal = np.zeros(c, dtype=bool)
        causal &= agg_base >= cfg.min_baseline
        weights.append(causal.astype(np.float32))

    if calibration_set_digest is None:
        h = hashlib.sha256()
        for o in outcomes:
            for s in range(len(counts)):
                h.update(np.ascontiguousarray(o.delta_mean[s]).tobytes())
                h.update(np.ascontiguousarray(o.baseline_dist[s]).tobytes())
        calibration_set_digest = h.hexdigest()[:16]

    cfg_doc = cfg.to_dict()
    if cfg_doc["calibration_pairs"] is None:
        cfg_doc["calibration_pairs"] = len(outcomes)
    provenance = {
        "spec_hash": spec_hash or "unspecified",
        "screening_config": cfg_doc,
        "calibration_set_digest": calibration_set_digest,
        "build_timestamp": build_timestamp or _deterministic_timestamp(),
    }
    return ConfounderDictionary(backbone_id=backbone_id, weights=weights,
                                provenance=provenance)


def complement(d: ConfounderDictionary) -> ConfounderDictionary:
    """Residual dictionary: weights' = 1 - weights, provenance mode-flagged."""
    prov = dict(d.provenance)
    prov["complement"] = not prov.get("complement", False)
    if not prov["complement"]:
        del prov["complement"]
    return ConfounderDictionary(
        backbone_id=d.backbone_id,
        weights=[(1.0 - w).astype(np.float32) for w in d.weights],
        provenance=prov,
    )


def save_dictionary(d: ConfounderDictionary, path):
    header = {
        "backbone_id": d.backbone_id,
        "shape_table": list(d.channel_counts()),
        "provenance": d.provenance,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(w, dtype="<f4").tobytes() for w in d.weights)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", SCHEMA_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_dictionary(path, expected_backbone=None, expected_channels=None):
    """Load and validate a dictionary file.

    Rejects wrong magic/version/truncation (SchemaVersionMismatch) and
    dictionaries built for a different backbone or channel layout
    (BackboneMismatch).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise SchemaVersionMismatch(f"{path}: not a confounder dictionary file")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: schema version {version}, "
                                    f"expected {SCHEMA_VERSION}")
    if len(blob) < 12 + header_len:
        raise SchemaVersionMismatch(f"{path}: truncated header")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
        shape_table = [int(c) for c in header["shape_table"]]
        backbone_id = header["backbone_id"]
        provenance = header["provenance"]
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise SchemaVersionMismatch(f"{path}: bad header: {exc}") from exc
    need = sum(shape_table) * 4
    body = blob[12 + header_len:]
    if len(body) != need:
        raise SchemaVersionMismatch(
            f"{path}: weight payload is {len(body)} bytes, expected {need}")
    weights = []
    off = 0
    for c in shape_table:
        weights.append(np.frombuffer(body, dtype="<f4", count=c, offset=off).copy())
        off += c * 4
    d = ConfounderDictionary(backbone_id=backbone_id, weights=weights,
                             provenance=provenance)
    if expected_backbone is not None and d.backbone_id != expected_backbone:
        raise BackboneMismatch(
            f"dictionary is for {d.backbone_id!r}, requested {expected_backbone!r}")
    if expected_channels is not None and d.channel_counts() != tuple(expected_channels):
        raise BackboneMismatch(
            f"dictionary channels {d.channel_counts()} != expected {tuple(expected_channels)}")
    return d
