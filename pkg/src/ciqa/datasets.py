"""Dataset manifests, MOS normalization, and the synthetic desk corpus.

The interchange format is a UTF-8 CSV with header ``ref,dist,mos[,tag]``.
Manifest-level metadata (name, raw MOS range, polarity) lives in an optional
JSON sidecar ``<manifest>.meta.json`` so a save/load round trip preserves
everything. TID-style ``mos_with_names`` files are parsed natively; other
databases are converted to CSV (recipes in the README).
"""

from __future__ import annotations

import csv
import json
import os
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DegenerateRange, EmptyManifest, MissingReferenceImage, ParseError

SYNTH_KINDS = ("gaussian_blur", "additive_noise", "quantize")


@dataclass(frozen=True)
class PairRecord:
    ref_path: str
    dist_path: str
    mos_raw: float
    mos_norm: float | None = None
    distortion_tag: str | None = None


@dataclass
class DatasetManifest:
    name: str
    records: list
    mos_range_raw: tuple  # (min, max)
    higher_better: bool = True

    def __post_init__(self):
        if not self.records:
            raise EmptyManifest(f"manifest {self.name!r} has no records")
        lo, hi = self.mos_range_raw
        if not lo < hi:
            raise DegenerateRange(f"mos range ({lo}, {hi}) is degenerate")

    def __len__(self):
        return len(self.records)


def load_csv_manifest(path, name=None, mos_range=None, higher_better=None):
    """Load ``ref,dist,mos[,tag]`` rows; metadata from args or the sidecar."""
    meta = {}
    sidecar = str(path) + ".meta.json"
    if os.path.exists(sidecar):
        with open(sidecar, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyManifest(f"{path} is empty")
        cols = [h.strip().lower() for h in header]
        if cols[:3] != ["ref", "dist", "mos"]:
            raise ParseError(f"expected header ref,dist,mos[,tag], got {header}", line=1)
        has_tag = len(cols) > 3 and cols[3] == "tag"
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise ParseError(f"expected >= 3 columns, got {len(row)}", line=lineno)
            ref, dist = row[0].strip(), row[1].strip()
            if not ref or not dist:
                raise ParseError("empty ref or dist path", line=lineno)
            try:
                mos = float(row[2])
            except ValueError:
                raise ParseError(f"mos {row[2]!r} is not a number", line=lineno)
            tag = row[3].strip() if has_tag and len(row) > 3 and row[3].strip() else None
            records.append(PairRecord(ref_path=ref, dist_path=dist, mos_raw=mos,
                                      distortion_tag=tag))
    if not records:
        raise EmptyManifest(f"{path} has a header but no records")
    raw = [r.mos_raw for r in records]
    rng = mos_range or (tuple(meta["mos_range_raw"]) if "mos_range_raw" in meta
                        else (min(raw), max(raw)))
    hb = higher_better if higher_better is not None else meta.get("higher_better", True)
    return DatasetManifest(
        name=name or meta.get("name") or Path(path).stem,
        records=records, mos_range_raw=tuple(rng), higher_better=hb)


def save_csv_manifest(manifest: DatasetManifest, path):
    """Write the CSV plus the metadata sidecar; round-trips all fields."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ref", "dist", "mos", "tag"])
        for r in manifest.records:
            writer.writerow([r.ref_path, r.dist_path, repr(r.mos_raw),
                             r.distortion_tag or ""])
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump({
            "name": manifest.name,
            "mos_range_raw": list(manifest.mos_range_raw),
            "higher_better": manifest.higher_better,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")


def parse_tid_mos(mos_file, image_root, name=None):
    """Parse a TID2008/TID2013 ``mos_with_names`` file.

    Each line is ``<score> <distorted_name>``; the reference is inferred from
    the distorted filename's leading image id (``i01_05_4.bmp`` -> ``i01.bmp``)
    and must exist under image_root (case variants tolerated).
    """
    image_root = Path(image_root)
    records = []
    with open(mos_file, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected '<score> <name>', got {line!r}", line=lineno)
            try:
                score = float(parts[0])
            except ValueError:
                raise ParseError(f"score {parts[0]!r} is not a number", line=lineno)
            dist_name = parts[1]
            stem = dist_name.split("_")[0]
            if not stem or "." not in dist_name:
                raise ParseError(f"cannot infer reference from {dist_name!r}", line=lineno)
            ext = dist_name[dist_name.rfind("."):]
            ref = _find_reference(image_root, stem + ext)
            if ref is None:
                raise MissingReferenceImage(
                    f"no reference image {stem + ext!r} under {image_root}")
            records.append(PairRecord(
                ref_path=str(ref),
                dist_path=str(image_root / "distorted_images" / dist_name
                              if (image_root / "distorted_images").is_dir()
                              else image_root / dist_name),
                mos_raw=score))
    if not records:
        raise EmptyManifest(f"{mos_file} contains no MOS lines")
    return DatasetManifest(
        name=name or "tid",
        records=records,
        mos_range_raw=(0.0, 9.0),
        higher_better=True,
    )


def _find_reference(root: Path, filename: str):
    candidates = [filename, filename.upper(), filename.lower(),
                  filename[:-4].upper() + filename[-4:].lower()]
    subdirs = [root, root / "reference_images"]
    for sub in subdirs:
        for cand in candidates:
            p = sub / cand
            if p.exists():
                return p
    return None


def normalize_mos(manifest: DatasetManifest) -> DatasetManifest:
    """Linear MOS normalization to [0, 1]; lower-better scales are flipped.

    Idempotent: mos_norm is always recomputed from mos_raw and the stored
    range, and record order is preserved.
    """
    lo, hi = manifest.mos_range_raw
    if not lo < hi:
        raise DegenerateRange(f"mos range ({lo}, {hi}) is degenerate")
    span = hi - lo
    records = []
    for r in manifest.records:
        x = (r.mos_raw - lo) / span
        if not manifest.higher_better:
            x = 1.0 - x
        records.append(replace(r, mos_norm=float(np.clip(x, 0.0, 1.0))))
    return DatasetManifest(name=manifest.name, records=records,
                           mos_range_raw=manifest.mos_range_raw,
                           higher_better=manifest.higher_better)


# --- synthetic desk corpus ----------------------------------------------------

def make_demo_references(n=10, size=(96, 96), seed=7):
    """Deterministic synthetic reference images (uint8 H x W x 3).

    Mixes smooth gradients, band-limited textures, and hard-edged shapes so
    distortions of every kind have something to destroy.
    """
    h, w = size
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    images = []
    for i in range(n):
        base = np.zeros((h, w, 3))
        for c in range(3):
            gx, gy = rng.uniform(-1, 1, 2)
            base[:, :, c] = 0.5 + 0.25 * (gx * (xx / w - 0.5) + gy * (yy / h - 0.5))
        for _ in range(3):
            fx, fy = rng.uniform(2, 9, 2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.05, 0.18)
            tex = amp * np.sin(2 * np.pi * (fx * xx / w + fy * yy / h) + phase)
            base += tex[:, :, None] * rng.uniform(0.3, 1.0, 3)
        for _ in range(4):
            cx, cy = rng.uniform(0.1, 0.9, 2) * (w, h)
            rw, rh = rng.uniform(0.08, 0.3, 2) * (w, h)
            color = rng.uniform(0, 1, 3)
            mask = (np.abs(xx - cx) < rw) & (np.abs(yy - cy) < rh)
            base[mask] = 0.6 * base[mask] + 0.4 * color
        grain = rng.normal(0, 0.02, (h, w, 3))
        img = np.clip(base + grain, 0, 1)
        images.append((img * 255).round().astype(np.uint8))
    return images


def write_demo_references(out_dir, n=10, size=(96, 96), seed=7):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(make_demo_references(n, size, seed)):
        p = out_dir / f"ref_{i:02d}.png"
        Image.fromarray(img).save(p)
        paths.append(str(p))
    return paths


def _distort(img, kind, level, rng):
    x = img.astype(np.float64)
    if kind == "gaussian_blur":
        sigma = 0.5 + 0.7 * level
        out = np.stack([ndimage.gaussian_filter(x[:, :, c], sigma) for c in range(3)],
                       axis=2)
    elif kind == "additive_noise":
        sigma = 7.0 * level
        out = x + rng.normal(0.0, sigma, x.shape)
    elif kind == "quantize":
        q = max(2, 24 >> level)
        out = np.floor(x / 256.0 * q) * (255.0 / (q - 1))
    else:
        raise ValueError(f"unknown distortion kind {kind!r}")
    return np.clip(out, 0, 255).round().astype(np.uint8)


def synth_corpus(ref_images, kinds, levels, out_dir, seed=0, name="synthetic"):
    """Generate the desk-scale distortion corpus and its manifest.

    Writes ``<out_dir>/<ref_stem>/<kind>_<level>.png`` for level 1..levels
    (level 0 is deliberately absent: the mildest level is already a visible
    distortion). Pseudo-MOS decreases monotonically with level. Deterministic
    for a given seed.
    """
    if not ref_images:
        raise EmptyManifest("need at least one reference image")
    if levels < 2:
        raise ValueError("levels must be >= 2")
    for kind in kinds:
        if kind not in SYNTH_KINDS:
            raise ValueError(f"unknown distortion kind {kind!r}")
    out_dir = Path(out_dir)
    records = []
    for ref_path in ref_images:
        ref_path = Path(ref_path)
        img = np.asarray(Image.open(ref_path).convert("RGB"))
        stem_dir = out_dir / ref_path.stem
        stem_dir.mkdir(parents=True, exist_ok=True)
        for kind in kinds:
            for level in range(1, levels + 1):
                stem_key = zlib.crc32(ref_path.stem.encode("utf-8")) & 0xFFFFFFFF
                rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(
                    seed, spawn_key=(stem_key, SYNTH_KINDS.index(kind), level))))
                dist = _distort(img, kind, level, rng)
                dist_path = stem_dir / f"{kind}_{level}.png"
                Image.fromarray(dist).save(dist_path)
                records.append(PairRecord(
                    ref_path=str(ref_path),
                    dist_path=str(dist_path),
                    mos_raw=float(levels - level + 1),
                    distortion_tag=kind,
                ))
    return DatasetManifest(name=name, records=records,
                           mos_range_raw=(0.0, float(levels + 1)),
                           higher_better=True)
