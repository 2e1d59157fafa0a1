"""Golden input/activation dumps for cross-runtime validation.

Format shared with the primary engine's fixtures: raw little-endian float32
binaries plus a JSON index. Activations are captured with forward hooks on
the original torch modules, so they are independent of the exported node
list; replaying them through another runtime validates the whole export.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch


def capture_activations(built, x):
    """Run the torch model on x (1x3xHxW tensor) and return {tap: ndarray}."""
    grabbed = {}
    hooks = []
    for tap, module in built.tap_modules.items():
        def make_hook(name):
            def hook(_module, _inputs, output):
                grabbed[name] = output.detach().cpu().numpy()
            return hook
        hooks.append(module.register_forward_hook(make_hook(tap)))
    try:
        with torch.no_grad():
            built.model(x)
    finally:
        for h in hooks:
            h.remove()
    missing = [t for t in built.taps if t not in grabbed]
    if missing:
        raise RuntimeError(f"taps never fired during forward pass: {missing}")
    return grabbed


def write_goldens(built, out_dir, n_samples, seed, side):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    index = {"backbone_id": built.name, "dtype": "float32",
             "inputs": [], "activations": []}
    for i in range(n_samples):
        x = rng.normal(0.0, 1.0, (1, 3, side, side)).astype(np.float32)
        fname = f"input_{i}.bin"
        (out_dir / fname).write_bytes(x[0].tobytes())
        index["inputs"].append({"file": fname, "shape": list(x.shape[1:])})
        acts = capture_activations(built, torch.from_numpy(x))
        for tap in built.taps:
            arr = np.ascontiguousarray(acts[tap][0], dtype=np.float32)
            afile = f"act_{i}_{tap}.bin"
            (out_dir / afile).write_bytes(arr.tobytes())
            index["activations"].append(
                {"input": i, "stage": tap, "file": afile, "shape": list(arr.shape)})
    (out_dir / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return index


def load_golden(golden_dir, entry):
    arr = np.frombuffer((Path(golden_dir) / entry["file"]).read_bytes(),
                        dtype="<f4")
    return arr.reshape(entry["shape"]).copy()
