"""One-shot export CLI.

    ciqa-export export --backbone vgg16 --out DIR --goldens 2 --seed 0

writes DIR/{model}.onnx, DIR/{model}.spec.json, and DIR/goldens/{model}/*.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .goldens import write_goldens
from .onnx_writer import serialize_model
from .recipes import (
    BACKBONES,
    IMAGENET_MEAN,
    IMAGENET_STD,
    ExportRecipe,
    TapResolutionError,
    UnknownBackbone,
    load_and_build,
)


def export_backbone(recipe: ExportRecipe):
    built = load_and_build(recipe)
    out_dir = Path(recipe.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    graph_path = out_dir / f"{built.name}.onnx"
    graph_path.write_bytes(serialize_model(
        built.builder.nodes, built.builder.inits, built.name, built.taps))

    sidecar = {
        "id": built.name,
        "stage_taps": built.taps,
        "input_norm_mean": list(IMAGENET_MEAN),
        "input_norm_std": list(IMAGENET_STD),
        "expected_input_layout": "CHW:RGB",
    }
    spec_path = out_dir / f"{built.name}.spec.json"
    spec_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")

    golden_dir = out_dir / "goldens" / built.name
    index = write_goldens(built, golden_dir, recipe.goldens, recipe.seed + 1000,
                          recipe.golden_size)
    return {"graph": graph_path, "spec": spec_path, "goldens": golden_dir,
            "index": index, "built": built}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="ciqa-export")
    sub = parser.add_subparsers(dest="command", required=True)
    ex = sub.add_parser("export", help="export one backbone")
    ex.add_argument("--backbone", required=True, choices=BACKBONES)
    ex.add_argument("--out", required=True)
    ex.add_argument("--goldens", type=int, default=2)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--weights", choices=("pretrained", "random"),
                    default="pretrained",
                    help="'random' uses a seeded initialization (offline use)")
    ex.add_argument("--golden-size", type=int, default=64,
                    help="spatial size of golden inputs (>= 32)")
    args = parser.parse_args(argv)

    try:
        recipe = ExportRecipe(backbone=args.backbone, out_dir=args.out,
                              goldens=args.goldens, seed=args.seed,
                              weights=args.weights, golden_size=args.golden_size)
        result = export_backbone(recipe)
    except (UnknownBackbone, TapResolutionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    size = result["graph"].stat().st_size
    n_acts = len(result["index"]["activations"])
    print(f"wrote {result['graph']} ({size} bytes), {result['spec']}, "
          f"{n_acts} golden activations under {result['goldens']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
