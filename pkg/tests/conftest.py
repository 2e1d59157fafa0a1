import json
import warnings
from pathlib import Path

import numpy as np
import pytest

from ciqa import (
    BackboneSpec,
    InterventionSpec,
    ScreeningConfig,
    calibrate_stage_scales,
    extract_features_for_bytes,
    load_backbone,
    screen_channels,
    sweep,
)
from ciqa import datasets as ds

FIXTURES = Path(__file__).parent / "fixtures" / "backbones"
BACKBONE_NAMES = ("tiny_vgg", "tiny_resnet", "tiny_effnet")

# pinned screening setup shared by scoring/CLI/acceptance tests
SCREEN_TAU = 0.02
SCREEN_SEED = 0
SCREEN_DRAWS = 2


def fixture_paths(name):
    return FIXTURES / f"{name}.onnx", FIXTURES / f"{name}.spec.json"


def golden_index(name):
    gdir = FIXTURES / "goldens" / name
    return gdir, json.loads((gdir / "index.json").read_text())


@pytest.fixture(scope="session")
def handles():
    out = {}
    for name in BACKBONE_NAMES:
        graph, spec = fixture_paths(name)
        out[name] = load_backbone(graph, BackboneSpec.from_json(spec))
    return out


@pytest.fixture(scope="session")
def vgg_handle(handles):
    return handles["tiny_vgg"]


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """6 refs x {blur, noise, quantize} x 4 levels at 96x96, pinned seed."""
    root = tmp_path_factory.mktemp("desk")
    refs = ds.write_demo_references(root / "refs", n=6, size=(96, 96), seed=7)
    manifest = ds.synth_corpus(refs, ["gaussian_blur", "additive_noise", "quantize"],
                               4, root / "corpus", seed=7)
    manifest = ds.normalize_mos(manifest)
    csv_path = root / "manifest.csv"
    ds.save_csv_manifest(manifest, csv_path)
    return {"root": root, "refs": refs, "manifest": manifest, "csv": csv_path}


def screen_on(handle, records, tau=SCREEN_TAU, seed=SCREEN_SEED,
              draws=SCREEN_DRAWS, rule="all_intensities"):
    spec = InterventionSpec(master_seed=seed, draws_per_intensity=draws)
    stacks, pair_stacks = [], []
    for rec in records:
        f_ref = extract_features_for_bytes(handle, Path(rec.ref_path).read_bytes())
        f_dst = extract_features_for_bytes(handle, Path(rec.dist_path).read_bytes())
        pair_stacks.append((f_ref, f_dst))
        stacks.extend((f_ref, f_dst))
    spec = calibrate_stage_scales(spec, stacks)
    outcomes = [sweep(a, b, spec) for a, b in pair_stacks]
    cfg = ScreeningConfig(tau_rel=tau, rule=rule)
    return screen_channels(outcomes, cfg, backbone_id=handle.spec.id), spec


@pytest.fixture(scope="session")
def calibration_records(desk_corpus):
    # every 6th record: mixes refs, kinds, and levels
    return desk_corpus["manifest"].records[::6][:8]


@pytest.fixture(scope="session")
def vgg_dictionary(vgg_handle, calibration_records):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dictionary, _ = screen_on(vgg_handle, calibration_records)
    return dictionary


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def make_stack(backbone_id, arrays):
    from ciqa.backbone import FeatureStack
    return FeatureStack(backbone_id=backbone_id,
                        stages=[np.asarray(a, dtype=np.float32) for a in arrays])
