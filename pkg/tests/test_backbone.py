import io
import json

import numpy as np
import pytest
from PIL import Image

from ciqa import BackboneSpec, extract_features, load_backbone, preprocess
from ciqa.backbone import ImageTensor, extract_features_for_bytes
from ciqa.errors import (
    DecodeError,
    GraphParseError,
    ImageTooSmall,
    UnknownStageTap,
)

from conftest import BACKBONE_NAMES, fixture_paths, golden_index


def png_bytes(arr):
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def simple_spec(**overrides):
    kw = dict(id="tiny_vgg", stage_taps=("stage1", "stage2"),
              input_norm_mean=(0.2, 0.4, 0.6), input_norm_std=(0.5, 0.5, 0.5))
    kw.update(overrides)
    return BackboneSpec(**kw)


class TestBackboneSpec:
    def test_roundtrip(self, tmp_path):
        spec = simple_spec()
        spec.to_json(tmp_path / "s.json")
        assert BackboneSpec.from_json(tmp_path / "s.json") == spec

    def test_empty_taps_rejected(self):
        with pytest.raises(ValueError):
            simple_spec(stage_taps=())

    def test_duplicate_taps_rejected(self):
        with pytest.raises(ValueError):
            simple_spec(stage_taps=("a", "a"))

    def test_nonpositive_std_rejected(self):
        with pytest.raises(ValueError):
            simple_spec(input_norm_std=(0.5, 0.0, 0.5))


class TestPreprocess:
    def test_solid_image_at_mean_gives_zero_tensor(self):
        spec = simple_spec()
        arr = np.empty((40, 40, 3), dtype=np.uint8)
        arr[:, :, 0] = 51   # 0.2 * 255
        arr[:, :, 1] = 102  # 0.4 * 255
        arr[:, :, 2] = 153  # 0.6 * 255
        tensor = preprocess(png_bytes(arr), spec)
        assert np.allclose(tensor.data, 0.0, atol=1e-6)

    def test_too_small_image_rejected(self):
        arr = np.zeros((8, 8, 3), dtype=np.uint8)
        with pytest.raises(ImageTooSmall):
            preprocess(png_bytes(arr), simple_spec())

    def test_shape_bookkeeping(self):
        arr = np.zeros((48, 64, 3), dtype=np.uint8)  # H=48, W=64
        tensor = preprocess(png_bytes(arr), simple_spec())
        assert tensor.data.shape == (3, 48, 64)
        assert tensor.source_dims == (48, 64)

    def test_garbage_bytes_rejected(self):
        with pytest.raises(DecodeError):
            preprocess(b"definitely not an image", simple_spec())

    def test_bmp_and_jpeg_supported(self):
        arr = (np.linspace(0, 255, 48 * 48 * 3).reshape(48, 48, 3)).astype(np.uint8)
        for fmt in ("BMP", "JPEG"):
            buf = io.BytesIO()
            Image.fromarray(arr).save(buf, format=fmt)
            tensor = preprocess(buf.getvalue(), simple_spec())
            assert tensor.data.shape == (3, 48, 48)


class TestLoadBackbone:
    def test_taps_roundtrip(self):
        graph, spec_path = fixture_paths("tiny_vgg")
        spec = BackboneSpec.from_json(spec_path)
        handle = load_backbone(graph, spec)
        assert handle.list_stages() == spec.stage_taps
        assert len(handle.list_stages()) == 5

    def test_unknown_tap_is_named(self):
        graph, _ = fixture_paths("tiny_vgg")
        spec = simple_spec(stage_taps=("stage1", "relu9_9"))
        with pytest.raises(UnknownStageTap, match="relu9_9"):
            load_backbone(graph, spec)

    def test_corrupt_file(self, tmp_path):
        bad = tmp_path / "bad.onnx"
        bad.write_bytes(b"\x00\x01corrupt")
        with pytest.raises(GraphParseError):
            load_backbone(bad, simple_spec())

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_backbone(tmp_path / "nope.onnx", simple_spec())


class TestExtractFeatures:
    def test_determinism(self, vgg_handle):
        rng = np.random.default_rng(0)
        img = ImageTensor(data=rng.normal(size=(3, 48, 48)).astype(np.float32),
                          source_dims=(48, 48))
        a = extract_features(vgg_handle, img)
        b = extract_features(vgg_handle, img)
        for sa, sb in zip(a.stages, b.stages):
            assert np.array_equal(sa, sb)

    def test_stage_shapes_follow_downsampling(self, vgg_handle):
        rng = np.random.default_rng(1)
        img = ImageTensor(data=rng.normal(size=(3, 64, 64)).astype(np.float32),
                          source_dims=(64, 64))
        stack = extract_features(vgg_handle, img)
        sides = [s.shape[1] for s in stack.stages]
        assert sides == [64, 32, 16, 8, 4]

    @pytest.mark.parametrize("name", BACKBONE_NAMES)
    def test_channel_counts_match_golden_dump(self, handles, name):
        gdir, index = golden_index(name)
        handle = handles[name]
        by_stage = {a["stage"]: a["shape"][0] for a in index["activations"]}
        inp = index["inputs"][0]
        x = np.frombuffer((gdir / inp["file"]).read_bytes(), dtype="<f4")
        x = x.reshape(inp["shape"]).copy()
        stack = extract_features(
            handle, ImageTensor(data=x, source_dims=tuple(inp["shape"][1:])))
        got = dict(zip(handle.spec.stage_taps, stack.channel_counts()))
        assert got == by_stage

    @pytest.mark.parametrize("name", BACKBONE_NAMES)
    def test_golden_activation_fidelity(self, handles, name):
        """Cross-runtime check against activations computed by the export tool."""
        gdir, index = golden_index(name)
        handle = handles[name]
        for i, inp in enumerate(index["inputs"]):
            x = np.frombuffer((gdir / inp["file"]).read_bytes(), dtype="<f4")
            x = x.reshape(inp["shape"]).copy()
            stack = extract_features(
                handle, ImageTensor(data=x, source_dims=tuple(inp["shape"][1:])))
            for act in index["activations"]:
                if act["input"] != i:
                    continue
                ref = np.frombuffer((gdir / act["file"]).read_bytes(), dtype="<f4")
                ref = ref.reshape(act["shape"])
                got = stack.stages[list(handle.spec.stage_taps).index(act["stage"])]
                assert got.shape == ref.shape
                assert np.abs(got - ref).max() <= 1e-4


class TestFeatureCache:
    def test_cache_roundtrip(self, vgg_handle, tmp_path, monkeypatch):
        monkeypatch.setenv("CIQA_CACHE_DIR", str(tmp_path / "cache"))
        arr = (np.linspace(0, 255, 48 * 48 * 3).reshape(48, 48, 3)).astype(np.uint8)
        data = png_bytes(arr)
        first = extract_features_for_bytes(vgg_handle, data)
        cached = extract_features_for_bytes(vgg_handle, data)
        for a, b in zip(first.stages, cached.stages):
            assert np.array_equal(a, b)
        entries = list((tmp_path / "cache").rglob("*.npz"))
        assert len(entries) == 1

    def test_cache_keyed_by_backbone(self, handles, tmp_path, monkeypatch):
        monkeypatch.setenv("CIQA_CACHE_DIR", str(tmp_path / "cache"))
        arr = np.zeros((48, 48, 3), dtype=np.uint8)
        data = png_bytes(arr)
        extract_features_for_bytes(handles["tiny_vgg"], data)
        extract_features_for_bytes(handles["tiny_resnet"], data)
        entries = list((tmp_path / "cache").rglob("*.npz"))
        assert len(entries) == 2
