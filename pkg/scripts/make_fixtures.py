#!/usr/bin/env python3
"""Regenerate the committed test fixtures under tests/fixtures/.

Builds three tiny convnet backbones (vgg/resnet/effnet-flavored, seeded
random weights), serializes them as ONNX graphs with JSON sidecars, and dumps
golden input/activation tensors computed by an independent torch interpreter.
The tiny graphs cover the exact operator set of the full-size architectures.

Run from the repo root (requires torch, which the package itself does not):

    python3 scripts/make_fixtures.py --out tests/fixtures

Deterministic for a fixed --seed.
"""

from __future__ import annotations

import argparse
import json
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

# --- minimal ONNX protobuf writer ---------------------------------------------

def _varint(v):
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _field(num, wire_type, payload):
    return _varint((num << 3) | wire_type) + payload


def _f_varint(num, value):
    return _field(num, 0, _varint(value))


def _f_bytes(num, data):
    return _field(num, 2, _varint(len(data)) + data)


def _f_string(num, s):
    return _f_bytes(num, s.encode("utf-8"))


def _tensor_proto(name, arr):
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    body = b"".join(_f_varint(1, d) for d in arr.shape)
    body += _f_varint(2, 1)  # data_type FLOAT
    body += _f_string(8, name)
    body += _f_bytes(9, arr.tobytes())
    return body


def _attr(name, value):
    body = _f_string(1, name)
    if isinstance(value, bool):
        raise TypeError("ambiguous bool attribute")
    if isinstance(value, int):
        body += _f_varint(3, value) + _f_varint(20, 2)  # INT
    elif isinstance(value, float):
        body += _field(2, 5, struct.pack("<f", value)) + _f_varint(20, 1)  # FLOAT
    elif isinstance(value, (tuple, list)) and all(isinstance(v, int) for v in value):
        packed = b"".join(_varint(v) for v in value)
        body += _f_bytes(8, packed) + _f_varint(20, 7)  # INTS
    elif isinstance(value, np.ndarray):
        body += _f_bytes(5, _tensor_proto("", value)) + _f_varint(20, 4)  # TENSOR
    else:
        raise TypeError(f"unsupported attribute {name}={value!r}")
    return body


def _node(op_type, inputs, outputs, name="", attrs=None):
    body = b"".join(_f_string(1, s) for s in inputs)
    body += b"".join(_f_string(2, s) for s in outputs)
    if name:
        body += _f_string(3, name)
    body += _f_string(4, op_type)
    for k, v in (attrs or {}).items():
        body += _f_bytes(5, _attr(k, v))
    return body


def _value_info(name, shape):
    dims = b""
    for d in shape:
        if d is None:
            dim = _f_string(2, "dyn")
        else:
            dim = _f_varint(1, d)
        dims += _f_bytes(1, dim)
    tensor_type = _f_varint(1, 1) + _f_bytes(2, dims)  # elem_type FLOAT, shape
    type_proto = _f_bytes(1, tensor_type)
    return _f_string(1, name) + _f_bytes(2, type_proto)


def serialize_model(nodes, initializers, graph_name, output_shapes, opset=13):
    graph = b"".join(_f_bytes(1, n) for n in nodes)
    graph += _f_string(2, graph_name)
    for name, arr in initializers.items():
        graph += _f_bytes(5, _tensor_proto(name, arr))
    graph += _f_bytes(11, _value_info("input", (1, 3, None, None)))
    for name, shape in output_shapes.items():
        graph += _f_bytes(12, _value_info(name, shape))
    opset_body = _f_string(1, "") + _f_varint(2, opset)
    model = _f_varint(1, 8)  # ir_version
    model += _f_string(2, "ciqa-fixture-maker")
    model += _f_bytes(7, graph)
    model += _f_bytes(8, opset_body)
    return model


# --- tiny graph IR + torch interpreter ----------------------------------------

class GraphBuilder:
    def __init__(self, name):
        self.name = name
        self.nodes = []        # dicts: op, inputs, outputs, attrs
        self.inits = {}
        self.outputs = []      # tap names in order
        self._n = 0

    def fresh(self, hint):
        self._n += 1
        return f"{hint}_{self._n}"

    def init(self, hint, arr):
        name = self.fresh(hint)
        self.inits[name] = np.ascontiguousarray(arr, dtype=np.float32)
        return name

    def add(self, op, inputs, attrs=None, out=None):
        out = out or self.fresh(op.lower())
        self.nodes.append({"op": op, "inputs": list(inputs), "outputs": [out],
                           "attrs": attrs or {}})
        return out

    def conv(self, x, w, b=None, stride=1, pad=0, groups=1):
        wn = self.init("w", w)
        ins = [x, wn]
        if b is not None:
            ins.append(self.init("b", b))
        attrs = {"kernel_shape": (w.shape[2], w.shape[3]),
                 "strides": (stride, stride),
                 "pads": (pad, pad, pad, pad),
                 "dilations": (1, 1),
                 "group": groups}
        return self.add("Conv", ins, attrs)

    def bn(self, x, scale, bias, mean, var, eps=1e-5):
        return self.add("BatchNormalization",
                        [x, self.init("bn_s", scale), self.init("bn_b", bias),
                         self.init("bn_m", mean), self.init("bn_v", var)],
                        {"epsilon": float(eps)})

    def serialize(self):
        nodes = [_node(n["op"], n["inputs"], n["outputs"], attrs=n["attrs"])
                 for n in self.nodes]
        shapes = {name: (1, None, None, None) for name in self.outputs}
        return serialize_model(nodes, self.inits, self.name, shapes)


def torch_run(builder, x, wanted):
    """Independent reference execution of the graph via torch functional ops."""
    env = {"input": torch.from_numpy(x)}
    env.update({k: torch.from_numpy(v) for k, v in builder.inits.items()})
    for n in builder.nodes:
        op = n["op"]
        ins = [env[i] for i in n["inputs"]]
        a = n["attrs"]
        if op == "Conv":
            pads = a.get("pads", (0, 0, 0, 0))
            out = F.conv2d(ins[0], ins[1], ins[2] if len(ins) > 2 else None,
                           stride=a.get("strides", (1, 1)),
                           padding=(pads[0], pads[1]),
                           dilation=a.get("dilations", (1, 1)),
                           groups=a.get("group", 1))
        elif op == "Relu":
            out = F.relu(ins[0])
        elif op == "Sigmoid":
            out = torch.sigmoid(ins[0])
        elif op == "MaxPool":
            pads = a.get("pads", (0, 0, 0, 0))
            out = F.max_pool2d(ins[0], a["kernel_shape"], a.get("strides"),
                               padding=(pads[0], pads[1]),
                               ceil_mode=bool(a.get("ceil_mode", 0)))
        elif op == "BatchNormalization":
            out = F.batch_norm(ins[0], ins[3], ins[4], ins[1], ins[2],
                               training=False, eps=a.get("epsilon", 1e-5))
        elif op == "GlobalAveragePool":
            out = ins[0].mean(dim=(2, 3), keepdim=True)
        elif op == "Add":
            out = ins[0] + ins[1]
        elif op == "Mul":
            out = ins[0] * ins[1]
        elif op == "Identity":
            out = ins[0]
        else:
            raise ValueError(f"torch interpreter: unhandled op {op}")
        env[n["outputs"][0]] = out
    return {name: env[name].numpy() for name in wanted}


# --- typed convolution kernels --------------------------------------------------

def typed_conv_weights(rng, cin, cout, k, dc_in=(), frac=(0.55, 0.35, 0.10)):
    """Kernels with three channel populations: structure / smoothing / near-dead.

    Structure filters are zero-mean (shift-invariant responses); smoothing
    filters are positive averaging kernels concentrated on the smooth lineage
    `dc_in` of the input channels; near-dead filters barely respond at all.
    Returns (W, b, dc_out_indices).
    """
    n_s = int(round(cout * frac[0]))
    n_d = int(round(cout * frac[1]))
    n_x = cout - n_s - n_d
    W = np.zeros((cout, cin, k, k), dtype=np.float64)
    b = np.zeros(cout, dtype=np.float64)
    dc_out = []
    idx = 0
    for _ in range(n_s):
        f = rng.normal(0.0, 1.0, (cin, k, k))
        f -= f.mean()
        f /= np.sqrt((f ** 2).sum()) + 1e-9
        gain = float(np.exp(rng.normal(0.8, 0.3)))
        W[idx] = f * gain
        b[idx] = rng.uniform(-0.05, 0.15)
        idx += 1
    for _ in range(n_d):
        f = np.zeros((cin, k, k))
        sources = list(dc_in) if dc_in else list(range(cin))
        pick = rng.choice(sources, size=min(3, len(sources)), replace=False)
        for c in pick:
            f[c] = np.abs(rng.normal(1.0, 0.15, (k, k)))
        f /= f.sum()
        gain = float(np.exp(rng.normal(-0.8, 0.3)))
        W[idx] = f * gain
        b[idx] = rng.uniform(0.02, 0.12)
        dc_out.append(idx)
        idx += 1
    for _ in range(n_x):
        W[idx] = rng.normal(0.0, 1e-3, (cin, k, k))
        b[idx] = rng.uniform(0.005, 0.02)
        idx += 1
    # keep the layer's overall scale near one so activations stay well ranged;
    # only the relative gain between populations matters downstream
    norms = np.sqrt((W ** 2).sum(axis=(1, 2, 3)))
    live = norms > 1e-2
    if live.any():
        W /= norms[live].mean()
    return W.astype(np.float32), b.astype(np.float32), dc_out


def plain_conv_weights(rng, cin, cout, k, gain_sigma=0.5):
    W = rng.normal(0.0, 1.0, (cout, cin, k, k))
    W /= np.sqrt((W ** 2).sum(axis=(1, 2, 3), keepdims=True)) + 1e-9
    gains = np.exp(rng.normal(0.0, gain_sigma, (cout, 1, 1, 1)))
    b = rng.uniform(-0.05, 0.1, cout)
    return (W * gains).astype(np.float32), b.astype(np.float32)


def bn_params(rng, c):
    scale = rng.uniform(0.7, 1.3, c).astype(np.float32)
    bias = rng.normal(0.0, 0.1, c).astype(np.float32)
    mean = rng.normal(0.0, 0.2, c).astype(np.float32)
    var = rng.uniform(0.5, 1.5, c).astype(np.float32)
    return scale, bias, mean, var


# --- the three tiny architectures ------------------------------------------------

def build_tiny_vgg(seed):
    rng = np.random.default_rng(seed)
    g = GraphBuilder("tiny_vgg")
    widths = (8, 12, 16, 20, 24)
    x = "input"
    cin = 3
    dc_in = ()
    for s, cout in enumerate(widths, start=1):
        w1, b1 = plain_conv_weights(rng, cin, cout, 3)
        x = g.conv(x, w1, b1, pad=1)
        x = g.add("Relu", [x])
        w2, b2, dc_in = typed_conv_weights(rng, cout, cout, 3, dc_in=dc_in)
        x = g.conv(x, w2, b2, pad=1)
        x = g.add("Relu", [x], out=f"stage{s}")
        g.outputs.append(f"stage{s}")
        if s < len(widths):
            x = g.add("MaxPool", [f"stage{s}"],
                      {"kernel_shape": (2, 2), "strides": (2, 2)})
        cin = cout
    return g


def build_tiny_resnet(seed):
    rng = np.random.default_rng(seed)
    g = GraphBuilder("tiny_resnet")
    w, b = plain_conv_weights(rng, 3, 12, 7)
    x = g.conv("input", w, b, stride=2, pad=3)
    x = g.bn(x, *bn_params(rng, 12))
    x = g.add("Relu", [x])
    x = g.add("MaxPool", [x], {"kernel_shape": (3, 3), "strides": (2, 2),
                               "pads": (1, 1, 1, 1)})
    widths = (12, 16, 24, 32)
    cin = 12
    for s, cout in enumerate(widths, start=1):
        stride = 1 if s == 1 else 2
        identity = x
        w1, b1, _ = typed_conv_weights(rng, cin, cout, 3, frac=(0.6, 0.3, 0.1))
        y = g.conv(x, w1, b1, stride=stride, pad=1)
        y = g.bn(y, *bn_params(rng, cout))
        y = g.add("Relu", [y])
        w2, b2, _ = typed_conv_weights(rng, cout, cout, 3, frac=(0.6, 0.3, 0.1))
        y = g.conv(y, w2, b2, pad=1)
        y = g.bn(y, *bn_params(rng, cout))
        if stride != 1 or cin != cout:
            wd, bd = plain_conv_weights(rng, cin, cout, 1, gain_sigma=0.3)
            identity = g.conv(identity, wd, bd, stride=stride)
            identity = g.bn(identity, *bn_params(rng, cout))
        y = g.add("Add", [y, identity])
        x = g.add("Relu", [y], out=f"stage{s}")
        g.outputs.append(f"stage{s}")
        cin = cout
    return g


def build_tiny_effnet(seed):
    rng = np.random.default_rng(seed)
    g = GraphBuilder("tiny_effnet")

    def silu(x):
        s = g.add("Sigmoid", [x])
        return g.add("Mul", [x, s])

    w, b = plain_conv_weights(rng, 3, 12, 3)
    x = g.conv("input", w, b, stride=2, pad=1)
    x = g.bn(x, *bn_params(rng, 12))
    x = silu(x)
    widths = (12, 16, 20, 24, 28)
    cin = 12
    for s, cout in enumerate(widths, start=1):
        stride = 1 if s == 1 else 2
        block_in = x
        # depthwise
        wd = rng.normal(0.0, 0.35, (cin, 1, 3, 3)).astype(np.float32)
        x = g.conv(x, wd, None, stride=stride, pad=1, groups=cin)
        x = g.bn(x, *bn_params(rng, cin))
        x = silu(x)
        # squeeze-excitation
        squeezed = max(2, cin // 4)
        pooled = g.add("GlobalAveragePool", [x])
        ws1, bs1 = plain_conv_weights(rng, cin, squeezed, 1, gain_sigma=0.2)
        se = g.conv(pooled, ws1, bs1)
        se = silu(se)
        ws2, bs2 = plain_conv_weights(rng, squeezed, cin, 1, gain_sigma=0.2)
        se = g.conv(se, ws2, bs2)
        se = g.add("Sigmoid", [se])
        x = g.add("Mul", [x, se])
        # project
        wp, bp, _ = typed_conv_weights(rng, cin, cout, 1, frac=(0.6, 0.3, 0.1))
        x = g.conv(x, wp, bp)
        x = g.bn(x, *bn_params(rng, cout))
        if stride == 1 and cin == cout:
            x = g.add("Add", [x, block_in])
        x = g.add("Identity", [x], out=f"stage{s}")
        g.outputs.append(f"stage{s}")
        cin = cout
    return g


# --- emission -------------------------------------------------------------------

SIDE = 48
NORM = {"input_norm_mean": [0.485, 0.456, 0.406],
        "input_norm_std": [0.229, 0.224, 0.225]}


def emit(builder, out_dir: Path, seed, n_goldens=2):
    out_dir.mkdir(parents=True, exist_ok=True)
    onnx_path = out_dir / f"{builder.name}.onnx"
    onnx_path.write_bytes(builder.serialize())
    sidecar = {
        "id": builder.name,
        "stage_taps": builder.outputs,
        "expected_input_layout": "CHW:RGB",
        **NORM,
    }
    (out_dir / f"{builder.name}.spec.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    golden_dir = out_dir / "goldens" / builder.name
    golden_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed + 1000)
    index = {"backbone_id": builder.name, "dtype": "float32",
             "inputs": [], "activations": []}
    for i in range(n_goldens):
        x = rng.normal(0.0, 1.0, (1, 3, SIDE, SIDE)).astype(np.float32)
        fname = f"input_{i}.bin"
        (golden_dir / fname).write_bytes(x[0].tobytes())
        index["inputs"].append({"file": fname, "shape": list(x.shape[1:])})
        acts = torch_run(builder, x, builder.outputs)
        for tap in builder.outputs:
            a = np.ascontiguousarray(acts[tap][0], dtype=np.float32)
            afile = f"act_{i}_{tap}.bin"
            (golden_dir / afile).write_bytes(a.tobytes())
            index["activations"].append(
                {"input": i, "stage": tap, "file": afile, "shape": list(a.shape)})
    (golden_dir / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {onnx_path} ({onnx_path.stat().st_size} bytes) "
          f"+ {len(index['activations'])} golden activations")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tests/fixtures/backbones")
    ap.add_argument("--seed", type=int, default=20240811)
    args = ap.parse_args()
    torch.manual_seed(args.seed)
    out = Path(args.out)
    emit(build_tiny_vgg(args.seed), out, args.seed)
    emit(build_tiny_resnet(args.seed + 1), out, args.seed + 1)
    emit(build_tiny_effnet(args.seed + 2), out, args.seed + 2)


if __name__ == "__main__":
    main()
