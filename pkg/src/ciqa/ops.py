"""Numpy kernels for the graph executor.

Covers the operator set emitted for VGG/ResNet/EfficientNet-style feature
extractors: Conv (incl. grouped/depthwise), Relu, Sigmoid, MaxPool,
AveragePool, GlobalAveragePool, BatchNormalization, Add, Mul, Identity,
Constant. All tensors are NCHW float32.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InferenceError, UnsupportedOp


def _pair(v, default):
    if v is None:
        return (default, default)
    v = tuple(int(x) for x in v)
    if len(v) == 1:
        return (v[0], v[0])
    return v[:2]


def _pads4(attrs):
    pads = attrs.get("pads")
    if pads is None:
        return (0, 0, 0, 0)
    pads = tuple(int(p) for p in pads)
    if len(pads) == 2:  # 1-D convention, not expected but harmless
        return (pads[0], pads[0], pads[1], pads[1])
    return pads  # (top, left, bottom, right)


def conv2d(x, w, b, attrs):
    """ONNX Conv on NCHW input. Supports strides, zero pads, dilation, groups."""
    if x.ndim != 4 or w.ndim != 4:
        raise InferenceError(f"Conv expects 4-D tensors, got {x.shape} and {w.shape}")
    sh, sw = _pair(attrs.get("strides"), 1)
    dh, dw = _pair(attrs.get("dilations"), 1)
    pt, pl, pb, pr = _pads4(attrs)
    groups = int(attrs.get("group", 1))
    n, cin, h, wdt = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin_g * groups != cin or cout % groups:
        raise InferenceError(
            f"Conv channel mismatch: input {cin}, weight {w.shape}, groups {groups}")

    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x
    kh_eff = (kh - 1) * dh + 1
    kw_eff = (kw - 1) * dw + 1
    ho = (xp.shape[2] - kh_eff) // sh + 1
    wo = (xp.shape[3] - kw_eff) // sw + 1
    if ho <= 0 or wo <= 0:
        raise InferenceError(f"Conv output empty for input {x.shape} kernel {w.shape}")

    # windows: (N, C, ho, wo, kh, kw) view into the padded input
    win = sliding_window_view(xp, (kh_eff, kw_eff), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]
    if dh > 1 or dw > 1:
        win = win[..., ::dh, ::dw]
    win = win[:, :, :ho, :wo]

    if groups == cin and cin_g == 1 and cout == cin:  # depthwise
        out = np.einsum("nchwij,cij->nchw", win, w[:, 0], optimize=True)
    elif groups == 1:
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
        out = cols @ w.reshape(cout, -1).T
        out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    else:
        cg_in = cin // groups
        cg_out = cout // groups
        pieces = []
        for g in range(groups):
            wing = win[:, g * cg_in:(g + 1) * cg_in]
            cols = wing.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cg_in * kh * kw)
            og = cols @ w[g * cg_out:(g + 1) * cg_out].reshape(cg_out, -1).T
            pieces.append(og.reshape(n, ho, wo, cg_out))
        out = np.concatenate(pieces, axis=3).transpose(0, 3, 1, 2)

    out = np.ascontiguousarray(out, dtype=np.float32)
    if b is not None:
        out += b.astype(np.float32).reshape(1, -1, 1, 1)
    return out


def _pool2d(x, attrs, reduce_fn, pad_value):
    kh, kw = _pair(attrs.get("kernel_shape"), 1)
    sh, sw = _pair(attrs.get("strides"), 1)
    pt, pl, pb, pr = _pads4(attrs)
    ceil_mode = int(attrs.get("ceil_mode", 0))
    n, c, h, w = x.shape
    if ceil_mode:
        # extend bottom/right padding so the last partial window is included
        ho = -(-(h + pt + pb - kh) // sh) + 1
        wo = -(-(w + pl + pr - kw) // sw) + 1
        need_h = (ho - 1) * sh + kh - (h + pt + pb)
        need_w = (wo - 1) * sw + kw - (w + pl + pr)
        pb += max(0, need_h)
        pr += max(0, need_w)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=pad_value)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return np.ascontiguousarray(reduce_fn(win), dtype=np.float32)


def maxpool2d(x, attrs):
    return _pool2d(x, attrs, lambda w: w.max(axis=(-2, -1)), -np.inf)


def avgpool2d(x, attrs):
    # count_include_pad=1 semantics; torchvision stages we target never pad here
    return _pool2d(x, attrs, lambda w: w.mean(axis=(-2, -1)), 0.0)


def batchnorm(x, scale, bias, mean, var, attrs):
    eps = float(attrs.get("epsilon", 1e-5))
    inv = (scale / np.sqrt(var + eps)).astype(np.float32)
    shift = (bias - mean * inv).astype(np.float32)
    return x * inv.reshape(1, -1, 1, 1) + shift.reshape(1, -1, 1, 1)


def global_average_pool(x):
    return x.mean(axis=(2, 3), keepdims=True, dtype=np.float32)


def sigmoid(x):
    # split positive/negative for stability
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def execute(nodes, tensors, wanted):
    """Run nodes (topological order) until every name in `wanted` is computed.

    `tensors` maps name -> ndarray and is mutated; intermediates are dropped
    once their last consumer ran. Returns {name: ndarray} for `wanted`.
    """
    wanted = list(wanted)
    remaining_uses = {}
    for node in nodes:
        for name in node.inputs:
            remaining_uses[name] = remaining_uses.get(name, 0) + 1
    for name in wanted:
        remaining_uses[name] = remaining_uses.get(name, 0) + 1

    outputs = {}
    pending = set(wanted)
    for node in nodes:
        if not pending:
            break
        try:
            _run_node(node, tensors)
        except (UnsupportedOp, InferenceError):
            raise
        except Exception as exc:
            raise InferenceError(f"node {node.name or node.op_type}: {exc}") from exc
        for name in node.outputs:
            if name in pending:
                outputs[name] = tensors[name]
                pending.discard(name)
        for name in node.inputs:
            remaining_uses[name] -= 1
            if remaining_uses[name] == 0 and name in tensors and name not in outputs:
                del tensors[name]
    if pending:
        raise InferenceError(f"graph never produced outputs: {sorted(pending)}")
    return outputs


def _run_node(node, tensors):
    op = node.op_type
    ins = [tensors[name] if name else None for name in node.inputs]
    if op == "Conv":
        x, w = ins[0], ins[1]
        b = ins[2] if len(ins) > 2 else None
        out = conv2d(x, w, b, node.attrs)
    elif op == "Relu":
        out = np.maximum(ins[0], np.float32(0.0))
    elif op == "Sigmoid":
        out = sigmoid(ins[0])
    elif op == "MaxPool":
        out = maxpool2d(ins[0], node.attrs)
    elif op == "AveragePool":
        out = avgpool2d(ins[0], node.attrs)
    elif op == "GlobalAveragePool":
        out = global_average_pool(ins[0])
    elif op == "BatchNormalization":
        out = batchnorm(ins[0], ins[1], ins[2], ins[3], ins[4], node.attrs)
    elif op == "Add":
        out = (ins[0] + ins[1]).astype(np.float32, copy=False)
    elif op == "Mul":
        out = (ins[0] * ins[1]).astype(np.float32, copy=False)
    elif op == "Identity":
        out = ins[0]
    elif op == "Constant":
        out = node.attrs.get("value")
        if out is None:
            raise InferenceError("Constant node without value attribute")
    else:
        raise UnsupportedOp(f"operator {op!r} is not supported by this executor")
    tensors[node.outputs[0]] = out
