"""Minimal ONNX protobuf writer.

Emits the subset of ModelProto needed for feature-extractor graphs: float32
initializers, Conv/Relu/Sigmoid/Mul/Add/MaxPool/BatchNormalization/
GlobalAveragePool/Identity nodes, one dynamic-spatial input named "input",
and named stage-tap outputs. Field numbers follow the ONNX IR definition.
"""

from __future__ import annotations

import struct

import numpy as np


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


def tensor_proto(name, arr):
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    body = b"".join(_f_varint(1, d) for d in arr.shape)
    body += _f_varint(2, 1)  # FLOAT
    body += _f_string(8, name)
    body += _f_bytes(9, arr.tobytes())
    return body


def attribute(name, value):
    body = _f_string(1, name)
    if isinstance(value, bool):
        raise TypeError("encode bools as ints explicitly")
    if isinstance(value, int):
        body += _f_varint(3, value) + _f_varint(20, 2)  # INT
    elif isinstance(value, float):
        body += _field(2, 5, struct.pack("<f", value)) + _f_varint(20, 1)  # FLOAT
    elif isinstance(value, (tuple, list)) and all(isinstance(v, int) for v in value):
        body += _f_bytes(8, b"".join(_varint(v) for v in value)) + _f_varint(20, 7)
    elif isinstance(value, np.ndarray):
        body += _f_bytes(5, tensor_proto("", value)) + _f_varint(20, 4)  # TENSOR
    else:
        raise TypeError(f"unsupported attribute {name}={value!r}")
    return body


def node_proto(op_type, inputs, outputs, name="", attrs=None):
    body = b"".join(_f_string(1, s) for s in inputs)
    body += b"".join(_f_string(2, s) for s in outputs)
    if name:
        body += _f_string(3, name)
    body += _f_string(4, op_type)
    for k, v in (attrs or {}).items():
        body += _f_bytes(5, attribute(k, v))
    return body


def value_info(name, shape):
    dims = b""
    for d in shape:
        dims += _f_bytes(1, _f_varint(1, d) if d is not None else _f_string(2, "dyn"))
    tensor_type = _f_varint(1, 1) + _f_bytes(2, dims)
    return _f_string(1, name) + _f_bytes(2, _f_bytes(1, tensor_type))


def serialize_model(nodes, initializers, graph_name, output_names,
                    producer="ciqa-export", opset=13, ir_version=8):
    """nodes: iterable of (op_type, inputs, outputs, attrs) tuples."""
    graph = b"".join(_f_bytes(1, node_proto(op, ins, outs, attrs=attrs))
                     for op, ins, outs, attrs in nodes)
    graph += _f_string(2, graph_name)
    for name, arr in initializers.items():
        graph += _f_bytes(5, tensor_proto(name, arr))
    graph += _f_bytes(11, value_info("input", (1, 3, None, None)))
    for name in output_names:
        graph += _f_bytes(12, value_info(name, (1, None, None, None)))
    model = _f_varint(1, ir_version)
    model += _f_string(2, producer)
    model += _f_bytes(7, graph)
    model += _f_bytes(8, _f_string(1, "") + _f_varint(2, opset))
    return model
