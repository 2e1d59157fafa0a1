"""Minimal ONNX model reader.

Parses just enough of the ONNX protobuf wire format (ModelProto and friends)
to load inference graphs for the numpy executor: nodes, attributes,
initializers, and graph inputs/outputs. Field numbers follow the ONNX IR
definition; unknown fields are skipped so files written by richer exporters
still load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphParseError

# TensorProto.DataType values we can materialize.
_DTYPES = {
    1: np.dtype("<f4"),   # FLOAT
    6: np.dtype("<i4"),   # INT32
    7: np.dtype("<i8"),   # INT64
    9: np.dtype("bool"),  # BOOL
    11: np.dtype("<f8"),  # DOUBLE
}


class _Reader:
    """Cursor over a length-delimited protobuf buffer."""

    __slots__ = ("buf", "pos", "end")

    def __init__(self, buf, pos=0, end=None):
        self.buf = buf
        self.pos = pos
        self.end = len(buf) if end is None else end

    def done(self):
        return self.pos >= self.end

    def varint(self):
        result = 0
        shift = 0
        while True:
            if self.pos >= self.end:
                raise GraphParseError("truncated varint")
            b = self.buf[self.pos]
            self.pos += 1
            result |= (b & 0x7F) << shift
            if not b & 0x80:
                return result
            shift += 7
            if shift > 70:
                raise GraphParseError("varint too long")

    def tag(self):
        key = self.varint()
        return key >> 3, key & 0x07

    def bytes_(self):
        n = self.varint()
        if self.pos + n > self.end:
            raise GraphParseError("truncated length-delimited field")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def sub(self):
        n = self.varint()
        if self.pos + n > self.end:
            raise GraphParseError("truncated submessage")
        r = _Reader(self.buf, self.pos, self.pos + n)
        self.pos += n
        return r

    def skip(self, wire_type):
        if wire_type == 0:
            self.varint()
        elif wire_type == 1:
            self.pos += 8
        elif wire_type == 2:
            self.bytes_()
        elif wire_type == 5:
            self.pos += 4
        else:
            raise GraphParseError(f"unsupported wire type {wire_type}")
        if self.pos > self.end:
            raise GraphParseError("skip ran past buffer end")


def _zigzag_ok(v):
    # ONNX ints are plain (non-zigzag) varints; negative int64 arrives as
    # a 10-byte two's-complement varint.
    return v - (1 << 64) if v >= (1 << 63) else v


def _packed_or_single(reader, wire_type, fixed_fmt, out):
    """Decode a repeated scalar field that may be packed or repeated-unpacked."""
    if wire_type == 2:
        raw = reader.bytes_()
        if fixed_fmt is None:
            r = _Reader(raw)
            while not r.done():
                out.append(_zigzag_ok(r.varint()))
        else:
            size = struct.calcsize(fixed_fmt)
            out.extend(v[0] for v in struct.iter_unpack(fixed_fmt, raw))
    elif wire_type == 0:
        out.append(_zigzag_ok(reader.varint()))
    elif wire_type == 5:
        out.append(struct.unpack("<f", reader.buf[reader.pos:reader.pos + 4])[0])
        reader.pos += 4
    elif wire_type == 1:
        out.append(struct.unpack("<d", reader.buf[reader.pos:reader.pos + 8])[0])
        reader.pos += 8
    else:
        raise GraphParseError("bad wire type for repeated scalar")


def _parse_tensor(reader):
    """TensorProto -> (name, ndarray)."""
    dims = []
    data_type = None
    raw = None
    float_data = []
    int_data = []
    double_data = []
    name = ""
    while not reader.done():
        f, wt = reader.tag()
        if f == 1:  # dims
            _packed_or_single(reader, wt, None, dims)
        elif f == 2:  # data_type
            data_type = reader.varint()
        elif f == 4:  # float_data
            _packed_or_single(reader, wt, "<f", float_data)
        elif f == 5:  # int32_data
            _packed_or_single(reader, wt, None, int_data)
        elif f == 7:  # int64_data
            _packed_or_single(reader, wt, None, int_data)
        elif f == 8:  # name
            name = reader.bytes_().decode("utf-8")
        elif f == 9:  # raw_data
            raw = reader.bytes_()
        elif f == 10:  # double_data
            _packed_or_single(reader, wt, "<d", double_data)
        else:
            reader.skip(wt)
    if data_type not in _DTYPES:
        raise GraphParseError(f"initializer {name!r}: unsupported data type {data_type}")
    dtype = _DTYPES[data_type]
    shape = tuple(int(d) for d in dims)
    if raw is not None:
        arr = np.frombuffer(raw, dtype=dtype)
    elif float_data:
        arr = np.asarray(float_data, dtype=dtype)
    elif double_data:
        arr = np.asarray(double_data, dtype=dtype)
    else:
        arr = np.asarray(int_data, dtype=dtype)
    try:
        arr = arr.reshape(shape)
    except ValueError as exc:
        raise GraphParseError(f"initializer {name!r}: payload does not match dims {shape}") from exc
    return name, arr


@dataclass
class OnnxNode:
    op_type: str
    inputs: tuple
    outputs: tuple
    attrs: dict
    name: str = ""


@dataclass
class ValueInfo:
    name: str
    elem_type: int | None = None
    shape: tuple | None = None  # ints, or None per dynamic dim


@dataclass
class OnnxGraph:
    name: str = ""
    nodes: list = field(default_factory=list)
    initializers: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)


@dataclass
class OnnxModel:
    ir_version: int = 0
    opset_version: int | None = None  # default-domain opset
    graph: OnnxGraph = field(default_factory=OnnxGraph)
    producer: str = ""


def _parse_attribute(reader):
    name = ""
    atype = None
    value_i = None
    value_f = None
    value_s = None
    value_t = None
    ints = []
    floats = []
    strings = []
    while not reader.done():
        f, wt = reader.tag()
        if f == 1:
            name = reader.bytes_().decode("utf-8")
        elif f == 2:  # f
            value_f = struct.unpack("<f", reader.buf[reader.pos:reader.pos + 4])[0]
            reader.pos += 4
        elif f == 3:  # i
            value_i = _zigzag_ok(reader.varint())
        elif f == 4:  # s
            value_s = reader.bytes_()
        elif f == 5:  # t
            value_t = _parse_tensor(reader.sub())[1]
        elif f == 7:  # floats
            _packed_or_single(reader, wt, "<f", floats)
        elif f == 8:  # ints
            _packed_or_single(reader, wt, None, ints)
        elif f == 9:  # strings
            strings.append(reader.bytes_())
        elif f == 20:  # type
            atype = reader.varint()
        else:
            reader.skip(wt)
    # AttributeType: FLOAT=1 INT=2 STRING=3 TENSOR=4 FLOATS=6 INTS=7 STRINGS=8
    if atype == 1:
        value = float(value_f)
    elif atype == 2:
        value = int(value_i)
    elif atype == 3:
        value = value_s.decode("utf-8")
    elif atype == 4:
        value = value_t
    elif atype == 6:
        value = tuple(float(v) for v in floats)
    elif atype == 7:
        value = tuple(int(v) for v in ints)
    elif atype == 8:
        value = tuple(s.decode("utf-8") for s in strings)
    else:
        # Tolerate writers that omit the type field by inferring from payload.
        if ints:
            value = tuple(int(v) for v in ints)
        elif floats:
            value = tuple(float(v) for v in floats)
        elif value_i is not None:
            value = int(value_i)
        elif value_f is not None:
            value = float(value_f)
        elif value_t is not None:
            value = value_t
        elif value_s is not None:
            value = value_s.decode("utf-8")
        else:
            raise GraphParseError(f"attribute {name!r}: undecodable type {atype}")
    return name, value


def _parse_node(reader):
    inputs = []
    outputs = []
    attrs = {}
    op_type = ""
    name = ""
    while not reader.done():
        f, wt = reader.tag()
        if f == 1:
            inputs.append(reader.bytes_().decode("utf-8"))
        elif f == 2:
            outputs.append(reader.bytes_().decode("utf-8"))
        elif f == 3:
            name = reader.bytes_().decode("utf-8")
        elif f == 4:
            op_type = reader.bytes_().decode("utf-8")
        elif f == 5:
            k, v = _parse_attribute(reader.sub())
            attrs[k] = v
        else:
            reader.skip(wt)
    return OnnxNode(op_type=op_type, inputs=tuple(inputs), outputs=tuple(outputs),
                    attrs=attrs, name=name)


def _parse_value_info(reader):
    name = ""
    elem_type = None
    shape = None
    while not reader.done():
        f, wt = reader.tag()
        if f == 1:
            name = reader.bytes_().decode("utf-8")
        elif f == 2:  # TypeProto
            tr = reader.sub()
            while not tr.done():
                tf, twt = tr.tag()
                if tf == 1:  # tensor_type
                    tt = tr.sub()
                    while not tt.done():
                        ttf, ttwt = tt.tag()
                        if ttf == 1:
                            elem_type = tt.varint()
                        elif ttf == 2:  # TensorShapeProto
                            dims = []
                            sr = tt.sub()
                            while not sr.done():
                                sf, swt = sr.tag()
                                if sf == 1:  # Dimension
                                    dr = sr.sub()
                                    dim = None
                                    while not dr.done():
                                        df, dwt = dr.tag()
                                        if df == 1:
                                            dim = dr.varint()
                                        else:
                                            dr.skip(dwt)
                                    dims.append(dim)
                                else:
                                    sr.skip(swt)
                            shape = tuple(dims)
                        else:
                            tt.skip(ttwt)
                else:
                    tr.skip(twt)
        else:
            reader.skip(wt)
    return ValueInfo(name=name, elem_type=elem_type, shape=shape)


def _parse_graph(reader):
    g = OnnxGraph()
    while not reader.done():
        f, wt = reader.tag()
        if f == 1:
            g.nodes.append(_parse_node(reader.sub()))
        elif f == 2:
            g.name = reader.bytes_().decode("utf-8")
        elif f == 5:
            name, arr = _parse_tensor(reader.sub())
            g.initializers[name] = arr
        elif f == 11:
            g.inputs.append(_parse_value_info(reader.sub()))
        elif f == 12:
            g.outputs.append(_parse_value_info(reader.sub()))
        else:
            reader.skip(wt)
    return g


def parse_model(data: bytes) -> OnnxModel:
    """Parse serialized ModelProto bytes into an OnnxModel."""
    model = OnnxModel()
    reader = _Reader(data)
    opsets = []
    try:
        while not reader.done():
            f, wt = reader.tag()
            if f == 1:
                model.ir_version = reader.varint()
            elif f == 2:
                model.producer = reader.bytes_().decode("utf-8", "replace")
            elif f == 7:
                model.graph = _parse_graph(reader.sub())
            elif f == 8:  # OperatorSetIdProto
                sr = reader.sub()
                domain, version = "", None
                while not sr.done():
                    sf, swt = sr.tag()
                    if sf == 1:
                        domain = sr.bytes_().decode("utf-8")
                    elif sf == 2:
                        version = sr.varint()
                    else:
                        sr.skip(swt)
                opsets.append((domain, version))
            else:
                reader.skip(wt)
    except GraphParseError:
        raise
    except Exception as exc:
        raise GraphParseError(f"malformed model protobuf: {exc}") from exc
    for domain, version in opsets:
        if domain in ("", "ai.onnx"):
            model.opset_version = version
    if not model.graph.nodes:
        raise GraphParseError("model has no graph nodes")
    return model


def load_model(path) -> OnnxModel:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_model(data)
