"""Walk torchvision backbones into ONNX node lists with named stage taps.

Each recipe knows which torchvision constructor to call, where the stage
taps sit in the module tree (for golden-dump forward hooks), and how to
flatten the module graph into the writer's node tuples. Models are always
exported in eval mode; batch norms become inference-mode nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torchvision.models as tvm
from torchvision.ops import SqueezeExcitation

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# stage taps: (vgg16) activations closing the five conv stages; (resnet50)
# the four residual-stage outputs; (efficientnet_b0) the five block groups
# that change spatial resolution.
VGG16_TAP_INDICES = (3, 8, 15, 22, 29)
EFFNET_TAP_INDICES = (1, 2, 3, 5, 7)

BACKBONES = ("vgg16", "resnet50", "efficientnet_b0")


class UnknownBackbone(ValueError):
    pass


class TapResolutionError(RuntimeError):
    pass


@dataclass
class ExportRecipe:
    backbone: str
    out_dir: str
    goldens: int = 2
    seed: int = 0
    weights: str = "pretrained"  # or "random"
    golden_size: int = 64

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise UnknownBackbone(
                f"backbone {self.backbone!r} not in {BACKBONES}")
        if self.goldens < 1:
            raise ValueError("golden sample count must be >= 1")
        if self.weights not in ("pretrained", "random"):
            raise ValueError("weights must be 'pretrained' or 'random'")
        if self.golden_size < 32:
            raise ValueError("golden_size must be >= 32")


class NodeBuilder:
    """Accumulates writer-format node tuples plus initializers."""

    def __init__(self):
        self.nodes = []
        self.inits = {}
        self._n = 0

    def fresh(self, hint):
        self._n += 1
        return f"{hint}_{self._n}"

    def init(self, hint, tensor):
        name = self.fresh(hint)
        self.inits[name] = np.ascontiguousarray(
            tensor.detach().cpu().numpy(), dtype=np.float32)
        return name

    def add(self, op, inputs, attrs=None, out=None):
        out = out or self.fresh(op.lower())
        self.nodes.append((op, tuple(inputs), (out,), dict(attrs or {})))
        return out

    def conv(self, x, module: nn.Conv2d, out=None):
        if module.dilation != (1, 1) and module.dilation != 1:
            raise TapResolutionError("dilated convolutions are not exported")
        ins = [x, self.init("weight", module.weight)]
        if module.bias is not None:
            ins.append(self.init("bias", module.bias))
        kh, kw = module.kernel_size
        sh, sw = module.stride
        ph, pw = module.padding
        return self.add("Conv", ins, {
            "kernel_shape": (kh, kw),
            "strides": (sh, sw),
            "pads": (ph, pw, ph, pw),
            "dilations": (1, 1),
            "group": int(module.groups),
        }, out=out)

    def bn(self, x, module: nn.BatchNorm2d, out=None):
        return self.add("BatchNormalization", [
            x,
            self.init("bn_scale", module.weight),
            self.init("bn_bias", module.bias),
            self.init("bn_mean", module.running_mean),
            self.init("bn_var", module.running_var),
        ], {"epsilon": float(module.eps)}, out=out)

    def relu(self, x, out=None):
        return self.add("Relu", [x], out=out)

    def silu(self, x, out=None):
        s = self.add("Sigmoid", [x])
        return self.add("Mul", [x, s], out=out)

    def maxpool(self, x, module: nn.MaxPool2d, out=None):
        k = module.kernel_size
        s = module.stride or k
        p = module.padding
        k = (k, k) if isinstance(k, int) else tuple(k)
        s = (s, s) if isinstance(s, int) else tuple(s)
        p = (p, p) if isinstance(p, int) else tuple(p)
        return self.add("MaxPool", [x], {
            "kernel_shape": k,
            "strides": s,
            "pads": (p[0], p[1], p[0], p[1]),
            "ceil_mode": int(module.ceil_mode),
        }, out=out)


def _cna(b, x, block, out=None):
    """Conv2dNormActivation: Conv + BN (+ SiLU when present)."""
    mods = list(block)
    x = b.conv(x, mods[0])
    x = b.bn(x, mods[1], out=None if len(mods) > 2 else out)
    if len(mods) > 2:
        if not isinstance(mods[2], nn.SiLU):
            raise TapResolutionError(f"unexpected activation {type(mods[2]).__name__}")
        x = b.silu(x, out=out)
    return x


def _squeeze_excitation(b, x, se):
    pooled = b.add("GlobalAveragePool", [x])
    s = b.conv(pooled, se.fc1)
    s = b.silu(s)
    s = b.conv(s, se.fc2)
    s = b.add("Sigmoid", [s])
    return b.add("Mul", [x, s])


def build_vgg16(model):
    b = NodeBuilder()
    x = "input"
    taps = []
    features = list(model.features)
    for idx, module in enumerate(features):
        tap = f"stage{len(taps) + 1}" if idx in VGG16_TAP_INDICES else None
        if isinstance(module, nn.Conv2d):
            x = b.conv(x, module)
        elif isinstance(module, nn.ReLU):
            x = b.relu(x, out=tap)
        elif isinstance(module, nn.MaxPool2d):
            x = b.maxpool(x, module)
        else:
            raise TapResolutionError(f"unexpected VGG module {type(module).__name__}")
        if tap:
            taps.append(tap)
        if idx == VGG16_TAP_INDICES[-1]:
            break
    if len(taps) != 5:
        raise TapResolutionError(f"resolved {len(taps)} of 5 VGG taps")
    return b, taps


def build_resnet50(model):
    b = NodeBuilder()
    x = b.conv("input", model.conv1)
    x = b.bn(x, model.bn1)
    x = b.relu(x)
    x = b.maxpool(x, model.maxpool)
    taps = []
    for s, layer in enumerate((model.layer1, model.layer2, model.layer3,
                               model.layer4), start=1):
        for i, block in enumerate(layer):
            identity = x
            y = b.conv(x, block.conv1)
            y = b.bn(y, block.bn1)
            y = b.relu(y)
            y = b.conv(y, block.conv2)
            y = b.bn(y, block.bn2)
            y = b.relu(y)
            y = b.conv(y, block.conv3)
            y = b.bn(y, block.bn3)
            if block.downsample is not None:
                identity = b.conv(identity, block.downsample[0])
                identity = b.bn(identity, block.downsample[1])
            y = b.add("Add", [y, identity])
            last = i == len(layer) - 1
            x = b.relu(y, out=f"stage{s}" if last else None)
        taps.append(f"stage{s}")
    return b, taps


def build_efficientnet_b0(model):
    b = NodeBuilder()
    features = list(model.features)
    x = _cna(b, "input", features[0])
    taps = []
    for idx in range(1, EFFNET_TAP_INDICES[-1] + 1):
        stage = features[idx]
        for block in stage:
            mods = list(block.block)
            block_in = x
            for m in mods:
                if isinstance(m, SqueezeExcitation):
                    x = _squeeze_excitation(b, x, m)
                else:
                    x = _cna(b, x, m)
            if block.use_res_connect:
                # stochastic depth is identity in eval mode
                x = b.add("Add", [x, block_in])
        if idx in EFFNET_TAP_INDICES:
            tap = f"stage{len(taps) + 1}"
            x = b.add("Identity", [x], out=tap)
            taps.append(tap)
    return b, taps


_BUILDERS = {
    "vgg16": (tvm.vgg16, tvm.VGG16_Weights.IMAGENET1K_V1, build_vgg16),
    "resnet50": (tvm.resnet50, tvm.ResNet50_Weights.IMAGENET1K_V2, build_resnet50),
    "efficientnet_b0": (tvm.efficientnet_b0,
                        tvm.EfficientNet_B0_Weights.IMAGENET1K_V1,
                        build_efficientnet_b0),
}


@dataclass
class BuiltBackbone:
    name: str
    model: nn.Module  # eval mode, the golden reference runtime
    builder: NodeBuilder
    taps: list
    tap_modules: dict = field(default_factory=dict)  # tap name -> module for hooks


def load_and_build(recipe: ExportRecipe) -> BuiltBackbone:
    ctor, weights_enum, build = _BUILDERS[recipe.backbone]
    if recipe.weights == "pretrained":
        try:
            model = ctor(weights=weights_enum)
        except Exception as exc:
            raise RuntimeError(
                f"could not fetch pretrained weights for {recipe.backbone} "
                f"({exc}); use --weights random in offline environments") from exc
    else:
        torch.manual_seed(recipe.seed)
        model = ctor(weights=None)
    model.eval()
    builder, taps = build(model)
    tap_modules = dict(zip(taps, _tap_modules(recipe.backbone, model)))
    return BuiltBackbone(name=recipe.backbone, model=model, builder=builder,
                         taps=taps, tap_modules=tap_modules)


def _tap_modules(name, model):
    if name == "vgg16":
        return [model.features[i] for i in VGG16_TAP_INDICES]
    if name == "resnet50":
        return [model.layer1, model.layer2, model.layer3, model.layer4]
    return [model.features[i] for i in EFFNET_TAP_INDICES]
