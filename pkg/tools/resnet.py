"""CIFAR-style ResNets (depth 6n + 2) and their DAC rewrite.

v1 is the post-activation design (conv-BN-ReLU, ReLU after the addition);
v2 is the pre-activation design (BN-ReLU-conv inside the branch, BN-ReLU
before pooling). Shortcuts are identities; when a stage halves the grid
and doubles the width the shortcut subsamples and zero-pads channels.
Convolutions carry no bias (batch norm follows them).

The DAC rewrite replaces every 3x3 convolution by a DAC convolution
without output bias, drops the ReLUs in front of convolutions (the DAC
edges apply it), strips the shift of every batch norm whose output reaches
a DAC convolution only through ReLU and residual markers, and for v1 adds
a per-channel bias layer ahead of the last ReLU before pooling.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from config import RESNET_DEPTHS
from engine.executor import trace_shapes
from models.network import LayerSpec, NetworkSpec, TensorPayload
from models.settings import ResNetConfig
from utils.errors import SpecError
from utils.logger import get_logger

logger = get_logger(__name__)

DAC_KERNEL_SIZE = 3
PASS_THROUGH = ("relu", "residual_begin", "residual_end")


def _conv(name: str, m: int, n: int, stride: int, dac: bool) -> LayerSpec:
    return LayerSpec(
        kind="conv_dac" if dac else "conv_std",
        name=name,
        in_channels=m,
        out_channels=n,
        kernel_size=DAC_KERNEL_SIZE,
        stride=stride,
    )


def _bn(name: str, channels: int, shift: bool = True) -> LayerSpec:
    return LayerSpec(kind="batchnorm", name=name, channels=channels, use_shift=shift)


def _marker(kind: str, name: str) -> LayerSpec:
    return LayerSpec(kind=kind, name=name)


def _model_name(cfg: ResNetConfig) -> str:
    suffix = "-dac" if cfg.dac else ""
    return f"resnet{cfg.depth}-{cfg.version}{suffix}"


def build_resnet(cfg: ResNetConfig) -> NetworkSpec:
    """Parameter-free spec of a v1/v2 ResNet, DAC variant when ``cfg.dac``."""
    dac = cfg.dac
    width = cfg.base_width
    channels = cfg.input_shape[2]
    layers: List[LayerSpec] = [_conv("stem_conv", channels, width, 1, dac)]
    if cfg.version == "v1":
        layers.append(_bn("stem_bn", width, shift=not dac))
        if not dac:
            layers.append(_marker("relu", "stem_relu"))

    m = width
    stages = 3
    for stage in range(stages):
        n = width * 2**stage
        for block in range(cfg.n_blocks_per_stage):
            prefix = f"s{stage + 1}b{block + 1}"
            stride = 2 if stage > 0 and block == 0 else 1
            last_block = stage == stages - 1 and block == cfg.n_blocks_per_stage - 1
            layers.append(_marker("residual_begin", f"{prefix}_begin"))
            if cfg.version == "v1":
                layers.append(_conv(f"{prefix}_conv1", m, n, stride, dac))
                layers.append(_bn(f"{prefix}_bn1", n, shift=not dac))
                if not dac:
                    layers.append(_marker("relu", f"{prefix}_relu1"))
                layers.append(_conv(f"{prefix}_conv2", n, n, 1, dac))
                layers.append(_bn(f"{prefix}_bn2", n, shift=not dac))
                layers.append(_marker("residual_end", f"{prefix}_end"))
                if dac and last_block:
                    layers.append(LayerSpec(kind="bias", name="head_bias", channels=n))
                if not dac or last_block:
                    layers.append(_marker("relu", f"{prefix}_relu_out"))
            else:
                layers.append(_bn(f"{prefix}_bn1", m, shift=not dac))
                if not dac:
                    layers.append(_marker("relu", f"{prefix}_relu1"))
                layers.append(_conv(f"{prefix}_conv1", m, n, stride, dac))
                layers.append(_bn(f"{prefix}_bn2", n, shift=not dac))
                if not dac:
                    layers.append(_marker("relu", f"{prefix}_relu2"))
                layers.append(_conv(f"{prefix}_conv2", n, n, 1, dac))
                layers.append(_marker("residual_end", f"{prefix}_end"))
            m = n

    if cfg.version == "v2":
        layers.append(_bn("final_bn", m))
        layers.append(_marker("relu", "final_relu"))
    layers.append(_marker("gap", "gap"))
    layers.append(
        LayerSpec(kind="dense_std", name="head", in_features=m, out_features=cfg.num_classes, use_bias=True)
    )

    spec = NetworkSpec(
        name=_model_name(cfg),
        input_shape=list(cfg.input_shape),
        meta={
            "family": "resnet",
            "version": cfg.version,
            "n": cfg.n_blocks_per_stage,
            "depth": cfg.depth,
            "dac": dac,
            "num_classes": cfg.num_classes,
        },
        layers=layers,
    )
    trace_shapes(spec)
    return spec


def _next_compute(layers: List[LayerSpec], index: int) -> Optional[LayerSpec]:
    """First layer after ``index`` that is not a ReLU or residual marker."""
    for layer in layers[index + 1 :]:
        if layer.kind not in PASS_THROUGH:
            return layer
    return None


def _check_recognized(spec: NetworkSpec) -> str:
    meta = spec.meta
    version = meta.get("version")
    if meta.get("family") != "resnet" or version not in ("v1", "v2"):
        raise SpecError(
            f"dacify expects a ResNet spec (meta family 'resnet', version v1/v2), got meta {meta}"
        )
    kinds = [layer.kind for layer in spec.layers]
    if "gap" not in kinds or kinds[-1] not in ("dense_std", "dense_dac"):
        raise SpecError("dacify expects the ResNet head: global average pooling followed by a dense layer")
    odd = [layer.name for layer in spec.layers if layer.kind in ("conv_std", "conv_dac") and layer.kernel_size != DAC_KERNEL_SIZE]
    if odd:
        raise SpecError(f"dacify only rewrites 3x3 convolutions, found others: {odd}")
    return version


def dacify(spec: NetworkSpec) -> NetworkSpec:
    """Apply the DAC rewrite to a ResNet spec; idempotent.

    Parameters, when present, carry over: kernels are kept, DAC biases start
    at zero, stripped shifts and conv biases are dropped, and the new bias
    layer starts at zero.

    Raises:
        SpecError: If the spec is not a recognized ResNet.
    """
    version = _check_recognized(spec)
    traced = {t.name: t for t in trace_shapes(spec)}

    layers: List[LayerSpec] = []
    for layer in spec.layers:
        if layer.kind == "conv_std":
            params = {}
            if "kernel" in layer.params:
                channels = traced[layer.name].input_shape[-1]
                params = {
                    "kernel": layer.params["kernel"],
                    "dac_biases": TensorPayload.from_array(np.zeros((layer.out_channels, channels))),
                }
            layer = layer.model_copy(update={"kind": "conv_dac", "use_bias": False, "params": params})
        layers.append(layer)

    # ReLUs in front of DAC convolutions are applied by the DAC edges
    layers = [
        layer
        for i, layer in enumerate(layers)
        if not (layer.kind == "relu" and getattr(_next_compute(layers, i), "kind", None) == "conv_dac")
    ]

    # in v1 the head bias takes over the shift of the last batch norm
    gap_index = next(i for i, layer in enumerate(layers) if layer.kind == "gap")
    last_bn = max((i for i, layer in enumerate(layers[:gap_index]) if layer.kind == "batchnorm"), default=None)
    for i, layer in enumerate(layers):
        if layer.kind == "batchnorm" and layer.use_shift:
            feeds_dac = getattr(_next_compute(layers, i), "kind", None) == "conv_dac"
            if feeds_dac or (version == "v1" and i == last_bn):
                params = {k: v for k, v in layer.params.items() if k != "beta"}
                layers[i] = layer.model_copy(update={"use_shift": False, "params": params})

    if version == "v1" and not any(layer.kind == "bias" for layer in layers):
        gap = next(i for i, layer in enumerate(layers) if layer.kind == "gap")
        insert_at = gap - 1 if layers[gap - 1].kind == "relu" else gap
        channels = traced[layers[gap].name].input_shape[-1]
        bias = LayerSpec(kind="bias", name="head_bias", channels=channels)
        if spec.has_params:
            bias = bias.model_copy(update={"params": {"bias": TensorPayload.from_array(np.zeros(channels))}})
        layers.insert(insert_at, bias)
        if layers[insert_at + 1].kind != "relu":
            layers.insert(insert_at + 1, _marker("relu", "head_relu"))

    name = spec.name if spec.name.endswith("-dac") else f"{spec.name}-dac"
    meta = dict(spec.meta, dac=True)
    result = spec.model_copy(update={"name": name, "meta": meta, "layers": layers})
    trace_shapes(result)
    return result


def structurally_equal(a: NetworkSpec, b: NetworkSpec) -> bool:
    """Same layers, shapes and metadata, ignoring parameter values."""
    return a.strip_params() == b.strip_params()


def preset(name: str) -> NetworkSpec:
    """Parameter-free spec for a named model.

    ``resnet{20,32,44,56}`` with optional ``-v2`` and ``-dac`` suffixes, or
    one of the small presets ``dense-std``, ``dense-dac``, ``square-dac``,
    ``blobs-dac``.

    Raises:
        SpecError: For unknown names.
    """
    if name.startswith("resnet"):
        parts = name[len("resnet") :].split("-")
        try:
            depth = int(parts[0])
        except ValueError:
            raise SpecError(f"Unknown model '{name}'") from None
        flags = set(parts[1:])
        if depth not in RESNET_DEPTHS or not flags <= {"v2", "dac"}:
            raise SpecError(f"Unknown model '{name}', depths are {sorted(RESNET_DEPTHS)}")
        cfg = ResNetConfig(
            version="v2" if "v2" in flags else "v1",
            n_blocks_per_stage=RESNET_DEPTHS[depth],
            dac="dac" in flags,
        )
        return build_resnet(cfg)

    if name in ("dense-std", "dense-dac"):
        kind = "dense_std" if name == "dense-std" else "dense_dac"
        layer = LayerSpec(kind=kind, name="dense", in_features=16, out_features=32, use_bias=True)
        return NetworkSpec(name=name, input_shape=[16], meta={"family": "dense"}, layers=[layer])
    if name == "square-dac":
        return NetworkSpec(
            name=name,
            input_shape=[2],
            meta={"family": "square"},
            layers=[
                LayerSpec(kind="dense_dac", name="dac", in_features=2, out_features=2),
                LayerSpec(kind="dense_std", name="head", in_features=2, out_features=2, use_bias=True),
            ],
        )
    if name == "blobs-dac":
        return blobs_network(classes=3)
    raise SpecError(f"Unknown model '{name}'")


def blobs_network(classes: int) -> NetworkSpec:
    """One DAC dense layer from the plane to ``classes`` logits."""
    return NetworkSpec(
        name="blobs-dac",
        input_shape=[2],
        meta={"family": "blobs", "num_classes": classes},
        layers=[LayerSpec(kind="dense_dac", name="dac", in_features=2, out_features=classes, use_bias=True)],
    )
