"""The masked-convolution coefficient network.

Three structural blocks:

  Block 1: ``depth`` layers of three parallel masked dilated conv streams
           (Q/E/D), each stream reading only its own previous feature map.
           The three maps of every layer are averaged into a combined map.
  Block 2: per combined map, a learnable PReLU followed by a residual
           module built from 1x1 convolutions.
  Block 3: the average of all Block-2 outputs, one more residual module,
           and ``degree + 1`` 1x1 heads emitting the per-pixel polynomial
           coefficient maps a0, a1 (and a2 for degree 2).

Because every Block-1 tap avoids the centre offset (and its streams are
shift-closed) while Blocks 2 and 3 are purely 1x1, no coefficient value
at pixel i can depend on the input value at pixel i.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .autodiff import Tensor, add, as_tensor, conv2d_masked, prelu, reshape, scalar_mul
from .masks import MaskSpec, canonical_masks, dilation_for_layer

_ONES_1X1 = np.ones((1, 1), dtype=np.float64)
_STREAMS = ("q", "e", "d")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters."""

    depth: int = 4
    width: int = 16
    degree: int = 2
    resnet_hidden: Optional[int] = None

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.degree not in (1, 2):
            raise ValueError(f"degree must be 1 or 2, got {self.degree}")
        if self.resnet_hidden is not None and self.resnet_hidden < 1:
            raise ValueError(f"resnet_hidden must be >= 1, got {self.resnet_hidden}")

    @property
    def hidden(self) -> int:
        return self.resnet_hidden if self.resnet_hidden is not None else self.width


@dataclass
class CoefficientMaps:
    """Per-pixel polynomial coefficients produced by the network."""

    a0: Tensor
    a1: Tensor
    a2: Optional[Tensor] = None

    @property
    def degree(self) -> int:
        return 2 if self.a2 is not None else 1

    @property
    def spatial_shape(self) -> Tuple[int, int]:
        return self.a0.shape


class NetworkParams:
    """Named map of learnable tensors plus the config and masks that shaped it."""

    def __init__(self, config: NetworkConfig, tensors: Dict[str, Tensor],
                 mask_specs: Optional[Tuple[MaskSpec, MaskSpec, MaskSpec]] = None):
        self.config = config
        self.tensors = dict(tensors)
        self.mask_specs = mask_specs if mask_specs is not None else canonical_masks()

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self):
        return self.tensors.keys()

    def items(self):
        return self.tensors.items()

    def data_map(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def clone(self, requires_grad: Optional[bool] = None) -> "NetworkParams":
        tensors = {}
        for name, t in self.tensors.items():
            rg = t.requires_grad if requires_grad is None else requires_grad
            tensors[name] = Tensor(t.data.copy(), requires_grad=rg, name=name)
        return NetworkParams(self.config, tensors, self.mask_specs)

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def spec_for_stream(self, stream: str) -> MaskSpec:
        return self.mask_specs[_STREAMS.index(stream)]


def parameter_layout(config: NetworkConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> dense shape for every tensor of a network, in build order."""
    w, h = config.width, config.hidden
    layout: Dict[str, Tuple[int, ...]] = {}
    for layer in range(1, config.depth + 1):
        c_in = 1 if layer == 1 else w
        for stream in _STREAMS:
            layout[f"block1.layer{layer}.{stream}.kernel"] = (w, c_in, 3, 3)
            layout[f"block1.layer{layer}.{stream}.bias"] = (w,)
    for layer in range(1, config.depth + 1):
        base = f"block2.layer{layer}"
        layout[f"{base}.prelu.alpha"] = (w,)
        layout[f"{base}.res.conv1.kernel"] = (h, w, 1, 1)
        layout[f"{base}.res.conv1.bias"] = (h,)
        layout[f"{base}.res.prelu.alpha"] = (h,)
        layout[f"{base}.res.conv2.kernel"] = (w, h, 1, 1)
        layout[f"{base}.res.conv2.bias"] = (w,)
    layout["block3.res.conv1.kernel"] = (h, w, 1, 1)
    layout["block3.res.conv1.bias"] = (h,)
    layout["block3.res.prelu.alpha"] = (h,)
    layout["block3.res.conv2.kernel"] = (w, h, 1, 1)
    layout["block3.res.conv2.bias"] = (w,)
    for m in range(config.degree + 1):
        layout[f"block3.head{m}.kernel"] = (1, w, 1, 1)
        layout[f"block3.head{m}.bias"] = (1,)
    return layout


def active_parameter_count(config: NetworkConfig,
                           mask_specs: Optional[Tuple[MaskSpec, ...]] = None) -> int:
    """Number of learnable scalars, counting only unmasked kernel taps."""
    specs = mask_specs if mask_specs is not None else canonical_masks()
    by_stream = {s: spec for s, spec in zip(_STREAMS, specs)}
    total = 0
    for name, shape in parameter_layout(config).items():
        if name.startswith("block1.") and name.endswith(".kernel"):
            _, layer_part, stream, _ = name.split(".")
            layer = int(layer_part.removeprefix("layer"))
            spec = by_stream[stream]
            taps = spec.input_taps if layer == 1 else spec.stream_taps
            total += shape[0] * shape[1] * len(taps)
        else:
            total += int(np.prod(shape))
    return total


def _he_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / fan_in))


def build_network(config: NetworkConfig, seed: int,
                  mask_specs: Optional[Tuple[MaskSpec, MaskSpec, MaskSpec]] = None
                  ) -> NetworkParams:
    """Allocate and deterministically initialize all parameters.

    Kernel weights are He-scaled by the true (unmasked) fan-in of each
    filter; masked positions start and stay at zero. Biases start at zero
    and PReLU slopes at 0.25. Initial values are rounded to float32
    precision so a freshly built network round-trips bit-exactly through
    the float32 checkpoint format.
    """
    specs = mask_specs if mask_specs is not None else canonical_masks()
    by_stream = {s: spec for s, spec in zip(_STREAMS, specs)}
    rng = np.random.default_rng(int(seed))
    tensors: Dict[str, Tensor] = {}
    for name, shape in parameter_layout(config).items():
        if name.endswith(".alpha"):
            data = np.full(shape, 0.25)
        elif name.endswith(".bias"):
            data = np.zeros(shape)
        elif name.startswith("block1.") and name.endswith(".kernel"):
            _, layer_part, stream, _ = name.split(".")
            layer = int(layer_part.removeprefix("layer"))
            mask = by_stream[stream].mask_for_layer(layer)
            n_taps = int(mask.sum())
            data = rng.normal(0.0, _he_std(shape[1] * n_taps), size=shape)
            data *= mask  # masked taps are structural zeros
        elif name.endswith(".kernel"):
            data = rng.normal(0.0, _he_std(shape[1]), size=shape)
        else:  # pragma: no cover - layout emits only the suffixes above
            raise AssertionError(name)
        data = data.astype(np.float32).astype(np.float64)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return NetworkParams(config, tensors, specs)


def resnet_module(x: Tensor, kernel1: Tensor, bias1: Tensor, alpha: Tensor,
                  kernel2: Tensor, bias2: Tensor) -> Tensor:
    """x + F(x) with F = 1x1 conv, PReLU, 1x1 conv; spatial dims preserved."""
    x = as_tensor(x)
    if x.data.ndim != 3 or x.data.shape[0] != kernel1.data.shape[1]:
        raise ValueError(
            f"channel mismatch: input {x.shape} vs conv1 kernel {kernel1.shape}"
        )
    h = conv2d_masked(x, kernel1, _ONES_1X1, 1, bias1)
    h = prelu(h, alpha)
    h = conv2d_masked(h, kernel2, _ONES_1X1, 1, bias2)
    return add(x, h)


def _apply_resnet(params: NetworkParams, prefix: str, x: Tensor) -> Tensor:
    return resnet_module(
        x,
        params[f"{prefix}.conv1.kernel"], params[f"{prefix}.conv1.bias"],
        params[f"{prefix}.prelu.alpha"],
        params[f"{prefix}.conv2.kernel"], params[f"{prefix}.conv2.bias"],
    )


def forward(params: NetworkParams, z: Tensor) -> CoefficientMaps:
    """Coefficient maps for a single normalized noisy image [H, W]."""
    z = as_tensor(z)
    if z.data.ndim != 2:
        raise ValueError(f"input image must be 2-D, got shape {z.shape}")
    height, width = z.data.shape
    cfg = params.config

    x0 = reshape(z, (1, height, width))
    feats = {s: x0 for s in _STREAMS}
    combined = []
    for layer in range(1, cfg.depth + 1):
        dil = dilation_for_layer(layer)
        nxt = {}
        for stream in _STREAMS:
            spec = params.spec_for_stream(stream)
            base = f"block1.layer{layer}.{stream}"
            nxt[stream] = conv2d_masked(
                feats[stream], params[f"{base}.kernel"],
                spec.mask_for_layer(layer), dil, params[f"{base}.bias"],
            )
        feats = nxt
        layer_sum = add(add(nxt["q"], nxt["e"]), nxt["d"])
        combined.append(scalar_mul(layer_sum, 1.0 / 3.0))

    transformed = []
    for layer, a_map in enumerate(combined, start=1):
        base = f"block2.layer{layer}"
        t = prelu(a_map, params[f"{base}.prelu.alpha"])
        t = _apply_resnet(params, f"{base}.res", t)
        transformed.append(t)

    pooled = transformed[0]
    for t in transformed[1:]:
        pooled = add(pooled, t)
    pooled = scalar_mul(pooled, 1.0 / cfg.depth)
    pooled = _apply_resnet(params, "block3.res", pooled)

    heads = []
    for m in range(cfg.degree + 1):
        base = f"block3.head{m}"
        out = conv2d_masked(pooled, params[f"{base}.kernel"], _ONES_1X1, 1,
                            params[f"{base}.bias"])
        heads.append(reshape(out, (height, width)))
    if cfg.degree == 2:
        return CoefficientMaps(a0=heads[0], a1=heads[1], a2=heads[2])
    return CoefficientMaps(a0=heads[0], a1=heads[1])
