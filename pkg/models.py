"""
Model builders: plain CNNs for the binary and multi-label tasks and a
configurable residual family, all composed from tensor ops.

A Model is an ordered list of layers. Layers own their parameter tensors
(and, for batchnorm, running statistics); `Model.forward` threads a batch
through them. Parameters are drawn from a seeded He-normal scheme in layer
order, so a (config, seed) pair always yields the same initial model.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError
from tensor import (
    ConvSpec,
    RunningStats,
    Tensor,
    activation,
    affine,
    batchnorm2d,
    conv2d,
    flatten,
    global_avg_pool2d,
    maxpool2d,
    parameter,
    relu,
)

Shape = Tuple[int, int, int]

TASKS = ("binary", "multilabel")
OUTPUT_DIMS = {"binary": 2, "multilabel": 14}
HEADS = {"binary": "softmax", "multilabel": "sigmoid"}


def _he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    return parameter(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in))


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    def forward(self, x: Tensor, training: bool) -> Tensor:
        raise NotImplementedError

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return []

    def named_buffers(self) -> List[Tuple[str, RunningStats]]:
        return []

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward(x, training)

    def __repr__(self) -> str:
        return type(self).__name__


class Conv2d(Layer):
    def __init__(
        self,
        in_channels: int,
        spec: ConvSpec,
        rng: np.random.Generator,
        bias: bool = True,
    ):
        self.in_channels = in_channels
        self.spec = spec
        k = spec.kernel_size
        self.kernels = _he_normal(
            rng, (spec.filter_count, in_channels, k, k), in_channels * k * k
        )
        # a following batchnorm cancels any bias, so those convs carry a constant zero
        self.bias = parameter(np.zeros(spec.filter_count)) if bias else Tensor(np.zeros(spec.filter_count))

    def forward(self, x, training):
        return conv2d(x, self.kernels, self.bias, self.spec)

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} channels, got {c}")
        return (self.spec.filter_count, self.spec.output_extent(h), self.spec.output_extent(w))

    def named_parameters(self):
        params = [("kernels", self.kernels)]
        if self.bias.requires_grad:
            params.append(("bias", self.bias))
        return params

    def __repr__(self):
        s = self.spec
        return f"Conv2d({self.in_channels}->{s.filter_count}, k={s.kernel_size}, s={s.stride}, p={s.padding})"


class ReLU(Layer):
    def forward(self, x, training):
        return relu(x)


class MaxPool2d(Layer):
    def __init__(self, window: int):
        self.window = window

    def forward(self, x, training):
        return maxpool2d(x, self.window)

    def output_shape(self, shape):
        c, h, w = shape
        if h < self.window or w < self.window or h % self.window or w % self.window:
            raise ValueError(f"pool window {self.window} does not tile a {h}x{w} feature map")
        return (c, h // self.window, w // self.window)

    def __repr__(self):
        return f"MaxPool2d({self.window})"


class Flatten(Layer):
    def forward(self, x, training):
        return flatten(x)

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class GlobalAvgPool(Layer):
    def forward(self, x, training):
        return global_avg_pool2d(x)

    def output_shape(self, shape):
        return (shape[0],)


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = _he_normal(rng, (in_features, out_features), in_features)
        self.bias = parameter(np.zeros(out_features))

    def forward(self, x, training):
        return affine(x, self.weight, self.bias)

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ValueError(f"dense expects {self.in_features} features, got {shape}")
        return (self.out_features,)

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def __repr__(self):
        return f"Dense({self.in_features}->{self.out_features})"


class Activation(Layer):
    def __init__(self, kind: str):
        activation(kind, Tensor(np.zeros((1, 1))))  # rejects unknown kinds early
        self.kind = kind

    def forward(self, x, training):
        return activation(self.kind, x)

    def __repr__(self):
        return f"Activation({self.kind})"


class BatchNorm2d(Layer):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.eps = eps
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.running = RunningStats.for_channels(channels, momentum)

    def forward(self, x, training):
        return batchnorm2d(x, self.gamma, self.beta, self.eps, training, self.running)

    def named_parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def named_buffers(self):
        return [("running", self.running)]

    def __repr__(self):
        return f"BatchNorm2d({self.channels})"


class _Composite(Layer):
    """Layer whose parameters live in named sub-layers"""

    def children(self) -> List[Tuple[str, Layer]]:
        raise NotImplementedError

    def named_parameters(self):
        return [
            (f"{child_name}.{name}", p)
            for child_name, child in self.children()
            for name, p in child.named_parameters()
        ]

    def named_buffers(self):
        return [
            (f"{child_name}.{name}", b)
            for child_name, child in self.children()
            for name, b in child.named_buffers()
        ]


def _run(layers: Sequence[Layer], x: Tensor, training: bool) -> Tensor:
    for layer in layers:
        x = layer(x, training)
    return x


class ResidualBlock(_Composite):
    """Two 3x3 conv+batchnorm stages with an identity (or 1x1 projection) skip"""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        self.conv1 = Conv2d(in_channels, ConvSpec(out_channels, 3, stride, 1), rng, bias=False)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, ConvSpec(out_channels, 3, 1, 1), rng, bias=False)
        self.bn2 = BatchNorm2d(out_channels)
        self.projection: List[Layer] = []
        if stride != 1 or in_channels != out_channels:
            self.projection = [
                Conv2d(in_channels, ConvSpec(out_channels, 1, stride, 0), rng, bias=False),
                BatchNorm2d(out_channels),
            ]

    def children(self):
        named = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.projection:
            named += [("proj_conv", self.projection[0]), ("proj_bn", self.projection[1])]
        return named

    def forward(self, x, training):
        branch = _run([self.conv1, self.bn1, ReLU(), self.conv2, self.bn2], x, training)
        skip = _run(self.projection, x, training) if self.projection else x
        return relu(branch + skip)

    def output_shape(self, shape):
        return self.conv2.output_shape(self.conv1.output_shape(shape))

    def __repr__(self):
        return f"ResidualBlock({self.conv1.in_channels}->{self.conv2.spec.filter_count}, s={self.conv1.spec.stride})"


class BottleneckBlock(_Composite):
    """1x1 reduce, 3x3, 1x1 expand (x4), batchnorm after each, projection skip on shape change"""

    expansion = 4

    def __init__(self, in_channels: int, width: int, stride: int, rng: np.random.Generator):
        out_channels = width * self.expansion
        self.reduce = Conv2d(in_channels, ConvSpec(width, 1, 1, 0), rng, bias=False)
        self.bn1 = BatchNorm2d(width)
        self.conv = Conv2d(width, ConvSpec(width, 3, stride, 1), rng, bias=False)
        self.bn2 = BatchNorm2d(width)
        self.expand = Conv2d(width, ConvSpec(out_channels, 1, 1, 0), rng, bias=False)
        self.bn3 = BatchNorm2d(out_channels)
        self.projection: List[Layer] = []
        if stride != 1 or in_channels != out_channels:
            self.projection = [
                Conv2d(in_channels, ConvSpec(out_channels, 1, stride, 0), rng, bias=False),
                BatchNorm2d(out_channels),
            ]

    def children(self):
        named = [
            ("reduce", self.reduce),
            ("bn1", self.bn1),
            ("conv", self.conv),
            ("bn2", self.bn2),
            ("expand", self.expand),
            ("bn3", self.bn3),
        ]
        if self.projection:
            named += [("proj_conv", self.projection[0]), ("proj_bn", self.projection[1])]
        return named

    def forward(self, x, training):
        branch = _run(
            [self.reduce, self.bn1, ReLU(), self.conv, self.bn2, ReLU(), self.expand, self.bn3],
            x,
            training,
        )
        skip = _run(self.projection, x, training) if self.projection else x
        return relu(branch + skip)

    def output_shape(self, shape):
        return self.expand.output_shape(self.conv.output_shape(self.reduce.output_shape(shape)))

    def __repr__(self):
        return f"BottleneckBlock({self.reduce.in_channels}->{self.expand.spec.filter_count}, s={self.conv.spec.stride})"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ConvBlock:
    filters: int
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    pool: int = 2  # 0 disables pooling
    batchnorm: bool = False

    @property
    def spec(self) -> ConvSpec:
        return ConvSpec(self.filters, self.kernel_size, self.stride, self.padding)


DEFAULT_CONV_FILTERS = {"binary": (32, 32, 32), "multilabel": (32, 32, 64, 64)}
DEFAULT_DENSE_WIDTHS = {"binary": (128,), "multilabel": (256, 128)}


def _default_conv_blocks(task: str) -> List[ConvBlock]:
    return [ConvBlock(f) for f in DEFAULT_CONV_FILTERS[task]]


@dataclass
class ModelConfig:
    task: str = "binary"
    input_shape: Shape = (1, 64, 64)
    conv_blocks: Optional[List[ConvBlock]] = None  # None: the task default
    dense_widths: Optional[List[int]] = None
    output_dim: Optional[int] = None
    residual: bool = False
    depth_per_stage: List[int] = field(default_factory=list)
    stage_widths: List[int] = field(default_factory=list)
    block: str = "basic"  # basic | bottleneck
    stem: Optional[ConvBlock] = None
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task '{self.task}', expected one of {list(TASKS)}")
        if self.output_dim is None:
            self.output_dim = OUTPUT_DIMS[self.task]
        if self.output_dim != OUTPUT_DIMS[self.task]:
            raise ConfigError(
                f"task '{self.task}' needs output_dim {OUTPUT_DIMS[self.task]}, got {self.output_dim}"
            )
        if self.conv_blocks is None:
            self.conv_blocks = [] if self.residual else _default_conv_blocks(self.task)
        if self.dense_widths is None:
            self.dense_widths = [] if self.residual else list(DEFAULT_DENSE_WIDTHS[self.task])
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be positive (C, H, W), got {self.input_shape}")
        self.conv_blocks = [b if isinstance(b, ConvBlock) else ConvBlock(**b) for b in self.conv_blocks]
        if isinstance(self.stem, dict):
            self.stem = ConvBlock(**self.stem)
        if any(w < 1 for w in self.dense_widths):
            raise ConfigError(f"dense widths must be positive, got {self.dense_widths}")
        if self.residual:
            if not self.depth_per_stage:
                raise ConfigError("residual model needs depth_per_stage")
            if len(self.stage_widths) != len(self.depth_per_stage):
                raise ConfigError(
                    f"{len(self.stage_widths)} stage widths for {len(self.depth_per_stage)} stages"
                )
            if any(d < 1 for d in self.depth_per_stage) or any(w < 1 for w in self.stage_widths):
                raise ConfigError("residual stage depths and widths must be positive")
            if self.block not in ("basic", "bottleneck"):
                raise ConfigError(f"unknown residual block '{self.block}'")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["input_shape"] = list(self.input_shape)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        return cls(**data)


PRESETS = ("baseline", "optimized", "multilabel", "resnet-tiny", "resnet50")
PRESET_TASKS = {
    "baseline": ("binary",),
    "optimized": ("binary",),
    "multilabel": ("multilabel",),
    "resnet-tiny": TASKS,
    "resnet50": TASKS,
}


def preset_config(name: str, task: str, input_shape: Shape, seed: int = 0) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown model '{name}', expected one of {list(PRESETS)}")
    if task not in PRESET_TASKS[name]:
        raise ConfigError(
            f"model '{name}' has a {OUTPUT_DIMS[PRESET_TASKS[name][0]]}-way "
            f"{HEADS[PRESET_TASKS[name][0]]} head and cannot serve task '{task}'; "
            f"use one of {[p for p in PRESETS if task in PRESET_TASKS[p]]}"
        )
    common = dict(task=task, input_shape=input_shape, seed=seed, name=name)
    if name == "baseline":
        return ModelConfig(**common)
    if name == "optimized":
        return ModelConfig(
            conv_blocks=[ConvBlock(32), ConvBlock(32), ConvBlock(64), ConvBlock(64)],
            dense_widths=[256],
            **common,
        )
    if name == "multilabel":
        return ModelConfig(**common)
    if name == "resnet-tiny":
        return ModelConfig(
            conv_blocks=[],
            dense_widths=[],
            residual=True,
            stem=ConvBlock(8, 3, 1, 1, pool=0, batchnorm=True),
            depth_per_stage=[1, 1],
            stage_widths=[8, 16],
            **common,
        )
    return ModelConfig(
        conv_blocks=[],
        dense_widths=[],
        residual=True,
        block="bottleneck",
        stem=ConvBlock(64, 7, 2, 3, pool=2, batchnorm=True),
        depth_per_stage=[3, 4, 6, 3],
        stage_widths=[64, 128, 256, 512],
        **common,
    )


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class Model:
    def __init__(self, layers: List[Layer], config: ModelConfig):
        self.layers = layers
        self.config = config

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [
            (f"layer{i:02d}.{name}", p)
            for i, layer in enumerate(self.layers)
            for name, p in layer.named_parameters()
        ]

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> List[Tuple[str, RunningStats]]:
        return [
            (f"layer{i:02d}.{name}", b)
            for i, layer in enumerate(self.layers)
            for name, b in layer.named_buffers()
        ]

    def forward(self, batch, training: bool = False) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        expected = tuple(self.config.input_shape)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(
                f"batch shape mismatch: expected (B, {', '.join(map(str, expected))}), received {x.shape}"
            )
        return _run(self.layers, x, training)

    def __call__(self, batch, training: bool = False) -> Tensor:
        return self.forward(batch, training)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter and running statistic, keyed by name"""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, stats in self.named_buffers():
            state[f"{name}.mean"] = stats.mean.copy()
            state[f"{name}.var"] = stats.var.copy()
        return state

    def load_state_arrays(self, state: Dict[str, np.ndarray]):
        for name, p in self.named_parameters():
            if name not in state:
                raise ConfigError(f"state is missing parameter {name}")
            if state[name].shape != p.shape:
                raise ConfigError(
                    f"parameter {name}: stored shape {state[name].shape} != model shape {p.shape}"
                )
        for name, p in self.named_parameters():
            p.data = np.array(state[name], dtype=np.float64)
        for name, stats in self.named_buffers():
            if f"{name}.mean" in state:
                stats.mean = np.array(state[f"{name}.mean"], dtype=np.float64)
                stats.var = np.array(state[f"{name}.var"], dtype=np.float64)

    def summary(self) -> str:
        lines = [f"{self.config.name} ({self.config.task}), input {self.config.input_shape}"]
        for i, layer in enumerate(self.layers):
            lines.append(f"  {i:02d} {layer!r}")
        lines.append(f"  parameters: {param_count(self)}")
        return "\n".join(lines)


def param_count(model) -> int:
    """Exact scalar parameter count of a model or a single layer"""
    return int(sum(p.size for p in model.parameters()))


def forward(model: Model, batch, training: bool = False) -> Tensor:
    return model.forward(batch, training)


def _checked(layers: List[Layer], input_shape: Shape) -> List[Layer]:
    shape = tuple(input_shape)
    for index, layer in enumerate(layers):
        try:
            shape = layer.output_shape(shape)
        except ValueError as e:
            raise ConfigError(
                f"layer {index} ({layer!r}) cannot take feature map {shape}: {e}"
            ) from e
    return layers


def _conv_stack(blocks: Sequence[ConvBlock], in_channels: int, rng) -> List[Layer]:
    layers: List[Layer] = []
    for block in blocks:
        layers.append(Conv2d(in_channels, block.spec, rng, bias=not block.batchnorm))
        if block.batchnorm:
            layers.append(BatchNorm2d(block.filters))
        layers.append(ReLU())
        if block.pool:
            layers.append(MaxPool2d(block.pool))
        in_channels = block.filters
    return layers


def _head(features: int, config: ModelConfig, rng) -> List[Layer]:
    layers: List[Layer] = []
    for width in config.dense_widths:
        layers += [Dense(features, width, rng), ReLU()]
        features = width
    layers += [Dense(features, config.output_dim, rng), Activation(HEADS[config.task])]
    return layers


def _feature_count(layers: List[Layer], input_shape: Shape) -> int:
    shape = tuple(input_shape)
    for layer in _checked(layers, input_shape):
        shape = layer.output_shape(shape)
    return int(np.prod(shape))


def _build_plain(config: ModelConfig) -> Model:
    rng = np.random.default_rng(config.seed)
    layers = _conv_stack(config.conv_blocks, config.input_shape[0], rng)
    layers.append(Flatten())
    layers += _head(_feature_count(layers, config.input_shape), config, rng)
    return Model(_checked(layers, config.input_shape), config)


def build_binary_cnn(config: ModelConfig) -> Model:
    """conv blocks -> flatten -> dense widths -> 2-way softmax"""
    if config.task != "binary":
        raise ConfigError(f"build_binary_cnn needs task 'binary', got '{config.task}'")
    if config.residual:
        raise ConfigError("build_binary_cnn does not build residual models; use build_resnet")
    return _build_plain(config)


def build_multilabel_cnn(config: ModelConfig) -> Model:
    """conv blocks -> flatten -> dense widths -> 14-way sigmoid"""
    if config.task != "multilabel":
        raise ConfigError(f"build_multilabel_cnn needs task 'multilabel', got '{config.task}'")
    if config.residual:
        raise ConfigError("build_multilabel_cnn does not build residual models; use build_resnet")
    return _build_plain(config)


def build_resnet(config: ModelConfig) -> Model:
    """stem -> residual stages -> global average pool -> task head"""
    if not config.residual:
        raise ConfigError("build_resnet needs a residual config with depth_per_stage")
    rng = np.random.default_rng(config.seed)
    stem = config.stem or ConvBlock(config.stage_widths[0], 3, 1, 1, pool=0, batchnorm=True)
    layers = _conv_stack([stem], config.input_shape[0], rng)

    channels = stem.filters
    for stage, (depth, width) in enumerate(zip(config.depth_per_stage, config.stage_widths)):
        for b in range(depth):
            stride = 2 if stage > 0 and b == 0 else 1
            if config.block == "bottleneck":
                layers.append(BottleneckBlock(channels, width, stride, rng))
                channels = width * BottleneckBlock.expansion
            else:
                layers.append(ResidualBlock(channels, width, stride, rng))
                channels = width
    layers.append(GlobalAvgPool())
    layers += _head(_feature_count(layers, config.input_shape), config, rng)
    return Model(_checked(layers, config.input_shape), config)


def build_model(config: ModelConfig) -> Model:
    if config.residual:
        return build_resnet(config)
    if config.task == "binary":
        return build_binary_cnn(config)
    return build_multilabel_cnn(config)
