"""FactorizeNet macroarchitecture family and MAC accounting.

A network is fixed by a :class:`MacroArchConfig` (widths, depths, classifier)
and a :class:`FactorizationScheme` that picks the group count of every
groupwise-separable block. The stem convolution is never factorized.
"""

import re
from dataclasses import asdict, dataclass, field

from .errors import ConfigurationError
from .nn.layers import BatchNorm, Conv2D, Dense, MaxPool2D, ReLU, SoftmaxOutput, layer_from_description
from .nn.network import Network

REGULAR = "regular"
UNIFORM = "uniform"
REVERSE_PYRAMID = "revpyr"
DEPTHWISE = "dws"


@dataclass(frozen=True)
class ConvSpec:
    """Shape summary of one convolution for MAC counting. H, W are output dims."""

    K: int
    H: int
    W: int
    C_in: int
    C_out: int
    f: int = 1
    stride: int = 1
    has_pointwise_follower: bool = False

    def __post_init__(self):
        if min(self.K, self.H, self.W, self.C_in, self.C_out, self.stride) < 1:
            raise ConfigurationError(f"non-positive dimension in {self}")
        if not 1 <= self.f <= self.C_in:
            raise ConfigurationError(f"factorization rate {self.f} outside [1, {self.C_in}]")
        if self.C_in % self.f or self.C_out % self.f:
            raise ConfigurationError(f"C_in={self.C_in}, C_out={self.C_out} not divisible by f={self.f}")


def layer_macs(spec):
    return spec.K * spec.K * spec.H * spec.W * (spec.C_in // spec.f) * (spec.C_out // spec.f) * spec.f


@dataclass(frozen=True)
class FactorizationScheme:
    kind: str
    rate: int = 1

    def __post_init__(self):
        if self.kind not in (REGULAR, UNIFORM, REVERSE_PYRAMID, DEPTHWISE):
            raise ConfigurationError(f"unknown scheme kind {self.kind!r}")
        if self.kind in (UNIFORM, REVERSE_PYRAMID):
            if self.rate < 1 or self.rate & (self.rate - 1):
                raise ConfigurationError(f"{self.kind} rate must be a power of two, got {self.rate}")

    @property
    def label(self):
        if self.kind == REGULAR:
            return "Regular_Conv"
        if self.kind == DEPTHWISE:
            return "DWS_Conv"
        if self.kind == UNIFORM:
            return f"FactorizeNet-f{self.rate}"
        return f"FactorizeNet-finit{self.rate}"

    @property
    def token(self):
        if self.kind in (UNIFORM, REVERSE_PYRAMID):
            return f"{self.kind}:{self.rate}"
        return self.kind

    def __str__(self):
        return self.token


def Regular():
    return FactorizationScheme(REGULAR)


def Uniform(f):
    return FactorizationScheme(UNIFORM, f)


def ReversePyramid(f_init):
    return FactorizationScheme(REVERSE_PYRAMID, f_init)


def DepthwiseSeparable():
    return FactorizationScheme(DEPTHWISE)


_SCHEME_RE = re.compile(r"^(regular|dws|uniform:(\d+)|revpyr:(\d+))$")


def parse_scheme(text):
    """Parse ``regular``, ``uniform:F``, ``revpyr:F`` or ``dws``."""
    m = _SCHEME_RE.match(text.strip().lower())
    if not m:
        raise ConfigurationError(f"invalid scheme {text!r}; expected regular, uniform:F, revpyr:F or dws")
    if m.group(2):
        return Uniform(int(m.group(2)))
    if m.group(3):
        return ReversePyramid(int(m.group(3)))
    return Regular() if m.group(1) == "regular" else DepthwiseSeparable()


def parse_scheme_list(text):
    return [parse_scheme(tok) for tok in text.split(",") if tok.strip()]


def progression(kind, endpoints=False):
    if kind == "uniform_doubling":
        schemes = [Uniform(f) for f in (2, 4, 8, 16)]
    elif kind == "reverse_pyramid_doubling":
        schemes = [ReversePyramid(f) for f in (2, 4)]
    else:
        raise ConfigurationError(f"unknown progression {kind!r}")
    if endpoints:
        schemes = [Regular()] + schemes + [DepthwiseSeparable()]
    return schemes


@dataclass(frozen=True)
class MacroArchConfig:
    input_shape: tuple = (3, 32, 32)
    stem_channels: int = 64
    stage_widths: tuple = (64, 128, 256)
    blocks_per_stage: int = 2
    dense_widths: tuple = (512, 10)
    kernel_size: int = 3
    pool_window: int = 2
    bn_eps: float = 1e-3
    bn_momentum: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "stage_widths", tuple(self.stage_widths))
        object.__setattr__(self, "dense_widths", tuple(self.dense_widths))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigurationError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if not self.stage_widths:
            raise ConfigurationError("at least one stage is required")
        if any(b != 2 * a for a, b in zip(self.stage_widths, self.stage_widths[1:])):
            raise ConfigurationError(f"stage widths must double stage to stage, got {self.stage_widths}")
        if self.stem_channels != self.stage_widths[0]:
            raise ConfigurationError("stem_channels must equal stage_widths[0]")
        if self.blocks_per_stage < 1 or not self.dense_widths or min(self.dense_widths) < 1:
            raise ConfigurationError("blocks_per_stage and dense widths must be positive")
        h, w = self.input_shape[1:]
        for _ in self.stage_widths:
            h, w = h // self.pool_window, w // self.pool_window
        if h < 1 or w < 1:
            raise ConfigurationError(f"input {self.input_shape} too small for {len(self.stage_widths)} pooled stages")

    @property
    def num_classes(self):
        return self.dense_widths[-1]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def desk_config(input_hw=16, num_classes=2):
    """Small configuration used by the desk-scale acceptance runs."""
    return MacroArchConfig(input_shape=(3, input_hw, input_hw), stem_channels=16, stage_widths=(16, 32),
                           blocks_per_stage=1, dense_widths=(64, num_classes))


def group_rate(scheme, c_in, cfg):
    """Groups for the 3x3 conv of a groupwise-separable block whose input has ``c_in`` channels.

    Reverse pyramid doubles the rate each time the input depth doubles, so
    channels-per-group stays ``stage_widths[0] / f_init`` everywhere.
    """
    if scheme.kind == UNIFORM:
        f = scheme.rate
    elif scheme.kind == REVERSE_PYRAMID:
        base = cfg.stage_widths[0]
        if c_in % base:
            raise ConfigurationError(f"input depth {c_in} is not a multiple of the base width {base}")
        f = scheme.rate * (c_in // base)
    elif scheme.kind == DEPTHWISE:
        f = c_in
    else:
        raise ConfigurationError("regular scheme has no groupwise-separable blocks")
    if f > c_in or c_in % f:
        raise ConfigurationError(f"{scheme.label}: factorization rate {f} does not divide input depth {c_in}")
    return f


@dataclass
class NetworkPlan:
    cfg: MacroArchConfig
    scheme: FactorizationScheme
    layers: list = field(default_factory=list)
    conv_specs: dict = field(default_factory=dict)

    @property
    def conv_names(self):
        return [d["name"] for d in self.layers if d["kind"] == "Conv2D"]

    def rates(self):
        """Group count of every group conv, in network order."""
        return [d["groups"] for d in self.layers if d["role"] == "group_conv"]

    def layer_shapes(self):
        """Structural fingerprint: (kind, role, hyperparameters) per layer, without names."""
        out = []
        for d in self.layers:
            out.append(tuple(sorted((k, v) for k, v in d.items() if k != "name")))
        return out

    def to_dict(self):
        return {
            "cfg": self.cfg.to_dict(),
            "scheme": self.scheme.token,
            "layers": self.layers,
            "conv_specs": {k: asdict(v) for k, v in self.conv_specs.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(MacroArchConfig.from_dict(d["cfg"]), parse_scheme(d["scheme"]), list(d["layers"]),
                   {k: ConvSpec(**v) for k, v in d["conv_specs"].items()})


def _make_layers(cfg, scheme):
    k = cfg.kernel_size
    c, h, w = cfg.input_shape
    layers, specs = [], {}

    def conv(name, role, c_in, c_out, kernel, groups, follower=False):
        layers.append(Conv2D(name, c_in, c_out, kernel, groups=groups, stride=1, padding=kernel // 2, role=role))
        specs[name] = ConvSpec(kernel, h, w, c_in, c_out, groups, 1, follower)

    def bn_relu(prefix, channels):
        layers.append(BatchNorm(f"{prefix}_bn", channels, cfg.bn_eps, cfg.bn_momentum, role="bn"))
        layers.append(ReLU(f"{prefix}_relu", role="relu"))

    conv("stem_conv", "stem", c, cfg.stem_channels, k, 1)
    bn_relu("stem", cfg.stem_channels)
    c = cfg.stem_channels

    for s, width in enumerate(cfg.stage_widths):
        for b in range(cfg.blocks_per_stage):
            prefix = f"s{s}b{b}"
            if scheme.kind == REGULAR:
                conv(f"{prefix}_conv", "conv", c, width, k, 1)
                bn_relu(f"{prefix}_conv", width)
            else:
                f = group_rate(scheme, c, cfg)
                conv(f"{prefix}_gconv", "group_conv", c, c, k, f, follower=True)
                bn_relu(f"{prefix}_gconv", c)
                conv(f"{prefix}_pw", "pointwise", c, width, 1, 1)
                bn_relu(f"{prefix}_pw", width)
            c = width
        layers.append(MaxPool2D(f"pool{s}", cfg.pool_window, cfg.pool_window, role="pool"))
        h, w = h // cfg.pool_window, w // cfg.pool_window

    fan_in = c * h * w
    for i, width in enumerate(cfg.dense_widths):
        last = i == len(cfg.dense_widths) - 1
        layers.append(Dense(f"fc{i}", fan_in, width, role="output" if last else "dense"))
        if not last:
            layers.append(ReLU(f"fc{i}_relu", role="relu"))
        fan_in = width
    layers.append(SoftmaxOutput("softmax", role="output"))
    return layers, specs


def build_plan(cfg, scheme):
    layers, specs = _make_layers(cfg, scheme)
    return NetworkPlan(cfg, scheme, [layer.describe() for layer in layers], specs)


def build_network(cfg, scheme, rng):
    """Construct a Glorot-initialized network; parameters are drawn in layer order."""
    layers, specs = _make_layers(cfg, scheme)
    plan = NetworkPlan(cfg, scheme, [layer.describe() for layer in layers], specs)
    for layer in layers:
        if hasattr(layer, "init_params"):
            layer.init_params(rng)
    return Network(layers, plan)


def network_from_plan(plan):
    """Uninitialized network (zero weights) with the plan's layer structure."""
    return Network([layer_from_description(d) for d in plan.layers], plan)


def network_macs(plan):
    """Total MACs of all convolutions (stem, group and pointwise); dense layers are excluded."""
    return sum(layer_macs(spec) for spec in plan.conv_specs.values())


def mac_table(plan):
    """Per-conv rows ``(name, role, spec, macs)`` in network order."""
    roles = {d["name"]: d["role"] for d in plan.layers}
    return [(name, roles[name], spec, layer_macs(spec)) for name, spec in plan.conv_specs.items()]
