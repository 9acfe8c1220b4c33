"""Model profiles: per-layer dimensions and timings that drive the planners
and the simulator.

A profile lists the preconditioned layers of a CNN (convolutions and the
classifier) with the dimensions of their two curvature factors, the layer's
parameter count, and four per-layer times (forward, backward, and the two
factor constructions).  Bundled profiles for four reference architectures
are derived from the published layer definitions; their timings are
synthetic (see generate_synthetic_timings) and tagged as such; treat them
as shape-realistic calibrations, not measurements.

Factor dimension conventions: for a convolution, the input-side factor has
dimension in_channels * kernel_h * kernel_w and the output-side factor has
dimension out_channels; for a fully-connected layer they are the in/out
feature counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

__all__ = [
    "LayerProfile",
    "ModelProfile",
    "CalibrationTargets",
    "load_profile",
    "save_profile",
    "profile_from_dict",
    "generate_synthetic_timings",
    "architecture_layer_dims",
    "build_bundled_profile",
    "bundled_profile",
    "bundled_params",
    "BUNDLED_MODELS",
    "TOTALS_RTOL",
]

BUNDLED_MODELS = ("resnet50", "resnet152", "densenet201", "inceptionv4")

# Declared totals in a profile file must agree with the recomputed sums to
# within this relative tolerance.
TOTALS_RTOL = 1e-3


def _packed(d: int) -> int:
    return d * (d + 1) // 2


@dataclass(frozen=True)
class LayerProfile:
    """One preconditioned layer: factor dimensions, parameter count, and times."""

    name: str
    a_dim: int
    g_dim: int
    grad_elements: int
    t_ff: float
    t_bp: float
    t_factorA: float
    t_factorG: float

    def __post_init__(self):
        if self.a_dim < 1 or self.g_dim < 1:
            raise ValueError(f"layer {self.name!r}: factor dimensions must be >= 1")
        if self.grad_elements < 1:
            raise ValueError(f"layer {self.name!r}: grad_elements must be >= 1")
        for label, t in (
            ("t_ff", self.t_ff),
            ("t_bp", self.t_bp),
            ("t_factorA", self.t_factorA),
            ("t_factorG", self.t_factorG),
        ):
            if not t > 0:
                raise ValueError(f"layer {self.name!r}: {label} must be > 0, got {t}")

    @property
    def a_elements(self) -> int:
        return _packed(self.a_dim)

    @property
    def g_elements(self) -> int:
        return _packed(self.g_dim)


@dataclass(frozen=True)
class ModelProfile:
    model: str
    batch_size: int
    layers: tuple[LayerProfile, ...]
    timing_source: str = "synthetic"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.layers:
            raise ValueError("profile needs at least one layer")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def total_params(self) -> int:
        return sum(l.grad_elements for l in self.layers)

    @property
    def total_a_elements(self) -> int:
        return sum(l.a_elements for l in self.layers)

    @property
    def total_g_elements(self) -> int:
        return sum(l.g_elements for l in self.layers)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "batch_size": self.batch_size,
            "timing_source": self.timing_source,
            "layers": [
                {
                    "name": l.name,
                    "a_dim": l.a_dim,
                    "g_dim": l.g_dim,
                    "grad_elements": l.grad_elements,
                    "t_ff": l.t_ff,
                    "t_bp": l.t_bp,
                    "t_factorA": l.t_factorA,
                    "t_factorG": l.t_factorG,
                }
                for l in self.layers
            ],
            "totals": {
                "params": self.total_params,
                "a_elements": self.total_a_elements,
                "g_elements": self.total_g_elements,
            },
        }


_TOP_KEYS = {"model", "batch_size", "layers", "timing_source", "totals"}
_LAYER_KEYS = {"name", "a_dim", "g_dim", "grad_elements", "t_ff", "t_bp", "t_factorA", "t_factorG"}


def profile_from_dict(data: dict, source: str = "<profile>") -> ModelProfile:
    if not isinstance(data, dict):
        raise ValueError(f"{source}: profile must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ValueError(f"{source}: unknown keys {sorted(unknown)}")
    for key in ("model", "batch_size", "layers"):
        if key not in data:
            raise ValueError(f"{source}: missing required key {key!r}")
    if not isinstance(data["model"], str):
        raise ValueError(f"{source}: 'model' must be a string")
    if not isinstance(data["batch_size"], int) or isinstance(data["batch_size"], bool):
        raise ValueError(f"{source}: 'batch_size' must be an integer")
    if not isinstance(data["layers"], list) or not data["layers"]:
        raise ValueError(f"{source}: 'layers' must be a nonempty list")

    layers = []
    for n, raw in enumerate(data["layers"]):
        if not isinstance(raw, dict):
            raise ValueError(f"{source}: layer {n} must be an object")
        missing = _LAYER_KEYS - set(raw)
        if missing:
            raise ValueError(f"{source}: layer {n} missing keys {sorted(missing)}")
        extra = set(raw) - _LAYER_KEYS
        if extra:
            raise ValueError(f"{source}: layer {n} has unknown keys {sorted(extra)}")
        try:
            layers.append(
                LayerProfile(
                    name=str(raw["name"]),
                    a_dim=int(raw["a_dim"]),
                    g_dim=int(raw["g_dim"]),
                    grad_elements=int(raw["grad_elements"]),
                    t_ff=float(raw["t_ff"]),
                    t_bp=float(raw["t_bp"]),
                    t_factorA=float(raw["t_factorA"]),
                    t_factorG=float(raw["t_factorG"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{source}: layer {n}: {exc}") from exc

    profile = ModelProfile(
        model=data["model"],
        batch_size=data["batch_size"],
        layers=tuple(layers),
        timing_source=str(data.get("timing_source", "unspecified")),
    )

    declared = data.get("totals")
    if declared is not None:
        computed = {
            "params": profile.total_params,
            "a_elements": profile.total_a_elements,
            "g_elements": profile.total_g_elements,
        }
        for key, want in computed.items():
            if key not in declared:
                continue
            got = declared[key]
            if abs(got - want) > TOTALS_RTOL * want:
                raise ValueError(
                    f"{source}: declared totals.{key}={got} disagrees with computed {want} "
                    f"beyond {TOTALS_RTOL:.1%}"
                )
    return profile


def load_profile(path) -> ModelProfile:
    """Load and validate a profile JSON file."""
    path = Path(path)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    return profile_from_dict(data, source=str(path))


def save_profile(path, profile: ModelProfile) -> None:
    Path(path).write_text(json.dumps(profile.to_dict(), indent=2) + "\n")


# --- synthetic timings ------------------------------------------------------


@dataclass(frozen=True)
class CalibrationTargets:
    """Aggregate seconds the generated per-layer times must sum to.

    ``ffbp_seconds`` covers forward plus backward computation of the whole
    model; ``factor_comp_seconds`` covers construction of all factors.
    """

    ffbp_seconds: float
    factor_comp_seconds: float
    bp_over_ff: float = 2.0  # backward is roughly two matmuls per forward's one

    def __post_init__(self):
        if self.ffbp_seconds <= 0 or self.factor_comp_seconds <= 0:
            raise ValueError("calibration targets must be positive")
        if self.bp_over_ff <= 0:
            raise ValueError("bp_over_ff must be positive")


def generate_synthetic_timings(
    model: str,
    batch_size: int,
    layer_dims: Sequence[tuple[str, int, int, int]],
    targets: CalibrationTargets,
) -> ModelProfile:
    """Fill per-layer times from cost heuristics, scaled to aggregate targets.

    ``layer_dims`` rows are (name, a_dim, g_dim, grad_elements).  Forward
    time is spread proportionally to the layer's parameter count, backward
    is ``bp_over_ff`` times forward, and factor-construction time is spread
    proportionally to the squared factor dimension.  Sums match the targets
    exactly, so every generated time scales linearly with them.
    """
    if not layer_dims:
        raise ValueError("cannot generate timings for zero layers")
    param_weights = [float(g) for _, _, _, g in layer_dims]
    factor_weights_a = [float(a) ** 2 for _, a, _, _ in layer_dims]
    factor_weights_g = [float(g) ** 2 for _, _, g, _ in layer_dims]

    ff_total = targets.ffbp_seconds / (1.0 + targets.bp_over_ff)
    param_sum = sum(param_weights)
    factor_sum = sum(factor_weights_a) + sum(factor_weights_g)

    layers = []
    for (name, a_dim, g_dim, grad_elements), pw, fa, fg in zip(
        layer_dims, param_weights, factor_weights_a, factor_weights_g
    ):
        t_ff = ff_total * pw / param_sum
        layers.append(
            LayerProfile(
                name=name,
                a_dim=a_dim,
                g_dim=g_dim,
                grad_elements=grad_elements,
                t_ff=t_ff,
                t_bp=targets.bp_over_ff * t_ff,
                t_factorA=targets.factor_comp_seconds * fa / factor_sum,
                t_factorG=targets.factor_comp_seconds * fg / factor_sum,
            )
        )
    return ModelProfile(
        model=model, batch_size=batch_size, layers=tuple(layers), timing_source="synthetic"
    )


# --- bundled architectures ---------------------------------------------------
#
# Preconditioned-layer enumerations of four reference CNNs, matching the
# published layer definitions (torchvision for the ResNets and DenseNet).
# Each entry is (name, a_dim, g_dim, grad_elements).


def _conv(layers: list, name: str, cin: int, cout: int, kh: int, kw: int | None = None) -> None:
    kw = kh if kw is None else kw
    layers.append((name, cin * kh * kw, cout, cin * cout * kh * kw))


def _resnet_dims(block_counts: tuple[int, int, int, int]) -> list[tuple[str, int, int, int]]:
    layers: list[tuple[str, int, int, int]] = []
    _conv(layers, "conv1", 3, 64, 7)
    cin = 64
    for stage, (planes, nblocks) in enumerate(zip((64, 128, 256, 512), block_counts), start=1):
        cout = planes * 4
        for b in range(nblocks):
            pre = f"layer{stage}.{b}"
            _conv(layers, f"{pre}.conv1", cin if b == 0 else cout, planes, 1)
            _conv(layers, f"{pre}.conv2", planes, planes, 3)
            _conv(layers, f"{pre}.conv3", planes, cout, 1)
            if b == 0:
                _conv(layers, f"{pre}.downsample", cin, cout, 1)
        cin = cout
    layers.append(("fc", 2048, 1000, 2048 * 1000))
    return layers


def _densenet201_dims() -> list[tuple[str, int, int, int]]:
    layers: list[tuple[str, int, int, int]] = []
    _conv(layers, "conv0", 3, 64, 7)
    channels, growth, bn_size = 64, 32, 4
    for bi, nlayers in enumerate((6, 12, 48, 32), start=1):
        for j in range(nlayers):
            pre = f"denseblock{bi}.denselayer{j + 1}"
            _conv(layers, f"{pre}.conv1", channels, bn_size * growth, 1)
            _conv(layers, f"{pre}.conv2", bn_size * growth, growth, 3)
            channels += growth
        if bi < 4:
            _conv(layers, f"transition{bi}", channels, channels // 2, 1)
            channels //= 2
    layers.append(("classifier", channels, 1000, channels * 1000))
    return layers


def _inceptionv4_dims() -> list[tuple[str, int, int, int]]:
    layers: list[tuple[str, int, int, int]] = []
    c = lambda name, cin, cout, kh, kw=None: _conv(layers, name, cin, cout, kh, kw)
    # stem
    c("stem.conv1", 3, 32, 3)
    c("stem.conv2", 32, 32, 3)
    c("stem.conv3", 32, 64, 3)
    c("stem.mixed3a.conv", 64, 96, 3)
    c("stem.mixed4a.b0.conv1", 160, 64, 1)
    c("stem.mixed4a.b0.conv2", 64, 96, 3)
    c("stem.mixed4a.b1.conv1", 160, 64, 1)
    c("stem.mixed4a.b1.conv2", 64, 64, 1, 7)
    c("stem.mixed4a.b1.conv3", 64, 64, 7, 1)
    c("stem.mixed4a.b1.conv4", 64, 96, 3)
    c("stem.mixed5a.conv", 192, 192, 3)
    for i in range(1, 5):
        p = f"inceptionA{i}"
        c(f"{p}.b0.conv", 384, 96, 1)
        c(f"{p}.b1.conv1", 384, 64, 1)
        c(f"{p}.b1.conv2", 64, 96, 3)
        c(f"{p}.b2.conv1", 384, 64, 1)
        c(f"{p}.b2.conv2", 64, 96, 3)
        c(f"{p}.b2.conv3", 96, 96, 3)
        c(f"{p}.b3.conv", 384, 96, 1)
    c("reductionA.b0.conv", 384, 384, 3)
    c("reductionA.b1.conv1", 384, 192, 1)
    c("reductionA.b1.conv2", 192, 224, 3)
    c("reductionA.b1.conv3", 224, 256, 3)
    for i in range(1, 8):
        p = f"inceptionB{i}"
        c(f"{p}.b0.conv", 1024, 384, 1)
        c(f"{p}.b1.conv1", 1024, 192, 1)
        c(f"{p}.b1.conv2", 192, 224, 1, 7)
        c(f"{p}.b1.conv3", 224, 256, 7, 1)
        c(f"{p}.b2.conv1", 1024, 192, 1)
        c(f"{p}.b2.conv2", 192, 192, 7, 1)
        c(f"{p}.b2.conv3", 192, 224, 1, 7)
        c(f"{p}.b2.conv4", 224, 224, 7, 1)
        c(f"{p}.b2.conv5", 224, 256, 1, 7)
        c(f"{p}.b3.conv", 1024, 128, 1)
    c("reductionB.b0.conv1", 1024, 192, 1)
    c("reductionB.b0.conv2", 192, 192, 3)
    c("reductionB.b1.conv1", 1024, 256, 1)
    c("reductionB.b1.conv2", 256, 256, 1, 7)
    c("reductionB.b1.conv3", 256, 320, 7, 1)
    c("reductionB.b1.conv4", 320, 320, 3)
    for i in range(1, 4):
        p = f"inceptionC{i}"
        c(f"{p}.b0.conv", 1536, 256, 1)
        c(f"{p}.b1.conv1", 1536, 384, 1)
        c(f"{p}.b1.conv2a", 384, 256, 1, 3)
        c(f"{p}.b1.conv2b", 384, 256, 3, 1)
        c(f"{p}.b2.conv1", 1536, 384, 1)
        c(f"{p}.b2.conv2", 384, 448, 3, 1)
        c(f"{p}.b2.conv3", 448, 512, 1, 3)
        c(f"{p}.b2.conv4a", 512, 256, 1, 3)
        c(f"{p}.b2.conv4b", 512, 256, 3, 1)
        c(f"{p}.b3.conv", 1536, 256, 1)
    layers.append(("fc", 1536, 1000, 1536 * 1000))
    return layers


_ARCHITECTURES = {
    "resnet50": lambda: _resnet_dims((3, 4, 6, 3)),
    "resnet152": lambda: _resnet_dims((3, 8, 36, 3)),
    "densenet201": _densenet201_dims,
    "inceptionv4": _inceptionv4_dims,
}

# Per-GPU batch sizes the reference setups use for these models.
_BATCH_SIZES = {"resnet50": 32, "resnet152": 8, "densenet201": 16, "inceptionv4": 16}

# Aggregate compute targets (seconds) behind the bundled synthetic timings.
# Chosen so one simulated iteration lands at a realistic desk-model scale:
# forward+backward and factor construction in the 0.1-0.4 s range, with the
# larger models proportionally slower.
_CALIBRATION_TARGETS = {
    "resnet50": CalibrationTargets(ffbp_seconds=0.145, factor_comp_seconds=0.120),
    "resnet152": CalibrationTargets(ffbp_seconds=0.300, factor_comp_seconds=0.230),
    "densenet201": CalibrationTargets(ffbp_seconds=0.260, factor_comp_seconds=0.190),
    "inceptionv4": CalibrationTargets(ffbp_seconds=0.230, factor_comp_seconds=0.160),
}


def architecture_layer_dims(name: str) -> list[tuple[str, int, int, int]]:
    """Per-layer (name, a_dim, g_dim, grad_elements) of a bundled architecture."""
    try:
        return _ARCHITECTURES[name]()
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}; bundled: {', '.join(BUNDLED_MODELS)}") from None


def build_bundled_profile(name: str, targets: CalibrationTargets | None = None) -> ModelProfile:
    """Construct a bundled profile from its architecture table."""
    dims = architecture_layer_dims(name)
    if targets is None:
        targets = _CALIBRATION_TARGETS[name]
    return generate_synthetic_timings(name, _BATCH_SIZES[name], dims, targets)


def _data_path(filename: str):
    return resources.files("kfacsched").joinpath("data", filename)


def bundled_profile(name: str) -> ModelProfile:
    """Load a bundled profile shipped with the package."""
    if name not in BUNDLED_MODELS:
        raise ValueError(f"unknown bundled profile {name!r}; available: {', '.join(BUNDLED_MODELS)}")
    ref = _data_path(f"{name}.json")
    with resources.as_file(ref) as path:
        return load_profile(path)


def bundled_params():
    """Load the bundled synthetic 64-worker calibration."""
    from .perfmodel import read_params  # local import keeps this module numpy-free

    ref = _data_path("synthetic-64gpu.params")
    with resources.as_file(ref) as path:
        return read_params(path)
