"""The radiance field: frequency encoding, MLP forward pass, and exact
layer-wise backward passes.

Architecture (a scaled-down NeRF):

* a trunk of relu layers on the encoded position, with an optional skip
  connection that re-injects the encoded position at one layer;
* a density head (1 unit) off the last trunk activation, squashed by the
  configured density activation (relu or softplus);
* a linear bottleneck whose output is concatenated with the encoded view
  direction and fed through one relu layer into the 3-channel color head,
  squashed by a sigmoid.

Parameters live in a `FieldParams` with one gradient accumulator per
array. Checkpoints store all parameters as a flat little-endian float32
blob in the layer order given by `FieldParams.names()` (trunk layers in
depth order, then density head, bottleneck, color hidden, color output;
weight before bias within each layer), plus a JSON sidecar with the config
and a format version.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputDomainError, InvalidStateError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncodingConfig:
    position_frequencies: int = 10
    direction_frequencies: int = 4
    include_input: bool = True

    def __post_init__(self):
        if self.position_frequencies < 0 or self.direction_frequencies < 0:
            raise ConfigurationError("frequency counts must be nonnegative")


@dataclass(frozen=True)
class FieldConfig:
    hidden_layers: int = 4
    hidden_width: int = 128
    density_activation: str = "relu"  # "relu" | "softplus"
    bias_init: str = "uniform01"  # "zeros" | "uniform01"
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    skip_connection_layer: int | None = 2

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ConfigurationError("need hidden_layers >= 1 and hidden_width >= 1")
        if self.density_activation not in ("relu", "softplus"):
            raise ConfigurationError(f"unknown density activation {self.density_activation!r}")
        if self.bias_init not in ("zeros", "uniform01"):
            raise ConfigurationError(f"unknown bias init {self.bias_init!r}")
        if self.skip_connection_layer is not None and not (
            1 <= self.skip_connection_layer < self.hidden_layers
        ):
            raise ConfigurationError("skip_connection_layer must be in [1, hidden_layers)")


@dataclass(frozen=True)
class FieldSample:
    density: float
    color: np.ndarray  # (3,) in [0,1]


def encoded_length(frequencies: int, include_input: bool) -> int:
    return 3 * int(include_input) + 6 * frequencies


def fourier_features(x: np.ndarray, frequencies: int, include_input: bool) -> np.ndarray:
    """Frequency-encode (..., 3) coordinates.

    Layout per point: [raw xyz (if included), then for k = 0..L-1 the block
    sin(2^k pi * xyz) followed by cos(2^k pi * xyz)].
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    dim = x.shape[-1]
    out = np.empty(x.shape[:-1] + (dim * int(include_input) + 2 * dim * frequencies,), dtype=x.dtype)
    col = 0
    if include_input:
        out[..., :dim] = x
        col = dim
    scaled = np.empty_like(x)
    for k in range(frequencies):
        np.multiply(x, x.dtype.type(2.0**k * np.pi), out=scaled)
        np.sin(scaled, out=out[..., col : col + dim])
        np.cos(scaled, out=out[..., col + dim : col + 2 * dim])
        col += 2 * dim
    return out


def encode(x: np.ndarray, config: EncodingConfig) -> np.ndarray:
    """Positional encoding of a 3-vector (or batch) at the configured L_x."""
    return fourier_features(x, config.position_frequencies, config.include_input)


class FieldParams:
    """All trainable parameters plus shape-congruent gradient accumulators."""

    def __init__(self, config: FieldConfig, values: dict[str, np.ndarray], dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.values = {k: np.ascontiguousarray(v, dtype=self.dtype) for k, v in values.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.values.items()}

    def names(self) -> list[str]:
        """Parameter names in checkpoint order."""
        return list(self.values.keys())

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def n_parameters(self) -> int:
        return sum(v.size for v in self.values.values())

    def copy(self) -> "FieldParams":
        return FieldParams(self.config, {k: v.copy() for k, v in self.values.items()}, self.dtype)

    def position_features(self) -> int:
        e = self.config.encoding
        return encoded_length(e.position_frequencies, e.include_input)

    def direction_features(self) -> int:
        e = self.config.encoding
        return encoded_length(e.direction_frequencies, e.include_input)


def _layer_shapes(config: FieldConfig) -> list[tuple[str, tuple[int, ...]]]:
    e = config.encoding
    n_pos = encoded_length(e.position_frequencies, e.include_input)
    n_dir = encoded_length(e.direction_frequencies, e.include_input)
    w = config.hidden_width
    shapes: list[tuple[str, tuple[int, ...]]] = []
    fan_in = n_pos
    for i in range(config.hidden_layers):
        if i == config.skip_connection_layer:
            fan_in += n_pos
        shapes.append((f"trunk_{i}_w", (fan_in, w)))
        shapes.append((f"trunk_{i}_b", (w,)))
        fan_in = w
    half = max(w // 2, 1)
    shapes += [
        ("sigma_w", (w, 1)),
        ("sigma_b", (1,)),
        ("bottleneck_w", (w, w)),
        ("bottleneck_b", (w,)),
        ("color_hidden_w", (w + n_dir, half)),
        ("color_hidden_b", (half,)),
        ("color_out_w", (half, 3)),
        ("color_out_b", (3,)),
    ]
    return shapes


def init_params(config: FieldConfig, seed: int, dtype=np.float32) -> FieldParams:
    """Seeded initialization: weights uniform in +-1/sqrt(fan_in); biases all
    zero or each uniform(0,1) depending on config.bias_init."""
    rng = np.random.default_rng(seed)
    values: dict[str, np.ndarray] = {}
    for name, shape in _layer_shapes(config):
        if name.endswith("_w"):
            bound = 1.0 / np.sqrt(shape[0])
            values[name] = rng.uniform(-bound, bound, size=shape)
        elif config.bias_init == "uniform01":
            values[name] = rng.uniform(0.0, 1.0, size=shape)
        else:
            values[name] = np.zeros(shape)
    return FieldParams(config, values, dtype=dtype)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class FieldTape:
    """Intermediate state of one batched forward pass, consumed by backward."""

    __slots__ = (
        "params", "sigma", "rgb", "pos_feat", "dir_feat", "trunk_inputs",
        "trunk_acts", "sigma_pre", "feat", "color_in", "color_hidden",
        "color_pre_sigmoid", "consumed",
    )

    def __init__(self):
        self.consumed = False


def forward_field(params: FieldParams, positions: np.ndarray, directions: np.ndarray) -> FieldTape:
    """Evaluate the field at (N,3) positions with (N,3) unit view directions.

    Returns a tape holding sigma (N,), rgb (N,3) and everything needed for
    an exact reverse pass.
    """
    cfg = params.config
    dt = params.dtype
    e = cfg.encoding
    tape = FieldTape()
    tape.params = params
    tape.pos_feat = fourier_features(
        np.asarray(positions, dtype=dt), e.position_frequencies, e.include_input
    ).astype(dt, copy=False)
    tape.dir_feat = fourier_features(
        np.asarray(directions, dtype=dt), e.direction_frequencies, e.include_input
    ).astype(dt, copy=False)

    v = params.values
    h = tape.pos_feat
    tape.trunk_inputs = []
    tape.trunk_acts = []
    for i in range(cfg.hidden_layers):
        if i == cfg.skip_connection_layer:
            h = np.concatenate([h, tape.pos_feat], axis=-1)
        tape.trunk_inputs.append(h)
        h = h @ v[f"trunk_{i}_w"]
        np.add(h, v[f"trunk_{i}_b"], out=h)
        np.maximum(h, 0.0, out=h)
        tape.trunk_acts.append(h)

    tape.sigma_pre = h @ v["sigma_w"] + v["sigma_b"]  # (N, 1)
    if cfg.density_activation == "relu":
        tape.sigma = np.maximum(tape.sigma_pre[:, 0], 0.0)
    else:
        tape.sigma = np.logaddexp(0.0, tape.sigma_pre[:, 0]).astype(dt, copy=False)

    n_dir = tape.dir_feat.shape[-1]
    w = cfg.hidden_width
    color_in = np.empty((h.shape[0], w + n_dir), dtype=dt)
    feat = color_in[:, :w]
    np.matmul(h, v["bottleneck_w"], out=feat)
    np.add(feat, v["bottleneck_b"], out=feat)
    color_in[:, w:] = tape.dir_feat
    tape.feat = feat
    tape.color_in = color_in
    ch = color_in @ v["color_hidden_w"]
    np.add(ch, v["color_hidden_b"], out=ch)
    np.maximum(ch, 0.0, out=ch)
    tape.color_hidden = ch
    tape.color_pre_sigmoid = _sigmoid(ch @ v["color_out_w"] + v["color_out_b"])
    tape.rgb = tape.color_pre_sigmoid
    return tape


def backward_field(params: FieldParams, tape: FieldTape | None,
                   d_sigma: np.ndarray, d_rgb: np.ndarray) -> None:
    """Accumulate d(loss)/d(theta) into params.grads for upstream gradients
    d_sigma (N,) and d_rgb (N,3). The tape is single-use."""
    if tape is None or not isinstance(tape, FieldTape):
        raise InvalidStateError("backward_field called without a forward tape")
    if tape.consumed:
        raise InvalidStateError("forward tape already consumed by a previous backward pass")
    if tape.params is not params:
        raise InvalidStateError("tape was recorded for different parameters")
    tape.consumed = True

    cfg = params.config
    v, g = params.values, params.grads
    dt = params.dtype
    d_sigma = np.asarray(d_sigma, dtype=dt).reshape(-1, 1)
    d_rgb = np.asarray(d_rgb, dtype=dt)

    # Color head.
    s = tape.color_pre_sigmoid
    d_pre = d_rgb * s * (1.0 - s)
    g["color_out_w"] += tape.color_hidden.T @ d_pre
    g["color_out_b"] += d_pre.sum(axis=0)
    d_ch = d_pre @ v["color_out_w"].T
    np.multiply(d_ch, tape.color_hidden > 0, out=d_ch)
    g["color_hidden_w"] += tape.color_in.T @ d_ch
    g["color_hidden_b"] += d_ch.sum(axis=0)
    # The direction features carry no upstream parameters, so only the
    # bottleneck block of the color-hidden weights matters here.
    d_feat = d_ch @ v["color_hidden_w"][: cfg.hidden_width].T

    # Bottleneck.
    h_last = tape.trunk_acts[-1]
    g["bottleneck_w"] += h_last.T @ d_feat
    g["bottleneck_b"] += d_feat.sum(axis=0)
    d_h = d_feat @ v["bottleneck_w"].T

    # Density head.
    if cfg.density_activation == "relu":
        d_sigma_pre = d_sigma * (tape.sigma_pre > 0)
    else:
        d_sigma_pre = d_sigma * _sigmoid(tape.sigma_pre)
    g["sigma_w"] += h_last.T @ d_sigma_pre
    g["sigma_b"] += d_sigma_pre.sum(axis=0)
    d_h += d_sigma_pre @ v["sigma_w"].T

    # Trunk, reversed. d_h is owned here, so the relu mask applies in place.
    n_pos = tape.pos_feat.shape[-1]
    for i in reversed(range(cfg.hidden_layers)):
        d_pre = np.multiply(d_h, tape.trunk_acts[i] > 0, out=d_h)
        g[f"trunk_{i}_w"] += tape.trunk_inputs[i].T @ d_pre
        g[f"trunk_{i}_b"] += d_pre.sum(axis=0)
        if i == 0:
            break
        d_h = d_pre @ v[f"trunk_{i}_w"].T
        if i == cfg.skip_connection_layer:
            d_h = np.ascontiguousarray(d_h[:, :-n_pos]) if n_pos else d_h


def evaluate(params: FieldParams, x: np.ndarray, d: np.ndarray) -> FieldSample:
    """Evaluate the field at a single position/direction pair."""
    for name, arr in params.values.items():
        if not np.all(np.isfinite(arr)):
            raise InvalidStateError(f"non-finite values in parameter {name!r}")
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-6:
        raise InputDomainError(f"direction must be a unit vector, |d| = {norm}")
    tape = forward_field(params, np.asarray(x).reshape(1, 3), d.reshape(1, 3))
    return FieldSample(density=float(tape.sigma[0]), color=tape.rgb[0].astype(np.float64))


def save_params(params: FieldParams, path) -> None:
    """Write `<path>` (flat float32 LE blob) plus a `<path>.json` sidecar
    header (same stem) describing config, layer order and shapes."""
    path = Path(path)
    blob = np.concatenate([params.values[k].ravel() for k in params.names()])
    path.write_bytes(blob.astype("<f4").tobytes())
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "dtype": params.dtype.name,
        "config": asdict(params.config),
        "layers": [{"name": k, "shape": list(params.values[k].shape)} for k in params.names()],
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))


def load_params(path) -> FieldParams:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format: {header.get('format_version')}")
    cfg_dict = dict(header["config"])
    cfg_dict["encoding"] = EncodingConfig(**cfg_dict["encoding"])
    config = FieldConfig(**cfg_dict)
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    values: dict[str, np.ndarray] = {}
    offset = 0
    for layer in header["layers"]:
        shape = tuple(layer["shape"])
        size = int(np.prod(shape))
        values[layer["name"]] = flat[offset : offset + size].reshape(shape)
        offset += size
    if offset != flat.size:
        raise ConfigurationError(f"checkpoint payload size mismatch ({flat.size} vs {offset})")
    return FieldParams(config, values, dtype=np.dtype(header["dtype"]))
