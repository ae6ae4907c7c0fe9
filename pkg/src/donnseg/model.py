"""Trainable stacks of phase masks with free-space gaps and skip connections.

Each of the three color channels is an independent pipeline: the field
diffracts over a constant gap z, then picks up a per-pixel phase e^{i*theta}
at each layer (one propagate-then-modulate round per layer). A skip
connection (a -> b) re-injects the field recorded after layer a, diffracted
over (b-a)*z, by coherent addition into the input of layer b. The detector
sees the incoherent sum of the three channel intensities.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import CheckpointError, GridMismatchError
from .field import ComplexField2D, GridSpec, IntensityMap
from .propagation import _propagate_raw, fresnel_kernel_cached

DEFAULT_WAVELENGTH_M = 532e-9
DEFAULT_PITCH_M = 36e-6
DEFAULT_Z_M = 0.2794

CHANNEL_NAMES = ("R", "G", "B")

CHECKPOINT_MAGIC = b"DONNSEG1\n"

PRESETS = {
    "lane-8": {"side_px": 400, "layers": 8, "skips": ((1, 6), (2, 7), (3, 8))},
    "cityscapes-12": {"side_px": 480, "layers": 12, "skips": ((1, 12), (2, 11), (3, 10))},
    "cityscapes-15": {"side_px": 480, "layers": 15, "skips": ((1, 15), (2, 14), (3, 13))},
}


@dataclass(frozen=True)
class SkipSpec:
    """Skip connection from after layer ``from_layer`` into layer ``to_layer`` (1-based)."""

    from_layer: int
    to_layer: int

    def __post_init__(self):
        if self.from_layer < 1:
            raise ValueError(f"skip source layer must be >= 1, got {self.from_layer}")
        if self.to_layer <= self.from_layer + 1:
            raise ValueError(
                f"skip ({self.from_layer} -> {self.to_layer}) must span at least two gaps"
            )

    @property
    def gap_count(self):
        return self.to_layer - self.from_layer


@dataclass
class PhaseMask:
    """Trainable per-pixel phase; applied as the unit-modulus factor e^{i*theta}."""

    grid: GridSpec
    theta: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.theta, dtype=np.float64)
        if arr.shape != (self.grid.side_px, self.grid.side_px):
            raise GridMismatchError(
                f"theta shape {arr.shape} does not match grid side {self.grid.side_px}"
            )
        if not np.isfinite(arr).all():
            raise ValueError("theta must be finite")
        self.theta = arr


@dataclass
class ChannelPipeline:
    """Ordered masks plus skip topology for one color channel."""

    masks: list
    skips: tuple
    inter_layer_z: float

    def __post_init__(self):
        if not self.masks:
            raise ValueError("a channel needs at least one layer")
        grid = self.masks[0].grid
        for m in self.masks:
            if m.grid != grid:
                raise GridMismatchError("all masks in a channel must share one grid")
        if not self.inter_layer_z > 0:
            raise ValueError("inter_layer_z must be positive")
        self.skips = tuple(self.skips)
        seen = set()
        for s in self.skips:
            if s.to_layer > len(self.masks):
                raise ValueError(f"skip target {s.to_layer} exceeds layer count {len(self.masks)}")
            key = (s.from_layer, s.to_layer)
            if key in seen:
                raise ValueError(f"duplicate skip {key}")
            seen.add(key)

    @property
    def grid(self):
        return self.masks[0].grid

    @property
    def layer_count(self):
        return len(self.masks)


@dataclass
class DonnModel:
    """Three independent channel pipelines (R, G, B) sharing one geometry."""

    grid: GridSpec
    channels: list
    pad_factor: int = 2
    preset: str = "custom"
    seed: int = 0
    encoding: str = "amplitude"

    def __post_init__(self):
        if len(self.channels) != 3:
            raise ValueError(f"expected 3 channel pipelines, got {len(self.channels)}")
        ref = self.channels[0]
        for ch in self.channels:
            g = ch.grid
            if (g.side_px, g.pitch_m) != (self.grid.side_px, self.grid.pitch_m):
                raise GridMismatchError("channel grid geometry must match the model grid")
            if ch.layer_count != ref.layer_count or ch.skips != ref.skips:
                raise ValueError("all channels must share layer count and skip topology")
            if ch.inter_layer_z != ref.inter_layer_z:
                raise ValueError("all channels must share the inter-layer distance")
        if self.pad_factor not in (1, 2):
            raise ValueError(f"pad_factor must be 1 or 2, got {self.pad_factor}")
        if self.encoding not in ("amplitude", "sqrt"):
            raise ValueError(f"unknown encoding {self.encoding!r}")

    @property
    def layer_count(self):
        return self.channels[0].layer_count

    @property
    def skips(self):
        return self.channels[0].skips

    @property
    def inter_layer_z(self):
        return self.channels[0].inter_layer_z

    @property
    def wavelengths_m(self):
        return tuple(ch.grid.wavelength_m for ch in self.channels)

    def thetas(self):
        """Iterate (channel_index, layer_index, theta array) over all masks."""
        for c, ch in enumerate(self.channels):
            for l, mask in enumerate(ch.masks):
                yield c, l, mask.theta


def diff_mod(f, mask, kernel):
    """One computation round: diffract over the kernel's distance, then modulate."""
    if f.grid != mask.grid or f.grid != kernel.grid:
        raise GridMismatchError("field, mask and kernel must share one grid")
    out = _kernels.phase_modulate(_propagate_raw(f.values, kernel), mask.theta)
    return ComplexField2D(f.grid, out)


def _skip_kernel(ch, skip, pad_factor):
    return fresnel_kernel_cached(ch.grid, skip.gap_count * ch.inter_layer_z, pad_factor)


def _channel_forward(values0, ch, pad_factor):
    """Raw forward pass through one channel; returns (output, per-layer outputs).

    The per-layer list holds the field recorded after each mask, which both the
    skip connections and the reverse pass consume.
    """
    kern = fresnel_kernel_cached(ch.grid, ch.inter_layer_z, pad_factor)
    by_target = {}
    for s in ch.skips:
        by_target.setdefault(s.to_layer - 1, []).append(s)
    tape = []
    cur = values0
    for i, mask in enumerate(ch.masks):
        u = cur
        for s in by_target.get(i, ()):
            u = u + _propagate_raw(tape[s.from_layer - 1], _skip_kernel(ch, s, pad_factor))
        fstar = _kernels.phase_modulate(_propagate_raw(u, kern), mask.theta)
        if not np.isfinite(fstar.view(np.float64)).all():
            raise FloatingPointError(f"non-finite field after layer {i + 1}")
        tape.append(fstar)
        cur = fstar
    return cur, tape


def _channel_backward(cot_last, tape, ch, pad_factor):
    """Reverse pass through one channel; returns per-layer phase gradients.

    ``cot_last`` is the cotangent of the channel output (ownership is taken).
    The adjoint of each propagation is propagation with the conjugated
    transfer function; skip junctions fan the cotangent into both branches.
    """
    kern = fresnel_kernel_cached(ch.grid, ch.inter_layer_z, pad_factor)
    by_target = {}
    for s in ch.skips:
        by_target.setdefault(s.to_layer - 1, []).append(s)
    n = ch.layer_count
    cots = [None] * n
    cots[n - 1] = cot_last
    grads = [None] * n
    for i in range(n - 1, -1, -1):
        prev, grads[i] = _kernels.phase_modulate_backward(tape[i], ch.masks[i].theta, cots[i])
        cots[i] = None
        cu = _propagate_raw(prev, kern, adjoint=True)
        if i > 0:
            cots[i - 1] = cu if cots[i - 1] is None else cots[i - 1] + cu
        for s in by_target.get(i, ()):
            contrib = _propagate_raw(cu, _skip_kernel(ch, s, pad_factor), adjoint=True)
            a = s.from_layer - 1
            cots[a] = contrib if cots[a] is None else cots[a] + contrib
    return grads


def forward_channel(f0, ch, pad_factor=2):
    """Run one channel: iterated diffract-and-modulate with skip re-injection."""
    if f0.grid != ch.grid:
        raise GridMismatchError(f"field grid {f0.grid} does not match channel grid {ch.grid}")
    out, _ = _channel_forward(f0.values, ch, pad_factor)
    return ComplexField2D(ch.grid, out)


def forward_rgb(r, g, b, model):
    """Detector intensity: incoherent sum of the three channel intensities."""
    fields = (r, g, b)
    total = np.zeros((model.grid.side_px, model.grid.side_px), dtype=np.float64)
    for f, ch in zip(fields, model.channels):
        if f.grid != ch.grid:
            raise GridMismatchError(f"field grid {f.grid} does not match channel grid {ch.grid}")
        out, _ = _channel_forward(f.values, ch, model.pad_factor)
        _kernels.intensity_accumulate(total, out)
    return IntensityMap(model.grid, total)


def init_model(
    preset="lane-8",
    seed=0,
    side_px=None,
    layers=None,
    skips=None,
    wavelength_m=DEFAULT_WAVELENGTH_M,
    wavelength_rgb=None,
    pitch_m=DEFAULT_PITCH_M,
    z_m=DEFAULT_Z_M,
    pad_factor=2,
    encoding="amplitude",
):
    """Build a model from a preset (or explicit topology), phases i.i.d. U[0, 2pi).

    Presets fix layer count and skip topology; ``side_px`` (and for "custom"
    also ``layers``/``skips``) may override the preset geometry so the same
    topology can run at reduced desk scale.
    """
    if preset == "custom":
        if side_px is None or layers is None:
            raise ValueError("custom preset requires side_px and layers")
        skips = tuple(skips or ())
    elif preset in PRESETS:
        p = PRESETS[preset]
        side_px = side_px if side_px is not None else p["side_px"]
        layers = layers if layers is not None else p["layers"]
        skips = tuple(skips) if skips is not None else p["skips"]
    else:
        raise ValueError(f"unknown preset {preset!r}; expected one of "
                         f"{sorted(PRESETS)} or 'custom'")
    skip_specs = tuple(SkipSpec(int(a), int(b)) for a, b in skips)
    if wavelength_rgb is None:
        wavelength_rgb = (wavelength_m,) * 3
    if len(wavelength_rgb) != 3:
        raise ValueError("wavelength_rgb must list exactly three wavelengths")

    rng = np.random.default_rng(seed)
    channels = []
    for lam in wavelength_rgb:
        grid = GridSpec(int(side_px), float(pitch_m), float(lam))
        masks = [
            PhaseMask(grid, rng.uniform(0.0, 2.0 * np.pi, size=(grid.side_px, grid.side_px)))
            for _ in range(int(layers))
        ]
        channels.append(ChannelPipeline(masks, skip_specs, float(z_m)))
    base_grid = GridSpec(int(side_px), float(pitch_m), float(wavelength_m))
    return DonnModel(
        grid=base_grid,
        channels=channels,
        pad_factor=int(pad_factor),
        preset=preset,
        seed=int(seed),
        encoding=encoding,
    )


def save_checkpoint(model, path, epoch=0):
    """Write the model to a container file: one JSON header line, then the raw
    phases per channel per layer as little-endian float64 in row-major order."""
    header = {
        "channels": len(model.channels),
        "encoding": model.encoding,
        "epoch": int(epoch),
        "layers": model.layer_count,
        "pad_factor": model.pad_factor,
        "pitch_m": model.grid.pitch_m,
        "preset": model.preset,
        "seed": model.seed,
        "side_px": model.grid.side_px,
        "skips": [[s.from_layer, s.to_layer] for s in model.skips],
        "wavelength_m": model.grid.wavelength_m,
        "wavelengths_m": list(model.wavelengths_m),
        "z_m": model.inter_layer_z,
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for ch in model.channels:
            for mask in ch.masks:
                fh.write(np.ascontiguousarray(mask.theta, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (model, epoch). Rejects payloads whose length
    disagrees with the header geometry."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a donnseg checkpoint")
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: malformed checkpoint header") from exc
        payload = fh.read()

    try:
        side = int(header["side_px"])
        layers = int(header["layers"])
        n_channels = int(header["channels"])
        skips = tuple((int(a), int(b)) for a, b in header["skips"])
        wavelengths = [float(w) for w in header["wavelengths_m"]]
        pitch = float(header["pitch_m"])
        z_m = float(header["z_m"])
        pad_factor = int(header["pad_factor"])
        encoding = header["encoding"]
        preset = header["preset"]
        seed = int(header["seed"])
        epoch = int(header["epoch"])
        wavelength_m = float(header["wavelength_m"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: incomplete checkpoint header") from exc

    if n_channels != 3:
        raise CheckpointError(f"{path}: expected 3 channels, header says {n_channels}")
    expected = 3 * layers * side * side * 8
    if len(payload) != expected:
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes but the header grid implies {expected}"
        )

    arrays = np.frombuffer(payload, dtype="<f8").reshape(3, layers, side, side)
    skip_specs = tuple(SkipSpec(a, b) for a, b in skips)
    channels = []
    for c, lam in enumerate(wavelengths):
        grid = GridSpec(side, pitch, lam)
        masks = [PhaseMask(grid, arrays[c, l].copy()) for l in range(layers)]
        channels.append(ChannelPipeline(masks, skip_specs, z_m))
    model = DonnModel(
        grid=GridSpec(side, pitch, wavelength_m),
        channels=channels,
        pad_factor=pad_factor,
        preset=preset,
        seed=seed,
        encoding=encoding,
    )
    return model, epoch
