"""Run configuration: defaults, file loading, overrides and resolution.

A config file is JSON; command-line flags override file values; resolution
fills every remaining default so the persisted config is fully concrete and a
run can be reproduced from it alone.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ConfigError
from .grad import LOSS_KINDS
from .model import (
    DEFAULT_PITCH_M,
    DEFAULT_WAVELENGTH_M,
    DEFAULT_Z_M,
    PRESETS,
)

DEFAULTS = {
    "preset": "lane-8",
    "side_px": None,
    "layers": None,
    "skips": None,
    "wavelength_m": DEFAULT_WAVELENGTH_M,
    "wavelength_rgb": None,
    "pitch_m": DEFAULT_PITCH_M,
    "z_m": DEFAULT_Z_M,
    "pad_factor": 2,
    "encoding": "amplitude",
    "loss": "mse",
    "pos_weight": "auto",
    "lr": 0.01,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "epochs": 500,
    "batch_size": 64,
    "seed": 0,
    "train_manifest": None,
    "eval_manifest": None,
    "out_dir": None,
    "checkpoint_every": 10,
    "workers": 1,
}


@dataclass(frozen=True)
class RunConfig:
    preset: str
    side_px: int
    layers: int
    skips: tuple
    wavelength_m: float
    wavelength_rgb: tuple
    pitch_m: float
    z_m: float
    pad_factor: int
    encoding: str
    loss: str
    pos_weight: object
    lr: float
    beta1: float
    beta2: float
    eps: float
    epochs: int
    batch_size: int
    seed: int
    train_manifest: str
    eval_manifest: str
    out_dir: str
    checkpoint_every: int
    workers: int

    def to_json(self):
        payload = asdict(self)
        payload["skips"] = [list(s) for s in self.skips]
        payload["wavelength_rgb"] = list(self.wavelength_rgb)
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def load_config_file(path):
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed config: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return payload


def resolve_config(raw=None, overrides=None):
    """Merge defaults <- file values <- overrides and validate the result."""
    merged = dict(DEFAULTS)
    for source in (raw or {}), (overrides or {}):
        for key, value in source.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                merged[key] = value

    preset = merged["preset"]
    if preset == "custom":
        if merged["side_px"] is None or merged["layers"] is None:
            raise ConfigError("custom preset requires side_px and layers")
        merged["skips"] = merged["skips"] or []
    elif preset in PRESETS:
        p = PRESETS[preset]
        merged["side_px"] = merged["side_px"] if merged["side_px"] is not None else p["side_px"]
        merged["layers"] = merged["layers"] if merged["layers"] is not None else p["layers"]
        merged["skips"] = merged["skips"] if merged["skips"] is not None else p["skips"]
    else:
        raise ConfigError(
            f"unknown preset {preset!r}; expected one of {sorted(PRESETS)} or 'custom'"
        )

    try:
        skips = tuple((int(a), int(b)) for a, b in merged["skips"])
    except (TypeError, ValueError):
        raise ConfigError(f"skips must be a list of [from, to] pairs, got {merged['skips']!r}")

    if merged["loss"] not in LOSS_KINDS:
        raise ConfigError(f"unknown loss {merged['loss']!r}; expected one of {LOSS_KINDS}")
    if merged["pad_factor"] not in (1, 2):
        raise ConfigError(f"pad_factor must be 1 or 2, got {merged['pad_factor']!r}")
    if merged["encoding"] not in ("amplitude", "sqrt"):
        raise ConfigError(f"encoding must be 'amplitude' or 'sqrt', got {merged['encoding']!r}")
    pos_weight = merged["pos_weight"]
    if pos_weight != "auto":
        try:
            pos_weight = float(pos_weight)
        except (TypeError, ValueError):
            raise ConfigError(f"pos_weight must be 'auto' or a number, got {pos_weight!r}")
        if not pos_weight > 0:
            raise ConfigError(f"pos_weight must be positive, got {pos_weight}")
    for key in ("epochs", "batch_size", "checkpoint_every", "workers"):
        try:
            merged[key] = int(merged[key])
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be an integer, got {merged[key]!r}")
        if merged[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {merged[key]}")
    for key in ("wavelength_m", "pitch_m", "z_m"):
        if not float(merged[key]) > 0:
            raise ConfigError(f"{key} must be positive, got {merged[key]!r}")
    if not float(merged["lr"]) >= 0:
        raise ConfigError(f"lr must be non-negative, got {merged['lr']!r}")

    wavelength_rgb = merged["wavelength_rgb"]
    if wavelength_rgb is None:
        wavelength_rgb = (merged["wavelength_m"],) * 3
    else:
        wavelength_rgb = tuple(float(w) for w in wavelength_rgb)
        if len(wavelength_rgb) != 3:
            raise ConfigError("wavelength_rgb must list exactly three wavelengths")

    return RunConfig(
        preset=preset,
        side_px=int(merged["side_px"]),
        layers=int(merged["layers"]),
        skips=skips,
        wavelength_m=float(merged["wavelength_m"]),
        wavelength_rgb=wavelength_rgb,
        pitch_m=float(merged["pitch_m"]),
        z_m=float(merged["z_m"]),
        pad_factor=int(merged["pad_factor"]),
        encoding=merged["encoding"],
        loss=merged["loss"],
        pos_weight=pos_weight,
        lr=float(merged["lr"]),
        beta1=float(merged["beta1"]),
        beta2=float(merged["beta2"]),
        eps=float(merged["eps"]),
        epochs=merged["epochs"],
        batch_size=merged["batch_size"],
        seed=int(merged["seed"]),
        train_manifest=merged["train_manifest"],
        eval_manifest=merged["eval_manifest"],
        out_dir=merged["out_dir"],
        checkpoint_every=merged["checkpoint_every"],
        workers=merged["workers"],
    )


def model_from_config(cfg, seed=None):
    from .model import init_model

    return init_model(
        preset=cfg.preset,
        seed=cfg.seed if seed is None else seed,
        side_px=cfg.side_px,
        layers=cfg.layers,
        skips=cfg.skips,
        wavelength_m=cfg.wavelength_m,
        wavelength_rgb=cfg.wavelength_rgb,
        pitch_m=cfg.pitch_m,
        z_m=cfg.z_m,
        pad_factor=cfg.pad_factor,
        encoding=cfg.encoding,
    )
