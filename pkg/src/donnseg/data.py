"""Dataset ingestion and the synthetic desk-scale dataset generator.

A dataset is a directory with ``inputs/*.png`` (RGB), ``labels/*.png``
(grayscale, thresholded to a binary mask) and a ``manifest`` JSON file listing
the pairs, the declared grid side and a split tag. Inputs are center-cropped
to a square and bilinearly resampled; labels are binarized first and resampled
with nearest-neighbor so they stay binary.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError

MANIFEST_NAME = "manifest"

SYNTHETIC_KINDS = ("bars", "lanes")


@dataclass(frozen=True)
class Sample:
    """Normalized RGB channel planes plus the binary ground-truth mask."""

    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    gt: np.ndarray

    def __post_init__(self):
        planes = {"r": self.r, "g": self.g, "b": self.b}
        side = self.gt.shape[0]
        for name, plane in planes.items():
            arr = np.ascontiguousarray(plane, dtype=np.float64)
            if arr.shape != (side, side):
                raise DatasetError(f"channel {name} shape {arr.shape} != mask shape {(side, side)}")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise DatasetError(f"channel {name} values outside [0, 1]")
            object.__setattr__(self, name, arr)
        gt = np.ascontiguousarray(self.gt, dtype=np.uint8)
        if gt.shape != (side, side):
            raise DatasetError(f"mask must be square, got {gt.shape}")
        if not np.isin(gt, (0, 1)).all():
            raise DatasetError("ground truth must contain only 0/1 values")
        object.__setattr__(self, "gt", gt)

    @property
    def side_px(self):
        return self.gt.shape[0]


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    pairs: tuple
    side_px: int
    split: str

    def __len__(self):
        return len(self.pairs)


def _center_crop_square(img):
    w, h = img.size
    m = min(w, h)
    left = (w - m) // 2
    top = (h - m) // 2
    return img.crop((left, top, left + m, top + m))


def load_sample(input_path, label_path, side):
    """Decode one (RGB image, grayscale label) pair into a Sample.

    Channels are scaled by the bit-depth maximum into [0, 1]; the label is
    thresholded at 0.5 after scaling and therefore exactly binary.
    """
    img = _center_crop_square(Image.open(input_path).convert("RGB"))
    if img.size != (side, side):
        img = img.resize((side, side), Image.BILINEAR)
    rgb = np.asarray(img, dtype=np.float64) / 255.0

    label = Image.open(label_path)
    raw = np.asarray(label)
    if raw.dtype == np.uint16 or label.mode in ("I;16", "I"):
        scaled = np.asarray(label, dtype=np.float64) / 65535.0
    elif raw.dtype == np.uint8 or label.mode == "L":
        scaled = np.asarray(label.convert("L"), dtype=np.float64) / 255.0
    else:
        raise DatasetError(f"{label_path}: unsupported label depth {label.mode!r}")
    mask8 = ((scaled > 0.5) * np.uint8(255))
    mask_img = _center_crop_square(Image.fromarray(mask8, mode="L"))
    if mask_img.size != (side, side):
        mask_img = mask_img.resize((side, side), Image.NEAREST)
    gt = (np.asarray(mask_img) > 0).astype(np.uint8)

    return Sample(r=rgb[:, :, 0], g=rgb[:, :, 1], b=rgb[:, :, 2], gt=gt)


def _render_bars(rng, side):
    noise = rng.normal(0.0, 0.03, size=(side, side))
    img = np.clip(0.10 + noise, 0.0, 1.0)[:, :, None] * np.ones(3)
    w = int(rng.uniform(0.2, 0.5) * side)
    h = int(rng.uniform(0.2, 0.5) * side)
    top = rng.integers(0, side - h)
    left = rng.integers(0, side - w)
    hues = np.array([
        [1.0, 0.15, 0.15], [0.15, 1.0, 0.15], [0.2, 0.35, 1.0],
        [1.0, 1.0, 0.2], [1.0, 0.2, 1.0], [0.2, 1.0, 1.0],
    ])
    hue = hues[rng.integers(0, len(hues))] * rng.uniform(0.85, 1.0)
    mask = np.zeros((side, side), dtype=np.uint8)
    mask[top : top + h, left : left + w] = 1
    img[mask == 1] = hue
    return np.clip(img, 0.0, 1.0), mask


def _render_lanes(rng, side):
    # road-gray textured background with two bright stripes converging from
    # the bottom edge toward a vanishing point
    texture = rng.normal(0.0, 0.03, size=(side, side))
    shade = np.linspace(0.02, -0.02, side)[:, None]
    img = np.clip(0.30 + texture + shade, 0.0, 1.0)[:, :, None] * np.ones(3)
    vx = rng.uniform(0.35, 0.65) * side
    vy = rng.uniform(0.15, 0.35) * side
    y_end = int(vy + 0.12 * side)
    bottom = side - 1
    w_bottom = rng.uniform(0.045, 0.075) * side
    color = (
        np.array([0.95, 0.95, 0.95]) if rng.uniform() < 0.6 else np.array([0.95, 0.85, 0.40])
    ) * rng.uniform(0.92, 1.0)
    mask = np.zeros((side, side), dtype=np.uint8)
    for anchor in (rng.uniform(0.10, 0.30) * side, rng.uniform(0.70, 0.90) * side):
        for y in range(y_end, side):
            t = (y - vy) / (bottom - vy)
            xc = vx + (anchor - vx) * t
            half = max(0.5, w_bottom * t / 2.0)
            lo = max(0, int(round(xc - half)))
            hi = min(side - 1, int(round(xc + half)))
            if hi >= lo:
                mask[y, lo : hi + 1] = 1
    img[mask == 1] = color
    return np.clip(img, 0.0, 1.0), mask


def gen_synthetic(kind, count, side, seed, out_dir, split="train", force=False):
    """Materialize a synthetic dataset (PNG pairs plus manifest); returns the
    manifest path. Deterministic: each sample is drawn from (seed, index)."""
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if side < 32:
        raise ValueError(f"side must be >= 32, got {side}")
    root = Path(out_dir)
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists() and not force:
        raise DatasetError(f"{manifest_path} already exists; pass force to overwrite")
    (root / "inputs").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)

    render = _render_bars if kind == "bars" else _render_lanes
    pairs = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        img, mask = render(rng, side)
        name = f"{kind}_{i:05d}.png"
        Image.fromarray(np.round(img * 255.0).astype(np.uint8), mode="RGB").save(
            root / "inputs" / name
        )
        Image.fromarray(mask * np.uint8(255), mode="L").save(root / "labels" / name)
        pairs.append([f"inputs/{name}", f"labels/{name}"])

    manifest = {"pairs": pairs, "side_px": int(side), "split": split}
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest_path


def load_manifest(path):
    """Parse and validate a manifest: every listed pair must exist."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed manifest: {exc}") from None
    try:
        pairs = tuple((str(a), str(b)) for a, b in payload["pairs"])
        side_px = int(payload["side_px"])
        split = str(payload.get("split", "train"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: incomplete manifest") from exc
    if not pairs:
        raise DatasetError(f"{path}: manifest lists no sample pairs")
    root = path.parent
    for inp, lab in pairs:
        for rel in (inp, lab):
            if not (root / rel).exists():
                raise DatasetError(f"{path}: listed file missing: {rel}")
    return DatasetManifest(root=root, pairs=pairs, side_px=side_px, split=split)


def iterate(manifest, shuffle_seed=None):
    """Stream Samples from a manifest, optionally in a seeded shuffled order."""
    order = np.arange(len(manifest.pairs))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(order)
    for idx in order:
        inp, lab = manifest.pairs[idx]
        yield load_sample(manifest.root / inp, manifest.root / lab, manifest.side_px)


def load_all(manifest):
    """Materialize every sample of a manifest in listed order."""
    return list(iterate(manifest))
