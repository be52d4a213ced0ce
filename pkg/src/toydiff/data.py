"""Procedural grayscale shape domains and plain-PGM file I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SHAPES = ("circle", "square", "cross", "ring")
SUPERSAMPLE = 4


class PGMFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ToyImage:
    pixels: np.ndarray
    label: str
    seed: int
    center: tuple[float, float]
    radius: float
    intensity: float


@dataclass(frozen=True)
class DatasetSpec:
    domains: tuple[str, ...] = ("circle", "square")
    count: int = 250
    size: int = 16
    seed: int = 0
    radius_range: tuple[float, float] = (3.0, 6.0)
    center_jitter: float = 1.5
    intensity_range: tuple[float, float] = (0.7, 1.0)

    def __post_init__(self):
        bad = [d for d in self.domains if d not in SHAPES]
        if bad or not self.domains:
            raise ValueError(f"unknown or empty domains {bad or list(self.domains)}; choose from {SHAPES}")
        if self.count < 1:
            raise ValueError("count must be positive")
        if self.size < 7:
            raise ValueError("image size must be at least 7 (the SSIM window)")
        lo, hi = self.radius_range
        if not 0 <= lo <= hi:
            raise ValueError("radius_range must satisfy 0 <= lo <= hi")
        ilo, ihi = self.intensity_range
        if not 0 <= ilo <= ihi <= 1:
            raise ValueError("intensity_range must lie inside [0, 1]")
        if self.center_jitter < 0:
            raise ValueError("center_jitter must be >= 0")


@dataclass
class Dataset:
    items: list[ToyImage] = field(default_factory=list)

    @property
    def images(self) -> np.ndarray:
        return np.stack([it.pixels for it in self.items])

    @property
    def labels(self) -> list[str]:
        return [it.label for it in self.items]

    def __len__(self):
        return len(self.items)


def _coverage(kind: str, xs, ys, cx, cy, r):
    dx, dy = xs - cx, ys - cy
    if kind == "circle":
        return dx * dx + dy * dy <= r * r
    if kind == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if kind == "cross":
        arm = r / 3.0
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    if kind == "ring":
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (0.5 * r) ** 2)
    raise ValueError(f"unknown shape {kind!r}")


def rasterize(kind: str, size: int, center, radius: float, intensity: float) -> np.ndarray:
    """Anti-aliased shape by averaging a 4x4 subpixel grid per pixel.

    Pixel ``(i, j)`` covers ``[j, j+1) x [i, i+1)``.  A zero radius lights
    the single pixel containing the center.
    """
    cx, cy = center
    if radius == 0:
        img = np.zeros((size, size))
        i, j = int(np.clip(np.floor(cy), 0, size - 1)), int(np.clip(np.floor(cx), 0, size - 1))
        img[i, j] = intensity
        return img
    n = size * SUPERSAMPLE
    sub = (np.arange(n) + 0.5) / SUPERSAMPLE
    xs, ys = np.meshgrid(sub, sub)
    mask = _coverage(kind, xs, ys, cx, cy, radius).astype(np.float64)
    cov = mask.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))
    return np.clip(cov * intensity, 0.0, 1.0)


def image_seed(spec_seed: int, domain_idx: int, i: int) -> int:
    return int(np.random.SeedSequence([spec_seed, domain_idx, i]).generate_state(1)[0])


def make_image(kind: str, spec: DatasetSpec, seed: int) -> ToyImage:
    rng = np.random.default_rng(seed)
    mid = spec.size / 2.0
    cx, cy = mid + rng.uniform(-spec.center_jitter, spec.center_jitter, size=2)
    r = rng.uniform(*spec.radius_range)
    inten = rng.uniform(*spec.intensity_range)
    px = rasterize(kind, spec.size, (cx, cy), r, inten)
    px.flags.writeable = False
    return ToyImage(px, kind, seed, (float(cx), float(cy)), float(r), float(inten))


def generate(spec: DatasetSpec) -> Dataset:
    """All images of domain 0, then domain 1, ...; deterministic in ``spec``."""
    items = []
    for d, kind in enumerate(spec.domains):
        for i in range(spec.count):
            items.append(make_image(kind, spec, image_seed(spec.seed, d, i)))
    return Dataset(items)


# -- PGM ------------------------------------------------------------------


def write_image(path, img, comment: str = "toydiff") -> None:
    """Plain PGM (P2): header, one comment line, dims, maxval, one value per line."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    vals = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(int)
    lines = ["P2", f"# {comment}", f"{img.shape[1]} {img.shape[0]}", "255"]
    lines += [str(v) for v in vals.reshape(-1)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_image(path) -> np.ndarray:
    text = Path(path).read_text()
    tokens = []
    for line in text.splitlines():
        tokens += line.split("#", 1)[0].split()
    if not tokens or tokens[0] != "P2":
        raise PGMFormatError(f"{path}: unsupported magic {tokens[0] if tokens else ''!r}, expected 'P2'")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        vals = np.array([int(v) for v in tokens[4:]], dtype=np.float64)
    except (IndexError, ValueError) as exc:
        raise PGMFormatError(f"{path}: malformed header or pixel data") from exc
    if w < 1 or h < 1:
        raise PGMFormatError(f"{path}: bad dimensions {w}x{h}")
    if not 0 < maxval < 65536:
        raise PGMFormatError(f"{path}: maxval {maxval} out of range")
    if vals.size != w * h:
        raise PGMFormatError(f"{path}: expected {w * h} pixels, found {vals.size}")
    if np.any(vals < 0) or np.any(vals > maxval):
        raise PGMFormatError(f"{path}: pixel value outside [0, {maxval}]")
    return (vals / maxval).reshape(h, w)


def image_grid(images, gap: int = 1) -> np.ndarray:
    """Side-by-side strip with ``gap`` mid-gray separator columns."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    h = images[0].shape[0]
    sep = np.full((h, gap), 0.5)
    parts = []
    for k, im in enumerate(images):
        if k:
            parts.append(sep)
        parts.append(im)
    return np.concatenate(parts, axis=1)


def write_dataset(ds: Dataset, out_dir) -> Path:
    """Write every image as PGM plus a tab-separated ``manifest.txt`` (path, label, seed)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, it in enumerate(ds.items):
        name = f"{k:05d}_{it.label}.pgm"
        write_image(out_dir / name, it.pixels)
        rows.append(f"{name}\t{it.label}\t{it.seed}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest


def read_manifest(path) -> list[tuple[Path, str, int]]:
    path = Path(path)
    out = []
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{ln}: expected 3 tab-separated fields")
        out.append((path.parent / parts[0], parts[1], int(parts[2])))
    return out


def read_dataset(manifest_path) -> tuple[np.ndarray, list[str], list[int]]:
    rows = read_manifest(manifest_path)
    imgs = np.stack([read_image(p) for p, _, _ in rows])
    return imgs, [lab for _, lab, _ in rows], [s for _, _, s in rows]
