"""Datasets on disk, augmentation, and synthetic crowd scenes.

On-disk layout under a dataset root::

    manifest.txt        one "<split> <id>" line per sample
    <id>.ppm            8-bit binary PPM (P6) or PGM (P5)
    <id>.txt            one "x y" line per annotated person
"""
from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError, ParameterError
from .head import PointSet
from .ops import resize_matrix

MANIFEST = "manifest.txt"


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    annotations: PointSet
    id: str

    @property
    def size(self) -> Tuple[int, int]:
        return self.image.shape[1], self.image.shape[2]

    def validate(self) -> "Sample":
        H, W = self.size
        pts = self.annotations.points
        if len(pts) and ((pts < 0).any() or (pts[:, 0] > W - 1).any() or (pts[:, 1] > H - 1).any()):
            raise InputError(f"sample {self.id}: annotation outside the {W}x{H} image")
        return self


# -- PNM images -------------------------------------------------------------

def _read_header_tokens(buf: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputError("truncated PNM header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    """Read an 8-bit P6 (colour) or P5 (grey, replicated to 3 channels) image as ``(3, H, W)`` in [0, 1]."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc}") from None
    try:
        (magic, w, h, maxval), pos = _read_header_tokens(buf, 4)
        W, H, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError):
        raise InputError(f"{path}: not a PNM image") from None
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise InputError(f"{path}: only 8-bit binary P5/P6 images are supported")
    channels = 3 if magic == b"P6" else 1
    raw = np.frombuffer(buf, dtype=np.uint8, count=H * W * channels, offset=pos) \
        if len(buf) - pos >= H * W * channels else None
    if raw is None:
        raise InputError(f"{path}: truncated pixel data")
    img = raw.reshape(H, W, channels).transpose(2, 0, 1).astype(np.float64) / 255.0
    return np.repeat(img, 3, axis=0) if channels == 1 else img


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_pnm(path, image: np.ndarray) -> None:
    """Write ``(3, H, W)`` as P6 or ``(H, W)`` / ``(1, H, W)`` as P5, values in [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 2:
        magic, pix = b"P5", to_uint8(arr)
        H, W = arr.shape
    else:
        magic, pix = b"P6", to_uint8(arr).transpose(1, 2, 0)
        H, W = arr.shape[1:]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{W} {H}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pix).tobytes())


# -- annotations and datasets --------------------------------------------------

def format_points(points: np.ndarray) -> str:
    return "".join(f"{x!r} {y!r}\n" for x, y in np.asarray(points, dtype=np.float64).reshape(-1, 2).tolist())


def parse_points(text: str, source: str = "annotation") -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{source}:{lineno}: expected 'x y', got {line!r}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise InputError(f"{source}:{lineno}: non-numeric coordinate in {line!r}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def save_dataset(samples: Sequence[Sample], root, split: str = "train") -> None:
    """Write samples plus manifest entries; an existing manifest is extended."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = _read_manifest(root) if (root / MANIFEST).exists() else []
    known = set(entries)
    for s in samples:
        write_pnm(root / f"{s.id}.ppm", s.image)
        (root / f"{s.id}.txt").write_text(format_points(s.annotations.points), encoding="utf-8")
        if (split, s.id) not in known:
            entries.append((split, s.id))
            known.add((split, s.id))
    text = "".join(f"{sp} {sid}\n" for sp, sid in sorted(entries))
    (root / MANIFEST).write_text(text, encoding="utf-8")


def _read_manifest(root: Path) -> List[Tuple[str, str]]:
    path = root / MANIFEST
    if not path.exists():
        raise InputError(f"{root}: missing {MANIFEST}")
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected '<split> <id>'")
        entries.append((parts[0], parts[1]))
    return entries


def load_dataset(root, split: str = "train") -> List[Sample]:
    """Samples of one split, ordered lexicographically by id."""
    root = Path(root)
    ids = sorted(sid for sp, sid in _read_manifest(root) if sp == split)
    samples = []
    for sid in ids:
        ann = root / f"{sid}.txt"
        if not ann.exists():
            raise InputError(f"sample {sid}: missing annotation file {ann.name}")
        image = read_pnm(root / f"{sid}.ppm")
        points = parse_points(ann.read_text(encoding="utf-8"), ann.name)
        samples.append(Sample(image, PointSet(points), sid).validate())
    return samples


# -- per-sample randomness --------------------------------------------------------

def sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    """Generator derived from ``(seed, id)`` so per-sample work is order independent."""
    return np.random.default_rng([int(seed), zlib.crc32(sample_id.encode("utf-8"))])


# -- geometry helpers -------------------------------------------------------------

def resize_image(image: np.ndarray, H_out: int, W_out: int) -> np.ndarray:
    _, H, W = image.shape
    return resize_matrix(H, H_out) @ image @ resize_matrix(W, W_out).T


def resize_points(points: np.ndarray, src: Tuple[int, int], dst: Tuple[int, int]) -> np.ndarray:
    """Map pixel-centre coordinates through a half-pixel-aligned resize."""
    (H, W), (H2, W2) = src, dst
    out = points.copy()
    out[:, 0] = np.clip((points[:, 0] + 0.5) * W2 / W - 0.5, 0, W2 - 1)
    out[:, 1] = np.clip((points[:, 1] + 0.5) * H2 / H - 0.5, 0, H2 - 1)
    return out


def hflip(sample: Sample) -> Sample:
    W = sample.image.shape[2]
    pts = sample.annotations.points.copy()
    pts[:, 0] = W - 1 - pts[:, 0]
    return replace(sample, image=sample.image[:, :, ::-1].copy(), annotations=PointSet(pts))


def crop(sample: Sample, y0: int, x0: int, size: int) -> Sample:
    """Square crop; points on the top/left border are kept, the window's far side is exclusive."""
    _, H, W = sample.image.shape
    img = sample.image
    if H < y0 + size or W < x0 + size:
        img = np.pad(img, ((0, 0), (0, max(0, y0 + size - H)), (0, max(0, x0 + size - W))))
    pts = sample.annotations.points
    local = pts - np.array([x0, y0], dtype=np.float64)
    keep = (local >= 0).all(axis=1) & (local <= size - 1).all(axis=1)
    return replace(sample, image=img[:, y0:y0 + size, x0:x0 + size].copy(), annotations=PointSet(local[keep]))


@dataclass
class AugmentConfig:
    scale_prob: float = 0.5
    scale_range: Tuple[float, float] = (0.7, 1.3)
    hflip_prob: float = 0.5
    jitter_gain: float = 0.1
    jitter_offset: float = 0.05
    gaussian_noise_std: float = 0.02
    crop_size: Optional[int] = 128
    max_side: Optional[int] = None  # 1408 for very large images

    def validate(self) -> None:
        for name in ("scale_prob", "hflip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ParameterError("scale_range must be positive and ordered")
        if min(self.jitter_gain, self.jitter_offset, self.gaussian_noise_std) < 0:
            raise ParameterError("jitter and noise magnitudes must be non-negative")


def cap_max_side(sample: Sample, max_side: int) -> Sample:
    H, W = sample.size
    longest = max(H, W)
    if longest <= max_side:
        return sample
    s = max_side / longest
    H2, W2 = max(1, round(H * s)), max(1, round(W * s))
    pts = resize_points(sample.annotations.points, (H, W), (H2, W2))
    return replace(sample, image=resize_image(sample.image, H2, W2), annotations=PointSet(pts))


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Max-side cap, random scale, horizontal flip, colour jitter, noise, random crop."""
    cfg.validate()
    s = sample
    if cfg.max_side:
        s = cap_max_side(s, cfg.max_side)
    if rng.random() < cfg.scale_prob:
        f = rng.uniform(*cfg.scale_range)
        H, W = s.size
        H2, W2 = max(1, round(H * f)), max(1, round(W * f))
        s = replace(s, image=resize_image(s.image, H2, W2),
                    annotations=PointSet(resize_points(s.annotations.points, (H, W), (H2, W2))))
    if rng.random() < cfg.hflip_prob:
        s = hflip(s)
    img = s.image
    if cfg.jitter_gain or cfg.jitter_offset:
        gain = rng.uniform(1 - cfg.jitter_gain, 1 + cfg.jitter_gain, (3, 1, 1))
        offset = rng.uniform(-cfg.jitter_offset, cfg.jitter_offset, (3, 1, 1))
        img = img * gain + offset
    if cfg.gaussian_noise_std:
        img = img + rng.normal(0.0, cfg.gaussian_noise_std, img.shape)
    if img is not s.image:
        s = replace(s, image=np.clip(img, 0.0, 1.0))
    if cfg.crop_size:
        H, W = s.size
        y0 = int(rng.integers(0, max(H - cfg.crop_size, 0) + 1))
        x0 = int(rng.integers(0, max(W - cfg.crop_size, 0) + 1))
        s = crop(s, y0, x0, cfg.crop_size)
    return s


# -- synthetic scenes ----------------------------------------------------------------

@dataclass
class SynthConfig:
    blob_sigma: float = 2.0
    amplitude: float = 0.8
    background_mean: float = 0.35
    background_std: float = 0.1
    texture_cell: int = 8
    min_separation: float = 6.0
    margin: float = 2.0
    max_attempts: int = 2000


def _texture(rng: np.random.Generator, H: int, W: int, cell: int) -> np.ndarray:
    h, w = max(2, H // cell), max(2, W // cell)
    coarse = rng.normal(size=(3, h, w)) * 0.3 + rng.normal(size=(1, h, w))
    tex = resize_matrix(h, H) @ coarse @ resize_matrix(w, W).T
    return (tex - tex.mean()) / (tex.std() + 1e-12)


def place_points(rng: np.random.Generator, n: int, H: int, W: int, cfg: SynthConfig) -> np.ndarray:
    pts: List[Tuple[float, float]] = []
    attempts = 0
    while len(pts) < n and attempts < cfg.max_attempts:
        attempts += 1
        x = rng.uniform(cfg.margin, W - 1 - cfg.margin)
        y = rng.uniform(cfg.margin, H - 1 - cfg.margin)
        if all((x - px) ** 2 + (y - py) ** 2 >= cfg.min_separation ** 2 for px, py in pts):
            pts.append((x, y))
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def render_scene(rng: np.random.Generator, points: np.ndarray, H: int, W: int,
                 cfg: SynthConfig = SynthConfig()) -> np.ndarray:
    """Bright Gaussian blobs composited over a smooth textured background."""
    bg = np.clip(cfg.background_mean + cfg.background_std * _texture(rng, H, W, cfg.texture_cell), 0.0, 1.0)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    blobs = np.zeros((H, W))
    for x, y in points:
        blobs += np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2 * cfg.blob_sigma ** 2))
    alpha = cfg.amplitude * np.minimum(blobs, 1.0)
    return bg + (1.0 - bg) * alpha


def synth_generate(count_range: Tuple[int, int], H: int, W: int, seed: int, n: int = 1,
                   cfg: SynthConfig = SynthConfig(), prefix: str = "synth") -> List[Sample]:
    """``n`` reproducible scenes; the person count is uniform in ``count_range`` (inclusive).

    When the separation rule cannot place every person, the scene keeps fewer
    and its annotations record the actual count.
    """
    if H % 16 or W % 16:
        raise ParameterError(f"synthetic scenes must be divisible by 16, got {H}x{W}")
    lo, hi = count_range
    if lo < 0 or hi < lo:
        raise ParameterError(f"invalid count range {count_range}")
    samples = []
    for i in range(n):
        sid = f"{prefix}_{i:05d}"
        rng = sample_rng(seed, sid)
        count = int(rng.integers(lo, hi + 1))
        pts = place_points(rng, count, H, W, cfg)
        image = render_scene(rng, pts, H, W, cfg)
        samples.append(Sample(image, PointSet(pts), sid))
    return samples


def env_threads(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("VSSCROWD_THREADS", default)))
    except ValueError:
        return default
