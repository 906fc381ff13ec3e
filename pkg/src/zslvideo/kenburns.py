"""Synthetic 16-frame clips from still images (Ken Burns effect).

A clip pans and zooms between two square crops. Frame ``k`` uses the crop
``start + (k / 15) * (end - start)`` and is resampled to 112x112.

Sampling: crop sides are integers drawn uniformly from
``[ceil(min_scale * m), floor(max_scale * m)]`` with ``m = min(H, W)``, and
the crop's top-left corner is an integer drawn uniformly from the positions
that keep it inside the image. Centers are therefore half-integers or
integers and in-bounds checks are exact.

Resampling: pixel ``(i, j)`` of the source covers ``[j, j+1) x [i, i+1)``
with its center at ``(j + 0.5, i + 0.5)``. Output pixel ``(u, v)`` of a crop
with center ``(cx, cy)`` and side ``s`` samples the source at
``x = cx - s/2 + (v + 0.5) * s / 112`` (likewise ``y`` with ``u``), using
bilinear interpolation between the four neighbouring pixel centers
(coordinates clamped to the outermost centers).

Images are binary PPM (P6). Convert other formats first, e.g. with Pillow:
``Image.open(src).convert("RGB").save(dst)`` where ``dst`` ends in ``.ppm``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import VERSION_CLIP_DUMP, VideoFeatures, write_feature_store
from .seeds import derive_seed

log = logging.getLogger(__name__)

N_FRAMES = 16
FRAME_SIZE = 112
MIN_SIDE = 8


class ImageError(ValueError):
    pass


@dataclass(frozen=True)
class Crop:
    cx: float
    cy: float
    side: float

    def inside(self, height: int, width: int) -> bool:
        h = self.side / 2
        return (self.side >= MIN_SIDE and self.cx - h >= 0 and self.cy - h >= 0
                and self.cx + h <= width and self.cy + h <= height)

    def lerp(self, other: "Crop", t: float) -> "Crop":
        return Crop(self.cx + t * (other.cx - self.cx),
                    self.cy + t * (other.cy - self.cy),
                    self.side + t * (other.side - self.side))

    def fmt(self) -> str:
        return f"{self.cx!r},{self.cy!r},{self.side!r}"

    @classmethod
    def parse(cls, text: str) -> "Crop":
        parts = text.split(",")
        if len(parts) != 3:
            raise ValueError(f"bad crop {text!r}")
        return cls(*(float(p) for p in parts))


@dataclass(frozen=True)
class CropPath:
    start: Crop
    end: Crop

    def at(self, k: int) -> Crop:
        return self.start.lerp(self.end, k / (N_FRAMES - 1))

    def inside(self, height: int, width: int) -> bool:
        return self.start.inside(height, width) and self.end.inside(height, width)


def _ppm_header(data: bytes, path) -> tuple[int, int, int, int]:
    """``(width, height, maxval, payload offset)`` of a P6 file."""
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ImageError(f"{path}: not a binary PPM (P6) file")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ImageError(f"{path}: bad PPM header") from None
    if not (width > 0 and height > 0 and 0 < maxval < 65536):
        raise ImageError(f"{path}: bad PPM dimensions or maxval")
    return width, height, maxval, pos + 1  # one whitespace byte after maxval


def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6) as an ``H x W x 3`` float array in [0, 1]."""
    data = Path(path).read_bytes()
    width, height, maxval, pos = _ppm_header(data, path)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height * 3
    if len(data) - pos < n * dtype.itemsize:
        raise ImageError(f"{path}: truncated PPM payload")
    px = np.frombuffer(data, dtype=dtype, count=n, offset=pos)
    return px.reshape(height, width, 3).astype(np.float64) / maxval


def ppm_size(path) -> tuple[int, int]:
    """``(height, width)`` from the PPM header."""
    with open(path, "rb") as fh:
        head = fh.read(4096)
    width, height, _, _ = _ppm_header(head, path)
    return height, width


def write_ppm(path, image: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(image) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ImageError("image must be H x W x 3")
    if not np.all(np.isfinite(image)):
        raise ImageError("image has non-finite values")


def _sample_crop(height: int, width: int, rng: np.random.Generator,
                 min_scale: float, max_scale: float) -> Crop:
    m = min(height, width)
    lo = max(MIN_SIDE, math.ceil(min_scale * m))
    hi = min(m, math.floor(max_scale * m))
    if lo > hi:
        raise ImageError(f"no valid crop side for a {height}x{width} image")
    side = int(rng.integers(lo, hi + 1))
    x0 = int(rng.integers(0, width - side + 1))
    y0 = int(rng.integers(0, height - side + 1))
    return Crop(x0 + side / 2, y0 + side / 2, float(side))


def sample_crop_path(image_or_shape, rng: np.random.Generator, min_scale: float = 0.5,
                     max_scale: float = 1.0) -> CropPath:
    """Independent random start and end crops (positions and sides)."""
    if isinstance(image_or_shape, np.ndarray):
        height, width = image_or_shape.shape[:2]
    else:
        height, width = image_or_shape
    if not 0 < min_scale <= max_scale <= 1:
        raise ValueError("need 0 < min_scale <= max_scale <= 1")
    if min(height, width) < 2 * MIN_SIDE:
        raise ImageError(f"image {height}x{width} is smaller than {2 * MIN_SIDE} pixels on a side")
    start = _sample_crop(height, width, rng, min_scale, max_scale)
    end = _sample_crop(height, width, rng, min_scale, max_scale)
    return CropPath(start, end)


def _axis_weights(lo_edge: float, side: float, n_src: int):
    """Neighbour indices and interpolation fractions along one axis."""
    pos = lo_edge + (np.arange(FRAME_SIZE) + 0.5) * (side / FRAME_SIZE) - 0.5
    pos = np.clip(pos, 0.0, n_src - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, pos - i0


def resample_crop(image: np.ndarray, crop: Crop) -> np.ndarray:
    h, w = image.shape[:2]
    r0, r1, fy = _axis_weights(crop.cy - crop.side / 2, crop.side, h)
    c0, c1, fx = _axis_weights(crop.cx - crop.side / 2, crop.side, w)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    # a + t*(b - a) keeps constant fields exactly constant
    top = image[r0][:, c0] + fx * (image[r0][:, c1] - image[r0][:, c0])
    bot = image[r1][:, c0] + fx * (image[r1][:, c1] - image[r1][:, c0])
    return top + fy * (bot - top)


@dataclass(frozen=True)
class SyntheticClip:
    frames: np.ndarray  # 16 x 112 x 112 x 3
    crops: tuple[Crop, ...]


def render_clip(image: np.ndarray, path: CropPath) -> SyntheticClip:
    image = np.asarray(image, dtype=np.float64)
    _check_image(image)
    h, w = image.shape[:2]
    if not path.inside(h, w):
        raise ImageError("crop path leaves the image")
    crops = tuple(path.at(k) for k in range(N_FRAMES))
    frames = np.stack([resample_crop(image, c) for c in crops])
    # rounding in the interpolation can overshoot the input range by an ulp
    lo, hi = image.min(), image.max()
    np.clip(frames, lo, hi, out=frames)
    return SyntheticClip(frames, crops)


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    class_name: str
    path: CropPath
    seed: int

    def line(self) -> str:
        return f"{self.image_path}\t{self.class_name}\t{self.path.start.fmt()}\t{self.path.end.fmt()}\t{self.seed}"


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    seed: int
    clips_per_image: int
    min_scale: float = 0.5
    max_scale: float = 1.0
    skipped: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        head = [
            "# zslvideo kenburns manifest v1",
            f"# seed={self.seed}",
            f"# clips_per_image={self.clips_per_image}",
            f"# crop_scale={self.min_scale!r},{self.max_scale!r}",
            f"# skipped_classes={','.join(self.skipped or [])}",
        ]
        return "\n".join(head + [e.line() for e in self.entries]) + "\n"


def parse_manifest(text: str) -> Manifest:
    meta: dict[str, str] = {}
    entries = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].strip().split("=", 1)
                meta[k] = v
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"manifest line {lineno}: expected 5 tab-separated fields")
        entries.append(ManifestEntry(parts[0], parts[1], CropPath(Crop.parse(parts[2]), Crop.parse(parts[3])),
                                     int(parts[4])))
    lo, hi = (float(x) for x in meta.get("crop_scale", "0.5,1.0").split(","))
    skipped = [s for s in meta.get("skipped_classes", "").split(",") if s]
    return Manifest(entries, int(meta.get("seed", 0)), int(meta.get("clips_per_image", 1)), lo, hi, skipped)


def read_manifest(path) -> Manifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def write_manifest(path, manifest: Manifest) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest.to_text())


def build_pretraining_dataset(image_dir, class_list: Sequence[str] | None = None, clips_per_image: int = 1,
                              seed: int = 0, min_scale: float = 0.5, max_scale: float = 1.0) -> Manifest:
    """Plan Ken Burns clips for a directory tree of ``<class>/<image>.ppm`` files.

    Every clip gets its own seed derived from ``(seed, image index, clip
    index)``, so a single manifest row can be re-rendered in isolation.
    Class directories without images are skipped with a warning.
    """
    root = Path(image_dir)
    if class_list is None:
        class_list = sorted(p.name for p in root.iterdir() if p.is_dir())
    entries, skipped = [], []
    image_idx = 0
    for cls in class_list:
        images = sorted((root / cls).glob("*.ppm")) if (root / cls).is_dir() else []
        if not images:
            log.warning("class %r has no images, skipped", cls)
            skipped.append(cls)
            continue
        for img_path in images:
            shape = ppm_size(img_path)
            for clip in range(clips_per_image):
                clip_seed = derive_seed(seed, image_idx, clip)
                path = sample_crop_path(shape, np.random.default_rng(clip_seed), min_scale, max_scale)
                entries.append(ManifestEntry(img_path.relative_to(root).as_posix(), cls, path, clip_seed))
            image_idx += 1
    return Manifest(entries, seed, clips_per_image, min_scale, max_scale, skipped)


def validate_manifest(manifest: Manifest, image_dir) -> list[str]:
    """Problems found when re-checking every crop against its image; empty if none."""
    problems = []
    sizes: dict[str, tuple[int, int]] = {}
    for e in manifest.entries:
        if e.image_path not in sizes:
            sizes[e.image_path] = ppm_size(Path(image_dir) / e.image_path)
        h, w = sizes[e.image_path]
        if not e.path.inside(h, w):
            problems.append(f"{e.image_path}: crop path out of bounds")
        replay = sample_crop_path((h, w), np.random.default_rng(e.seed), manifest.min_scale, manifest.max_scale)
        if replay != e.path:
            problems.append(f"{e.image_path}: crop path does not match its seed")
    return problems


def dump_clips(path, manifest: Manifest, image_dir) -> None:
    """Render every manifest entry into the clip-dump variant of the feature store."""
    videos = []
    cache: dict[str, np.ndarray] = {}
    for i, e in enumerate(manifest.entries):
        if e.image_path not in cache:
            cache = {e.image_path: read_ppm(Path(image_dir) / e.image_path)}
        clip = render_clip(cache[e.image_path], e.path)
        videos.append(VideoFeatures(f"{i:06d}:{e.image_path}", clip.frames.reshape(N_FRAMES, -1)))
    write_feature_store(path, videos, FRAME_SIZE * FRAME_SIZE * 3, version=VERSION_CLIP_DUMP)
