"""Image I/O, degradation model and patch datasets.

Images are CHW float arrays in [0,1]; files are binary PGM (P5) and PPM
(P6) with maxval 255, which round-trip bit-exactly against 8-bit data.
The low-resolution observation fed to the network is the pre-upsampled
degraded target: Gaussian blur (sigma = scale/2), bicubic downscale by
the scale factor, bicubic upscale back to the original size.  Bicubic
resampling is cubic convolution with the Keys a = -0.5 kernel,
half-pixel-centered coordinates and edge-clamped sampling.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ManifestError, ShapeError

__all__ = [
    "ImagePair",
    "PatchDataset",
    "ManifestEntry",
    "load_image_pgm",
    "load_image_ppm",
    "load_image",
    "save_image_pgm",
    "save_image_ppm",
    "rgb_to_luminance",
    "bicubic_resize",
    "gaussian_blur",
    "degrade",
    "make_image_pair",
    "extract_patches",
    "concat_datasets",
    "load_manifest",
    "build_patch_dataset",
]

_WHITESPACE = b" \t\n\r\x0b\x0c"


class _PnmReader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def fail(self, msg):
        raise FormatError(f"{self.path}: {msg} at byte {self.pos}")

    def skip_space_and_comments(self):
        while self.pos < len(self.buf):
            c = self.buf[self.pos : self.pos + 1]
            if c in (b"#",):
                while self.pos < len(self.buf) and self.buf[self.pos : self.pos + 1] != b"\n":
                    self.pos += 1
            elif c and c in _WHITESPACE:
                self.pos += 1
            else:
                return

    def int_token(self) -> int:
        self.skip_space_and_comments()
        start = self.pos
        while self.pos < len(self.buf) and self.buf[self.pos : self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            self.fail("expected an integer header field")
        return int(self.buf[start : self.pos])


def _read_pnm(path) -> np.ndarray:
    """Decode a P5/P6 file to (1,H,W) or (3,H,W) float64 in [0,1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _PnmReader(buf, path)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        r.fail(f"bad magic {magic!r}, expected P5 or P6")
    r.pos = 2
    width = r.int_token()
    height = r.int_token()
    maxval = r.int_token()
    if maxval != 255:
        r.fail(f"unsupported maxval {maxval} (only 255)")
    if r.pos >= len(buf) or buf[r.pos : r.pos + 1] not in _WHITESPACE:
        r.fail("expected a single whitespace byte before the payload")
    r.pos += 1
    channels = 3 if magic == b"P6" else 1
    n = width * height * channels
    payload = buf[r.pos : r.pos + n]
    if len(payload) < n:
        r.fail(f"truncated payload, expected {n} bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return arr.reshape(1, height, width)
    return arr.reshape(height, width, 3).transpose(2, 0, 1)


def load_image_pgm(path) -> np.ndarray:
    img = _read_pnm(path)
    if img.shape[0] != 1:
        raise FormatError(f"{path}: expected a P5 grayscale file, found P6")
    return img


def load_image_ppm(path) -> np.ndarray:
    img = _read_pnm(path)
    if img.shape[0] != 3:
        raise FormatError(f"{path}: expected a P6 RGB file, found P5")
    return img


def load_image(path) -> np.ndarray:
    """Load either format; (1,H,W) for P5, (3,H,W) for P6."""
    return _read_pnm(path)


def _quantize(img: np.ndarray) -> np.ndarray:
    scaled = img * 255.0
    rounded = np.copysign(np.floor(np.abs(scaled) + 0.5), scaled)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def save_image_pgm(img: np.ndarray, path) -> None:
    if img.ndim != 3 or img.shape[0] != 1:
        raise ShapeError(f"PGM writer needs a (1,H,W) tensor, got {img.shape}")
    _, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(img[0]).tobytes())


def save_image_ppm(img: np.ndarray, path) -> None:
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"PPM writer needs a (3,H,W) tensor, got {img.shape}")
    _, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(img.transpose(1, 2, 0)).tobytes())


def rgb_to_luminance(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma: 0.299 R + 0.587 G + 0.114 B."""
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"expected a (3,H,W) tensor, got {rgb.shape}")
    y = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
    return y[None]


def _keys_cubic(t: np.ndarray) -> np.ndarray:
    # Keys cubic-convolution kernel, a = -0.5
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = 1.5 * t3 - 2.5 * t2 + 1.0
    far = -0.5 * t3 + 2.5 * t2 - 4.0 * t + 2.0
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) bicubic interpolation matrix, edge-clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in (-1, 0, 1, 2):
        cols = np.clip(base + tap, 0, n_in - 1)
        mat[rows, cols] += _keys_cubic(src - (base + tap))
    return mat


def bicubic_resize(img: np.ndarray, out_dims: tuple[int, int]) -> np.ndarray:
    """Separable Keys-kernel resampling to (h, w); output clamped to [0,1]."""
    oh, ow = out_dims
    if oh < 1 or ow < 1:
        raise ValueError(f"output dims must be >= 1, got {out_dims}")
    if img.ndim != 3:
        raise ShapeError(f"expected a (C,H,W) tensor, got {img.shape}")
    _, h, w = img.shape
    mh = _resample_matrix(h, oh)
    mw = _resample_matrix(w, ow)
    out = np.einsum("ij,cjk,lk->cil", mh, img, mw, optimize=True)
    return np.clip(out, 0.0, 1.0)


def _gaussian_taps(sigma: float) -> np.ndarray:
    radius = int(round(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _blur_matrix(n: int, taps: np.ndarray) -> np.ndarray:
    radius = (len(taps) - 1) // 2
    mat = np.zeros((n, n))
    rows = np.arange(n)
    for off in range(-radius, radius + 1):
        cols = np.clip(rows + off, 0, n - 1)  # edge-clamped
        mat[rows, cols] += taps[off + radius]
    return mat


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian, truncated at 4 sigma, renormalized, replicate edges."""
    taps = _gaussian_taps(sigma)
    _, h, w = img.shape
    bh = _blur_matrix(h, taps)
    bw = _blur_matrix(w, taps)
    return np.einsum("ij,cjk,lk->cil", bh, img, bw, optimize=True)


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Blur + bicubic downscale by ``scale`` + bicubic upscale back.

    Returns the pre-upsampled low-resolution observation at the original
    size.  Dims must be divisible by the scale; crop beforehand.
    """
    if scale not in (2, 4):
        raise ValueError(f"scale must be 2 or 4, got {scale}")
    _, h, w = hr.shape
    if h % scale or w % scale:
        raise ShapeError(f"dims {h}x{w} not divisible by scale {scale}")
    blurred = gaussian_blur(hr, sigma=scale / 2.0)
    low = bicubic_resize(blurred, (h // scale, w // scale))
    return bicubic_resize(low, (h, w))


@dataclass
class ImagePair:
    """Registered (target, guidance) pair plus the degraded target."""

    name: str
    target_hr: np.ndarray
    guidance: np.ndarray
    target_lr_up: np.ndarray
    scale: int

    def __post_init__(self):
        shapes = {self.target_hr.shape, self.guidance.shape, self.target_lr_up.shape}
        if len(shapes) != 1 or self.target_hr.shape[0] != 1:
            raise ShapeError(f"pair images must share a (1,H,W) shape, got {shapes}")
        for arr in (self.target_hr, self.guidance, self.target_lr_up):
            if arr.min() < 0 or arr.max() > 1:
                raise ValueError(f"pair {self.name}: values outside [0,1]")


def make_image_pair(name: str, hr: np.ndarray, guidance: np.ndarray, scale: int) -> ImagePair:
    """Crop both images to scale-divisible dims and attach the degraded target."""
    if hr.shape != guidance.shape:
        raise ShapeError(f"{name}: target {hr.shape} and guidance {guidance.shape} differ")
    _, h, w = hr.shape
    h -= h % scale
    w -= w % scale
    hr = hr[:, :h, :w]
    guidance = guidance[:, :h, :w]
    return ImagePair(name, hr, guidance, degrade(hr, scale), scale)


@dataclass
class PatchDataset:
    """Aligned (lr_up, guidance, hr) patch triples, stored float32."""

    lr: np.ndarray
    guidance: np.ndarray
    hr: np.ndarray
    seed: int | None = None
    source: str = ""

    def __len__(self) -> int:
        return self.lr.shape[0]


def extract_patches(pair: ImagePair, n: int, size: int, seed: int) -> PatchDataset:
    """Crop n aligned size x size triples at seeded uniform positions."""
    _, h, w = pair.target_hr.shape
    if size > h or size > w:
        raise ValueError(f"patch size {size} exceeds image dims {h}x{w}")
    rng = np.random.default_rng(seed)
    tops = rng.integers(0, h - size + 1, size=n)
    lefts = rng.integers(0, w - size + 1, size=n)
    lr = np.empty((n, 1, size, size), dtype=np.float32)
    guide = np.empty_like(lr)
    hr = np.empty_like(lr)
    for i, (top, left) in enumerate(zip(tops, lefts)):
        sl = np.s_[:, top : top + size, left : left + size]
        lr[i] = pair.target_lr_up[sl]
        guide[i] = pair.guidance[sl]
        hr[i] = pair.target_hr[sl]
    return PatchDataset(lr, guide, hr, seed=seed, source=pair.name)


def concat_datasets(parts: list[PatchDataset]) -> PatchDataset:
    if not parts:
        return PatchDataset(
            np.empty((0, 1, 0, 0), np.float32),
            np.empty((0, 1, 0, 0), np.float32),
            np.empty((0, 1, 0, 0), np.float32),
        )
    return PatchDataset(
        np.concatenate([p.lr for p in parts]),
        np.concatenate([p.guidance for p in parts]),
        np.concatenate([p.hr for p in parts]),
        seed=parts[0].seed,
        source=";".join(p.source for p in parts),
    )


@dataclass(frozen=True)
class ManifestEntry:
    nir_path: str
    rgb_path: str
    split: str


def load_manifest(path) -> list[ManifestEntry]:
    """Read a tab-separated manifest: nir_path <TAB> rgb_path <TAB> split.

    Paths are resolved relative to the manifest's directory; every file
    must exist and each pair must share spatial dims.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(
                f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
            )
        nir_rel, rgb_rel, split = (p.strip() for p in parts)
        if split not in ("train", "test"):
            raise ManifestError(f"{path}:{lineno}: split must be train or test, got {split!r}")
        nir_path = os.path.join(base, nir_rel)
        rgb_path = os.path.join(base, rgb_rel)
        for p in (nir_path, rgb_path):
            if not os.path.isfile(p):
                raise ManifestError(f"{path}:{lineno}: missing file {p}")
        nir = load_image(nir_path)
        rgb = load_image(rgb_path)
        if nir.shape[1:] != rgb.shape[1:]:
            raise ManifestError(
                f"{path}:{lineno}: dimension mismatch between {nir_path} "
                f"({nir.shape[1:]}) and {rgb_path} ({rgb.shape[1:]})"
            )
        entries.append(ManifestEntry(nir_path, rgb_path, split))
    if not entries:
        warnings.warn(f"manifest {path} lists no image pairs", stacklevel=2)
    return entries


def load_pair(entry: ManifestEntry, scale: int) -> ImagePair:
    """Materialize a manifest row: load, convert guidance to luminance, degrade."""
    nir = load_image(entry.nir_path)
    if nir.shape[0] == 3:
        nir = rgb_to_luminance(nir)
    rgb = load_image(entry.rgb_path)
    guidance = rgb_to_luminance(rgb) if rgb.shape[0] == 3 else rgb
    name = os.path.splitext(os.path.basename(entry.nir_path))[0]
    return make_image_pair(name, nir, guidance, scale)


def build_patch_dataset(
    entries: list[ManifestEntry],
    scale: int,
    patch_size: int,
    patches_total: int,
    seed: int,
) -> PatchDataset:
    """Extract the training patch set from the manifest's train split."""
    train_entries = [e for e in entries if e.split == "train"]
    if not train_entries:
        raise ManifestError("manifest has no train entries")
    base_count = patches_total // len(train_entries)
    remainder = patches_total % len(train_entries)
    parts = []
    for i, entry in enumerate(train_entries):
        pair = load_pair(entry, scale)
        count = base_count + (1 if i < remainder else 0)
        parts.append(extract_patches(pair, count, patch_size, seed + i))
    out = concat_datasets(parts)
    out.seed = seed
    return out
