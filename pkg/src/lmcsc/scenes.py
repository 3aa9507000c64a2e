"""Procedural registered gray/RGB scene pairs.

Renders piecewise-smooth scenes (low-order gradients, random ellipses and
rectangles, band-limited texture) and mixes the same structure layers
into RGB channels and a grayscale target with different weights.  Edges
therefore coincide across modalities while intensities differ, which is
exactly the correlated-modality setting the coupled model assumes.  Used
to build desk-scale datasets when no registered camera data is at hand.
"""

from __future__ import annotations

import os

import numpy as np

from .data import gaussian_blur, save_image_pgm, save_image_ppm

__all__ = ["render_scene_pair", "write_demo_dataset"]


def _shape_layer(h, w, rng, n_shapes):
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    layer = np.zeros((h, w))
    for _ in range(n_shapes):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.03, 0.22) * h, rng.uniform(0.03, 0.22) * w
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        if rng.random() < 0.5:
            mask = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        else:
            mask = (np.abs(u) <= rx * 0.8) & (np.abs(v) <= ry * 0.8)
        layer[mask] += rng.uniform(-1.0, 1.0)
    return layer


def _normalize(layer):
    span = layer.max() - layer.min()
    if span == 0:
        return np.zeros_like(layer)
    return (layer - layer.min()) / span - 0.5


def render_scene_pair(height: int, width: int, seed: int, n_shapes: int = 36):
    """Returns (gray_target (1,H,W), rgb (3,H,W)), both in [0,1].

    The grayscale target and the RGB channels are different mixtures of
    the same three structure layers, so the pair is registered and
    strongly (but not perfectly) correlated.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij"
    )
    fy, fx = rng.uniform(0.5, 2.5, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    gradient = rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy
    gradient += 0.5 * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    shapes = _shape_layer(height, width, rng, n_shapes)
    texture = gaussian_blur(rng.standard_normal((1, height, width)), sigma=1.0)[0]
    layers = [_normalize(gradient), _normalize(shapes), _normalize(texture)]

    def mix(weights, bias):
        img = bias + sum(w * l for w, l in zip(weights, layers))
        lo, hi = img.min(), img.max()
        return (0.05 + 0.9 * (img - lo) / (hi - lo))[None]

    gray = mix(rng.uniform(0.4, 1.0, 3) * np.array([0.6, 1.0, 0.35]), 0.0)
    rgb = np.concatenate(
        [mix(rng.uniform(0.4, 1.0, 3) * np.array([0.8, 1.0, 0.3]), 0.0) for _ in range(3)]
    )
    return gray, rgb


def write_demo_dataset(
    out_dir, n_train: int = 3, n_test: int = 1, size: int = 256, seed: int = 0
) -> str:
    """Render pairs, save them as PGM/PPM and write the manifest; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i in range(n_train + n_test):
        gray, rgb = render_scene_pair(size, size, seed=seed + i)
        gray_name = f"pair_{i:02d}_gray.pgm"
        rgb_name = f"pair_{i:02d}_rgb.ppm"
        save_image_pgm(gray, os.path.join(out_dir, gray_name))
        save_image_ppm(rgb, os.path.join(out_dir, rgb_name))
        split = "train" if i < n_train else "test"
        rows.append(f"{gray_name}\t{rgb_name}\t{split}")
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("# gray_target\trgb_guidance\tsplit\n")
        fh.write("\n".join(rows) + "\n")
    return manifest_path
