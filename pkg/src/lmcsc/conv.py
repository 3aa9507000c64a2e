"""Same-padded 2-D multi-channel convolution and its exact adjoint.

Tensors are CHW ndarrays, kernel banks are (out_channels, in_channels,
kh, kw) with odd kernel dims.  The sliding operation is cross-correlation
(no kernel flip), the usual learned-layer convention; since every bank
here is either learned or randomly drawn, the flip is absorbed into the
weights.  Stride is 1 and padding is zero-fill of (kh-1)/2, (kw-1)/2, so
spatial dims are always preserved.

The heavy lifting is a windowed view + ``np.tensordot`` (a single GEMM),
which is deterministic run-to-run for a fixed BLAS configuration.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = [
    "conv2d_same",
    "conv2d_adjoint",
    "conv2d_vjp",
    "conv2d_kernel_grad",
    "adjoint_bank",
    "dict_synthesize",
]


def _check_bank(kernels):
    if kernels.ndim != 4:
        raise ShapeError(f"kernel bank must be 4-D (O,C,kh,kw), got {kernels.shape}")
    _, _, kh, kw = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel dims must be odd for symmetric padding, got {kh}x{kw}")


def _padded(x, kh, kw):
    return np.pad(x, ((0, 0), ((kh - 1) // 2,) * 2, ((kw - 1) // 2,) * 2))


def conv2d_same(input: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Cross-correlate a (C,H,W) tensor with an (O,C,kh,kw) bank.

    Returns an (O,H,W) tensor:
    ``out[o,i,j] = sum_{c,a,b} kernels[o,c,a,b] * padded[c,i+a,j+b]``.
    """
    _check_bank(kernels)
    if input.ndim != 3 or input.shape[0] != kernels.shape[1]:
        raise ShapeError(
            f"input channels {input.shape} incompatible with bank {kernels.shape}"
        )
    _, _, kh, kw = kernels.shape
    windows = sliding_window_view(_padded(input, kh, kw), (kh, kw), axis=(1, 2))
    return np.tensordot(kernels, windows, axes=([1, 2, 3], [0, 3, 4]))


def adjoint_bank(kernels: np.ndarray) -> np.ndarray:
    """Bank realizing the adjoint map: channel axes swapped, kernels rotated 180°."""
    _check_bank(kernels)
    return np.ascontiguousarray(np.flip(kernels, axis=(2, 3)).transpose(1, 0, 2, 3))


def conv2d_adjoint(input: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`conv2d_same` w.r.t. the Frobenius inner product.

    Maps an (O,H,W) tensor back to (C,H,W); with odd kernels and symmetric
    zero padding this is again a same-padded cross-correlation, with the
    flipped/swapped bank.
    """
    _check_bank(kernels)
    if input.ndim != 3 or input.shape[0] != kernels.shape[0]:
        raise ShapeError(
            f"input channels {input.shape} incompatible with bank {kernels.shape} (adjoint)"
        )
    return conv2d_same(input, adjoint_bank(kernels))


def conv2d_kernel_grad(input: np.ndarray, upstream: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Gradient of conv2d_same w.r.t. the kernel bank.

    ``d_k[o,c,a,b] = sum_{i,j} upstream[o,i,j] * padded[c,i+a,j+b]``.
    """
    windows = sliding_window_view(
        _padded(input, kh, kw), input.shape[1:], axis=(1, 2)
    )  # (C, kh, kw, H, W)
    return np.tensordot(upstream, windows, axes=([1, 2], [3, 4]))


def conv2d_vjp(input, kernels, upstream):
    """Vector-Jacobian product of conv2d_same: (d_input, d_kernels)."""
    _check_bank(kernels)
    out_shape = (kernels.shape[0],) + input.shape[1:]
    if upstream.shape != out_shape:
        raise ShapeError(f"upstream shape {upstream.shape} != output shape {out_shape}")
    d_input = conv2d_adjoint(upstream, kernels)
    d_kernels = conv2d_kernel_grad(input, upstream, kernels.shape[2], kernels.shape[3])
    return d_input, d_kernels


def dict_synthesize(U: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Synthesis pass of a convolutional dictionary: sum_i D_i * U_i.

    ``D`` must be a k->1 bank; returns the single-channel image.
    """
    _check_bank(D)
    if D.shape[0] != 1 or D.shape[1] != U.shape[0]:
        raise ShapeError(f"need a k->1 bank matching U, got D {D.shape}, U {U.shape}")
    return conv2d_same(U, D)
