"""Feature extraction: clinical one-hot quantization, FFN token embedding,
and patch embedding of toy grayscale images.

All extractors emit fixed-width token embeddings: clinical tokens share a
common width, imaging tokens share another.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


def quantize_onehot(value: float, vmin: float, vmax: float) -> np.ndarray:
    """4-bin one-hot over [vmin, vmax): bin = clamp(floor(4*(v-min)/(max-min)), 0, 3)."""
    if not vmin < vmax:
        raise ValueError(f"quantization needs min < max, got [{vmin}, {vmax}]")
    bin_idx = int(np.floor(4.0 * (value - vmin) / (vmax - vmin)))
    bin_idx = min(max(bin_idx, 0), 3)
    out = np.zeros(4)
    out[bin_idx] = 1.0
    return out


def categorical_onehot(index: int, n_levels: int) -> np.ndarray:
    """One-hot over a small categorical label set."""
    if not 0 <= index < n_levels:
        raise ValueError(f"label {index} outside [0, {n_levels})")
    out = np.zeros(n_levels)
    out[index] = 1.0
    return out


def ffn_extract(vec: Tensor, w: Tensor, b: Tensor, ln_g: Tensor, ln_b: Tensor) -> Tensor:
    """LN(GELU(W v + b)) token embedding; vec is (d,)-like rows (batch, d)."""
    if vec.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(
            f"extractor expects input width {w.data.shape[0]}, got {vec.data.shape[-1]}"
        )
    return ad.layernorm(ad.gelu(ad.matmul(vec, w) + b), ln_g, ln_b)


def split_patches(pixels: np.ndarray, patch: int) -> np.ndarray:
    """Partition (h, w) or (batch, h, w) pixels into flattened non-overlapping
    patches, row-major over the patch grid: (..., n_patches, patch*patch)."""
    *lead, h, w = pixels.shape
    if h % patch or w % patch:
        raise ShapeError(f"patch size {patch} does not divide image {h}x{w}")
    gh, gw = h // patch, w // patch
    x = pixels.reshape(*lead, gh, patch, gw, patch)
    x = np.moveaxis(x, -2, -3)  # (..., gh, gw, patch, patch)
    return x.reshape(*lead, gh * gw, patch * patch)


def join_patches(patches: np.ndarray, patch: int, height: int, width: int) -> np.ndarray:
    """Inverse of split_patches (patch extraction is a partition)."""
    *lead, n, _ = patches.shape
    gh, gw = height // patch, width // patch
    x = patches.reshape(*lead, gh, gw, patch, patch)
    x = np.moveaxis(x, -2, -3)
    return x.reshape(*lead, height, width)


def image_extract(pixels: np.ndarray, patch: int, w: Tensor, b: Tensor,
                  ln_g: Tensor, ln_b: Tensor) -> Tensor:
    """Patch-embed an 8-bit grayscale image (or batch) into imaging tokens.

    Pixels are split into patch*patch flattened cells, scaled to [0, 1],
    linearly projected, then GELU + LN as in ffn_extract.
    """
    flat = split_patches(np.asarray(pixels), patch).astype(w.data.dtype) / 255.0
    return ffn_extract(Tensor(flat), w, b, ln_g, ln_b)
