"""Context-aware saliency maps and the class-balanced saliency template.

The detector follows the usual context-aware recipe on gray images: a patch
is salient when it is distinct from its K most similar patches, where
similarity discounts patches that are far away. Single-scale values are
averaged over several image scales, pixels far from the attended area are
attenuated, and the result is min-max rescaled to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import CorruptTemplateFile, EmptyInput, ShapeMismatch
from .imagecore import GrayImage, resize_bilinear

TEMPLATE_MAGIC = "SALFOLD-TEMPLATE"
TEMPLATE_VERSION = 1

# bytes of the (rows x patches x patch_dim) difference block built per chunk
_CHUNK_BYTES = 32 * 2**20


@dataclass(frozen=True)
class SaliencyParams:
    patch_size: int = 7
    k: int = 64
    c: float = 3.0
    scales: tuple[float, ...] = (1.0, 0.8, 0.5, 0.3)
    resolution: tuple[int, int] = (128, 128)
    stride: int = 4
    focus_threshold: float = 0.8

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError("patch size must be odd and >= 3")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not self.scales or any(not 0 < s <= 1 for s in self.scales):
            raise ValueError("scales must lie in (0, 1]")
        if min(self.resolution) < self.patch_size:
            raise ValueError("working resolution smaller than one patch")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class SaliencyTemplate:
    values: np.ndarray
    n_images: int
    n_classes: int

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def shape(self):
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, SaliencyTemplate):
            return NotImplemented
        return (
            self.n_images == other.n_images
            and self.n_classes == other.n_classes
            and self.shape == other.shape
            and bool(np.array_equal(self.values, other.values))
        )


# ---------------------------------------------------------------------------
# detector


def extract_patches(arr: np.ndarray, patch_size: int, stride: int):
    """Flattened patches on a regular grid of centers.

    Returns ``(patches, centers, grid_shape)``; ``centers`` holds (row, col)
    pixel coordinates in row-major order.
    """
    h = patch_size // 2
    ys = np.arange(h, arr.shape[0] - h, stride)
    xs = np.arange(h, arr.shape[1] - h, stride)
    windows = np.lib.stride_tricks.sliding_window_view(arr, (patch_size, patch_size))
    patches = windows[ys - h][:, xs - h].reshape(len(ys) * len(xs), patch_size * patch_size)
    cy, cx = np.meshgrid(ys, xs, indexing="ij")
    centers = np.stack([cy.ravel(), cx.ravel()], axis=1).astype(np.float64)
    return np.ascontiguousarray(patches), centers, (len(ys), len(xs))


def knn_dissimilarity(patches: np.ndarray, centers: np.ndarray, extent: float, c: float, k: int):
    """K most similar patches for every patch, by position-discounted distance.

    ``patches`` are already scaled to [0, 1]. Ties go to the lower patch
    index. Returns ``(indices, dissimilarities)``, both ``(n, k)``.
    """
    n, dim = patches.shape
    k = min(k, n - 1)
    norm = math.sqrt(dim)
    rows = max(1, _CHUNK_BYTES // max(1, n * dim * 8))
    idx_out = np.empty((n, k), dtype=np.intp)
    val_out = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        diff = patches[start:stop, None, :] - patches[None, :, :]
        d_int = np.sqrt(np.sum(diff * diff, axis=-1)) / norm
        dpos = centers[start:stop, None, :] - centers[None, :, :]
        d_pos = np.sqrt(np.sum(dpos * dpos, axis=-1)) / extent
        d = d_int / (1.0 + c * d_pos)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        idx_out[start:stop] = order
        val_out[start:stop] = np.take_along_axis(d, order, axis=1)
    return idx_out, val_out


def single_scale_saliency(arr: np.ndarray, params: SaliencyParams):
    """Patch saliency at one scale, sampled back onto every pixel of ``arr``."""
    patches, centers, grid = extract_patches(arr / 255.0, params.patch_size, params.stride)
    if patches.shape[0] < 2:
        return np.zeros(arr.shape)
    _, dis = knn_dissimilarity(patches, centers, float(max(arr.shape)), params.c, params.k)
    values = (1.0 - np.exp(-dis.mean(axis=1))).reshape(grid)
    first = params.patch_size // 2
    out = _sample_grid(values, first, params.stride, arr.shape[0], axis=0)
    return _sample_grid(out, first, params.stride, arr.shape[1], axis=1)


def _sample_grid(values, first, stride, size, axis):
    n = values.shape[axis]
    pos = np.clip((np.arange(size) - first) / stride, 0.0, n - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    t = pos - i0
    if axis == 0:
        t = t[:, None]
    return np.take(values, i0, axis=axis) * (1.0 - t) + np.take(values, i1, axis=axis) * t


def attend(smap: np.ndarray, threshold: float) -> np.ndarray:
    """Attenuate each pixel by one minus its normalized distance to the attended area."""
    top = smap.max()
    if top <= 0:
        return smap
    attended = smap >= threshold * top
    dist = distance_transform_edt(~attended)
    diag = math.hypot(*smap.shape)
    return smap * (1.0 - dist / diag)


def minmax(arr: np.ndarray) -> np.ndarray:
    lo, hi = arr.min(), arr.max()
    if hi <= lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def compute_saliency(img, params: SaliencyParams = SaliencyParams()) -> SaliencyMap:
    """Saliency map of ``img`` at the working resolution, values in [0, 1].

    A constant image has no contrast and yields the all-zeros map.
    """
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    work = resize_bilinear(data, params.resolution)
    work = work - work.mean()
    if np.ptp(work) == 0:
        return SaliencyMap(np.zeros(params.resolution))
    acc = np.zeros(params.resolution)
    for scale in params.scales:
        shape = tuple(max(params.patch_size, int(round(scale * s))) for s in params.resolution)
        scaled = resize_bilinear(work, shape)
        acc += resize_bilinear(single_scale_saliency(scaled, params), params.resolution)
    acc /= len(params.scales)
    acc = attend(acc, params.focus_threshold)
    return SaliencyMap(np.clip(minmax(acc), 0.0, 1.0))


# ---------------------------------------------------------------------------
# template


def build_template(maps_by_class: Mapping[object, Sequence[SaliencyMap]]) -> SaliencyTemplate:
    """Average maps within each class, then average the class means.

    Classes are reduced in sorted-key order so the result does not depend on
    mapping order.
    """
    if not maps_by_class:
        raise EmptyInput("no classes given")
    shape = None
    class_means = []
    n_images = 0
    for key in sorted(maps_by_class, key=str):
        maps = list(maps_by_class[key])
        if not maps:
            raise EmptyInput(f"class {key!r} has no maps")
        stack = []
        for m in maps:
            v = m.values if isinstance(m, SaliencyMap) else np.asarray(m, dtype=np.float64)
            if shape is None:
                shape = v.shape
            elif v.shape != shape:
                raise ShapeMismatch(f"map shape {v.shape} differs from {shape}")
            stack.append(v)
        class_means.append(np.mean(stack, axis=0))
        n_images += len(stack)
    tmpl = np.clip(np.mean(class_means, axis=0), 0.0, 1.0)
    return SaliencyTemplate(tmpl, n_images=n_images, n_classes=len(class_means))


def save_template(template: SaliencyTemplate, path) -> None:
    h, w = template.shape
    lines = [f"{TEMPLATE_MAGIC} {TEMPLATE_VERSION} {w} {h} {template.n_images} {template.n_classes}"]
    for row in template.values:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_template(path) -> SaliencyTemplate:
    try:
        text = Path(path).read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptTemplateFile(f"cannot read template {path}: {exc}") from exc
    header, _, body = text.partition("\n")
    fields = header.split()
    if len(fields) != 6 or fields[0] != TEMPLATE_MAGIC:
        raise CorruptTemplateFile(f"{path}: bad template header")
    try:
        version, w, h, n_images, n_classes = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise CorruptTemplateFile(f"{path}: bad template header") from exc
    if version != TEMPLATE_VERSION or w < 1 or h < 1 or n_images < 1 or n_classes < 1:
        raise CorruptTemplateFile(f"{path}: bad template header values")
    tokens = body.split()
    if len(tokens) != w * h:
        raise CorruptTemplateFile(f"{path}: expected {w * h} values, found {len(tokens)}")
    try:
        values = np.array([float(t) for t in tokens]).reshape(h, w)
    except ValueError as exc:
        raise CorruptTemplateFile(f"{path}: non-numeric value") from exc
    if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
        raise CorruptTemplateFile(f"{path}: values outside [0, 1]")
    return SaliencyTemplate(values, n_images=n_images, n_classes=n_classes)
