"""Multi-block, multi-radius uniform LBP histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BlockTooSmall,
    CorruptFeatureFile,
    FingerprintMismatch,
    OutOfBounds,
)
from .imagecore import GrayImage, make_grid

N_BINS = 59
FEATURES_MAGIC = "SALFOLD-FEATURES"
FEATURES_VERSION = 1


@dataclass(frozen=True)
class LbpParams:
    neighbors: int = 8
    radii: tuple[float, ...] = (1, 2)
    grid: int = 3
    uniform: bool = True
    sampling: str = "circular"

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(self.radii))
        if self.uniform and self.neighbors != 8:
            raise ValueError("uniform mapping is defined for 8 neighbours only")
        if not self.radii or any(r <= 0 for r in self.radii):
            raise ValueError("radii must be positive")
        if self.sampling not in ("circular", "square"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if self.sampling == "square" and self.neighbors != 8:
            raise ValueError("square sampling needs 8 neighbours")
        if self.grid < 1:
            raise ValueError("grid must be >= 1")

    @property
    def bins(self) -> int:
        return N_BINS if self.uniform else 2**self.neighbors

    @property
    def dims(self) -> int:
        return self.grid * self.grid * self.bins * len(self.radii)

    def fingerprint(self) -> str:
        radii = ",".join(f"{r:g}" for r in self.radii)
        kind = "u2" if self.uniform else "raw"
        return f"lbp-{kind}:P{self.neighbors}:r{radii}:n{self.grid}:{self.sampling}:d{self.dims}"


# ---------------------------------------------------------------------------
# single codes


def _snap(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) < 1e-9 else v


def neighbor_offsets(radius, neighbors: int = 8, sampling: str = "circular"):
    """(dy, dx) of each sample, counter-clockwise from east, image rows pointing down."""
    out = []
    for k in range(neighbors):
        theta = 2 * math.pi * k / neighbors
        if sampling == "square":
            dx = radius * round(math.cos(theta))
            dy = -radius * round(math.sin(theta))
        else:
            dx = radius * math.cos(theta)
            dy = -radius * math.sin(theta)
        out.append((_snap(dy), _snap(dx)))
    return out


def _margin(radius) -> int:
    return int(math.ceil(radius - 1e-9))


def lbp_code(img, x: int, y: int, radius=1, neighbors: int = 8, sampling: str = "circular") -> int:
    """LBP code of pixel (x=column, y=row); bit k set when sample k >= centre."""
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    h, w = data.shape
    m = _margin(radius)
    if x - m < 0 or y - m < 0 or x + m >= w or y + m >= h:
        raise OutOfBounds(f"radius-{radius} neighbourhood of ({x}, {y}) leaves the {w}x{h} image")
    c = float(data[y, x])
    code = 0
    for k, (dy, dx) in enumerate(neighbor_offsets(radius, neighbors, sampling)):
        fy, fx = math.floor(dy), math.floor(dx)
        ty, tx = dy - fy, dx - fx
        y0, x0 = y + fy, x + fx
        v00 = float(data[y0, x0])
        diff = v00 - c
        if tx or ty:
            v01 = float(data[y0, x0 + 1]) if tx else v00
            v10 = float(data[y0 + 1, x0]) if ty else v00
            v11 = float(data[y0 + 1 if ty else y0, x0 + 1 if tx else x0])
            diff = diff + tx * (v01 - v00) + ty * (v10 - v00) + tx * ty * (v11 - v10 - v01 + v00)
        if diff >= 0:
            code |= 1 << k
    return code


# ---------------------------------------------------------------------------
# uniform mapping


def transitions(code: int, bits: int = 8) -> int:
    return sum(((code >> i) & 1) != ((code >> ((i + 1) % bits)) & 1) for i in range(bits))


def _uniform_table() -> np.ndarray:
    table = np.full(256, N_BINS - 1, dtype=np.intp)
    uniform = [c for c in range(256) if transitions(c) <= 2]
    for b, c in enumerate(uniform):
        table[c] = b
    return table


UNIFORM_TABLE = _uniform_table()
UNIFORM_TABLE.setflags(write=False)


def uniform_map(code: int) -> int:
    """Bin 0..57 for the 58 uniform codes in ascending order, 58 otherwise."""
    return int(UNIFORM_TABLE[code])


# ---------------------------------------------------------------------------
# whole images


def lbp_image(data: np.ndarray, radius=1, neighbors: int = 8, sampling: str = "circular") -> np.ndarray:
    """Codes of all pixels whose neighbourhood fits, shape (h - 2m, w - 2m)."""
    h, w = data.shape
    m = _margin(radius)
    if h <= 2 * m or w <= 2 * m:
        return np.zeros((max(h - 2 * m, 0), max(w - 2 * m, 0)), dtype=np.intp)
    ch, cw = h - 2 * m, w - 2 * m
    c = data[m : m + ch, m : m + cw]

    def at(oy, ox):
        return data[m + oy : m + oy + ch, m + ox : m + ox + cw]

    codes = np.zeros((ch, cw), dtype=np.intp)
    for k, (dy, dx) in enumerate(neighbor_offsets(radius, neighbors, sampling)):
        fy, fx = math.floor(dy), math.floor(dx)
        ty, tx = dy - fy, dx - fx
        v00 = at(fy, fx)
        diff = v00 - c
        if tx or ty:
            v01 = at(fy, fx + 1) if tx else v00
            v10 = at(fy + 1, fx) if ty else v00
            v11 = at(fy + 1 if ty else fy, fx + 1 if tx else fx)
            diff = diff + tx * (v01 - v00) + ty * (v10 - v00) + tx * ty * (v11 - v10 - v01 + v00)
        codes |= (diff >= 0).astype(np.intp) << k
    return codes


def extract_features(img, params: LbpParams = LbpParams()) -> np.ndarray:
    """Concatenated per-block, per-radius LBP histograms.

    Blocks come in row-major order and radii vary fastest within a block.
    Each histogram is L1-normalized. Neighbourhoods may reach into
    adjacent blocks; pixels whose neighbourhood leaves the image are
    skipped.
    """
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    grid = make_grid(data, params.grid)
    need = 2 * _margin(max(params.radii)) + 1
    if min(grid.row_heights) < need or min(grid.col_widths) < need:
        raise BlockTooSmall(
            f"blocks of {min(grid.row_heights)}x{min(grid.col_widths)} px are below {need} px"
        )
    h, w = data.shape
    n = params.grid
    bins = params.bins
    row_of = np.repeat(np.arange(n), grid.row_heights)
    col_of = np.repeat(np.arange(n), grid.col_widths)
    cell_of = row_of[:, None] * n + col_of[None, :]
    hist = np.empty((n * n, len(params.radii), bins))
    for ri, r in enumerate(params.radii):
        m = _margin(r)
        codes = lbp_image(data, r, params.neighbors, params.sampling)
        labels = UNIFORM_TABLE[codes] if params.uniform else codes
        cells = cell_of[m : h - m, m : w - m]
        counts = np.bincount((cells * bins + labels).ravel(), minlength=n * n * bins)
        counts = counts.reshape(n * n, bins).astype(np.float64)
        hist[:, ri, :] = counts / counts.sum(axis=1, keepdims=True)
    return hist.ravel()


# ---------------------------------------------------------------------------
# feature matrix files


def save_features(path, X: np.ndarray, labels, fingerprint: str) -> None:
    X = np.asarray(X, dtype=np.float64)
    rows, dims = X.shape
    lines = [f"{FEATURES_MAGIC} {FEATURES_VERSION} {rows} {dims} {fingerprint}"]
    for lab, row in zip(labels, X):
        lines.append(f"{int(lab)} " + " ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_features(path, fingerprint: str | None = None):
    """Read a feature matrix; returns ``(X, labels, fingerprint)``."""
    try:
        lines = Path(path).read_text(encoding="ascii").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptFeatureFile(f"cannot read features {path}: {exc}") from exc
    head = lines[0].split() if lines else []
    if len(head) != 5 or head[0] != FEATURES_MAGIC or head[1] != str(FEATURES_VERSION):
        raise CorruptFeatureFile(f"{path}: bad header")
    try:
        rows, dims = int(head[2]), int(head[3])
    except ValueError as exc:
        raise CorruptFeatureFile(f"{path}: bad header") from exc
    stored = head[4]
    if fingerprint is not None and stored != fingerprint:
        raise FingerprintMismatch(f"{path}: features are {stored}, expected {fingerprint}")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != rows:
        raise CorruptFeatureFile(f"{path}: expected {rows} rows, found {len(body)}")
    X = np.empty((rows, dims))
    labels = np.empty(rows, dtype=np.intp)
    try:
        for i, ln in enumerate(body):
            parts = ln.split()
            if len(parts) != dims + 1:
                raise CorruptFeatureFile(f"{path}: row {i} has {len(parts) - 1} values")
            labels[i] = int(parts[0])
            X[i] = [float(v) for v in parts[1:]]
    except ValueError as exc:
        raise CorruptFeatureFile(f"{path}: non-numeric value") from exc
    return X, labels, stored
