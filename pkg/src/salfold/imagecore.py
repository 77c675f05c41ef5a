"""Gray images, block grids, manifests and the synthetic test corpus."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    GridTooFine,
    ImageTooSmall,
    InvalidSpec,
    ManifestError,
    UnreadableFile,
    UnsupportedFormat,
)

MIN_SIZE = 8
SPLITS = ("train", "test")
_SUPPORTED_FORMATS = {"PNG", "PPM"}


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Real-valued gray image, intensities nominally in [0, 255].

    ``data`` is a read-only float64 array of shape ``(height, width)``.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"GrayImage needs a 2-D array, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.shape, self.data.tobytes()))

    def require_min_size(self, minimum: int = MIN_SIZE) -> "GrayImage":
        if self.width < minimum or self.height < minimum:
            raise ImageTooSmall(
                f"image is {self.width}x{self.height}, minimum is {minimum}x{minimum}"
            )
        return self


def load_image(path) -> GrayImage:
    """Decode an 8-bit PNG or PGM/PPM file into a :class:`GrayImage`.

    Color images are reduced by the unweighted mean of R, G and B. No size
    check is done here; callers that need one use
    :meth:`GrayImage.require_min_size`.
    """
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(f"no such file: {path}")
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in _SUPPORTED_FORMATS:
                raise UnsupportedFormat(f"{path}: format {fmt} not supported")
            im.load()
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.float64)
            elif mode == "LA":
                arr = np.asarray(im.getchannel("L"), dtype=np.float64)
            elif mode in ("RGB", "RGBA", "P", "PA"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = rgb.sum(axis=2) / 3.0
            elif mode == "1":
                arr = np.asarray(im.convert("L"), dtype=np.float64)
            else:
                raise UnsupportedFormat(f"{path}: pixel mode {mode} is not 8-bit")
    except (UnidentifiedImageError, OSError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    return GrayImage(arr)


def save_image(img: GrayImage, path) -> None:
    """Quantize to 8 bits and write PNG, or PGM when the suffix is .pgm."""
    path = Path(path)
    q = np.clip(np.rint(img.data), 0, 255).astype(np.uint8)
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".pnm") else "PNG"
    Image.fromarray(q).save(path, format=fmt)


def resize_bilinear(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with pixel-center alignment and edge clamping."""
    arr = np.asarray(arr, dtype=np.float64)
    out_h, out_w = shape
    if arr.shape == (out_h, out_w):
        return arr.copy()
    rows = _interp_axis(arr, out_h, axis=0)
    return _interp_axis(rows, out_w, axis=1)


def _interp_axis(arr, size, axis):
    n = arr.shape[axis]
    if n == size:
        return arr
    pos = (np.arange(size) + 0.5) * (n / size) - 0.5
    pos = np.clip(pos, 0.0, n - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    t = pos - i0
    a0 = np.take(arr, i0, axis=axis)
    a1 = np.take(arr, i1, axis=axis)
    if axis == 0:
        t = t[:, None]
    return a0 * (1.0 - t) + a1 * t


# ---------------------------------------------------------------------------
# block grid


def split_sizes(total: int, n: int) -> tuple[int, ...]:
    """Balanced split of ``total`` into ``n`` parts, remainder to the leading parts."""
    base, rem = divmod(total, n)
    return tuple(base + 1 if i < rem else base for i in range(n))


def _edges(sizes: Sequence[int]) -> tuple[int, ...]:
    out = [0]
    for s in sizes:
        out.append(out[-1] + s)
    return tuple(out)


@dataclass(frozen=True)
class BlockGrid:
    rows: int
    cols: int
    row_edges: tuple[int, ...]
    col_edges: tuple[int, ...]

    @property
    def row_heights(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in zip(self.row_edges, self.row_edges[1:]))

    @property
    def col_widths(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in zip(self.col_edges, self.col_edges[1:]))

    def cell(self, i: int, j: int) -> tuple[slice, slice]:
        """Array slices of block-row ``i``, block-column ``j``."""
        return (
            slice(self.row_edges[i], self.row_edges[i + 1]),
            slice(self.col_edges[j], self.col_edges[j + 1]),
        )

    def cells(self):
        for i in range(self.rows):
            for j in range(self.cols):
                yield self.cell(i, j)


def make_grid(img, n: int) -> BlockGrid:
    """Balanced ``n`` x ``n`` partition of an image (or anything with ``.shape``)."""
    height, width = img.shape[:2]
    if n < 1 or width < n or height < n:
        raise GridTooFine(f"cannot split {width}x{height} into {n}x{n} blocks")
    return BlockGrid(
        rows=n,
        cols=n,
        row_edges=_edges(split_sizes(height, n)),
        col_edges=_edges(split_sizes(width, n)),
    )


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    code: str
    split: str

    @property
    def image_id(self) -> str:
        return self.path.stem


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    base_dir: Path = field(default=Path("."))

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    @property
    def train(self) -> list[ManifestEntry]:
        return self.split("train")

    @property
    def test(self) -> list[ManifestEntry]:
        return self.split("test")

    @property
    def classes(self) -> list[str]:
        """Distinct train-split codes, sorted; the index is the class label."""
        return sorted({e.code for e in self.train})

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def read_manifest(path) -> DatasetManifest:
    """Parse a ``path<TAB>irma_code<TAB>split`` manifest.

    Relative image paths are resolved against the manifest's directory.
    Codes are stored in canonical hyphenated form.
    """
    from .irma import parse_code

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 tab-separated fields")
        img_path, code, split = (p.strip() for p in parts)
        if split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: split must be train or test, got {split!r}")
        try:
            code = str(parse_code(code))
        except Exception as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
        p = Path(img_path)
        if not p.is_absolute():
            p = base / p
        if not p.is_file():
            raise ManifestError(f"{path}:{lineno}: image not found: {p}")
        entries.append(ManifestEntry(p, code, split))
    return DatasetManifest(tuple(entries), base)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    lines = ["# path\tirma_code\tsplit"]
    for e in manifest.entries:
        try:
            shown = e.path.relative_to(path.parent)
        except ValueError:
            shown = e.path
        lines.append(f"{shown.as_posix()}\t{e.code}\t{e.split}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_images(entries: Iterable[ManifestEntry], threads: int = 1) -> list[GrayImage]:
    """Decode manifest entries; output order equals input order."""
    paths = [e.path for e in entries]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(load_image, paths))
    return [load_image(p) for p in paths]


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 4
    train_per_class: int = 50
    test_per_class: int = 0
    size: int = 64
    noise: float = 0.05
    seed: int = 0


def synthetic_code(cls: int) -> str:
    """13-char code for synthetic class ``cls``.

    Classes share the technical axis; anatomy positions 2-3 carry the class
    number and the biological axis alternates, so two classes differ in
    1 to 3 positions.
    """
    if not 0 <= cls < 100:
        raise InvalidSpec("synthetic corpus supports at most 100 classes")
    return f"1121-120-9{cls // 10}{cls % 10}-{'700' if cls % 2 == 0 else '500'}"


def _class_texture(cls: int, n_classes: int):
    angle = math.pi * cls / n_classes
    # period in pixels; varies independently of orientation
    period = (6.0, 9.0, 4.5)[cls % 3]
    return angle, period


def render_synthetic(cls: int, n_classes: int, size: int, noise: float, rng) -> np.ndarray:
    """One synthetic 8-bit image: striped disc on a dark background plus uniform noise."""
    angle, period = _class_texture(cls, n_classes)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = (size - 1) / 2 + rng.uniform(-0.05, 0.05) * size
    cx = (size - 1) / 2 + rng.uniform(-0.05, 0.05) * size
    radius = size * rng.uniform(0.30, 0.36)
    phase = 1.3 * cls + rng.uniform(-0.5, 0.5)
    proj = xx * math.cos(angle) + yy * math.sin(angle)
    stripes = 130.0 + 70.0 * np.sin(2 * math.pi * proj / period + phase)
    disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    img = np.where(disc, stripes, 20.0)
    if noise > 0:
        img = img + rng.uniform(-noise * 255.0, noise * 255.0, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_synthetic_corpus(spec: SyntheticSpec, out_dir) -> DatasetManifest:
    """Render a deterministic labelled corpus into ``out_dir``.

    Writes ``images/*.png`` and ``manifest.tsv``; returns the manifest.
    """
    if spec.n_classes < 2:
        raise InvalidSpec("need at least 2 classes")
    if spec.train_per_class < 1 or spec.test_per_class < 0:
        raise InvalidSpec("per-class counts must be positive")
    if spec.size < MIN_SIZE:
        raise InvalidSpec(f"image size must be >= {MIN_SIZE}")
    if not 0.0 <= spec.noise <= 1.0:
        raise InvalidSpec("noise level must be within [0, 1]")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    entries = []
    for split, count in (("train", spec.train_per_class), ("test", spec.test_per_class)):
        for cls in range(spec.n_classes):
            code = synthetic_code(cls)
            for k in range(count):
                arr = render_synthetic(cls, spec.n_classes, spec.size, spec.noise, rng)
                p = img_dir / f"c{cls:02d}_{split}_{k:03d}.png"
                Image.fromarray(arr).save(p, format="PNG")
                entries.append(ManifestEntry(p, code, split))
    manifest = DatasetManifest(tuple(entries), out_dir)
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest


def remove_quietly(paths: Iterable) -> None:
    import shutil

    for p in paths:
        p = Path(p)
        try:
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                os.remove(p)
        except OSError:
            pass
