"""Saliency-guided folding of a block grid.

One block-column strip and one block-row strip are superimposed onto a
neighbour, shrinking an n x n block layout to (n-1) x (n-1). The strips to
move are the ones carrying the least template saliency.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptPlanFile, GridTooFine, PlanShapeMismatch
from .imagecore import GrayImage, make_grid, resize_bilinear

PLAN_MAGIC = "SALFOLD-PLAN"
PLAN_VERSION = 1
OPERATORS = ("mean", "max", "sum")
PAIRINGS = ("adjacent", "all")


@dataclass(frozen=True)
class Candidate:
    a: int
    b: int
    source: int
    target: int
    score: float


@dataclass(frozen=True)
class FoldingPlan:
    n: int
    column: tuple[int, int]  # (source, target)
    row: tuple[int, int]
    column_scores: tuple[Candidate, ...] = ()
    row_scores: tuple[Candidate, ...] = ()
    degenerate: bool = False
    pairing: str = "adjacent"

    def __post_init__(self):
        for src, tgt in (self.column, self.row):
            if src == tgt or not (0 <= src < self.n and 0 <= tgt < self.n):
                raise PlanShapeMismatch(f"invalid fold {src}->{tgt} for a {self.n}x{self.n} grid")
            if self.pairing == "adjacent" and abs(src - tgt) != 1:
                raise PlanShapeMismatch(f"fold {src}->{tgt} is not between adjacent strips")

    @property
    def folded_n(self) -> int:
        return self.n - 1


def strip_masses(template, n: int):
    """Template saliency summed over each block column and block row."""
    values = getattr(template, "values", template)
    values = np.asarray(values, dtype=np.float64)
    try:
        grid = make_grid(values, n)
    except GridTooFine as exc:
        raise PlanShapeMismatch(str(exc)) from exc
    col = np.array([values[:, a:b].sum() for a, b in zip(grid.col_edges, grid.col_edges[1:])])
    row = np.array([values[a:b, :].sum() for a, b in zip(grid.row_edges, grid.row_edges[1:])])
    return col, row


def fold_candidates(masses, pairing: str = "adjacent") -> list[Candidate]:
    """All fold candidates in pair order with their moved-strip score.

    Within a pair the less salient strip moves. On equal mass the strip
    farther from the grid centre moves inward; if both are equally far the
    higher index moves onto the lower one.
    """
    n = len(masses)
    if pairing == "adjacent":
        pairs = [(j, j + 1) for j in range(n - 1)]
    elif pairing == "all":
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    centre = (n - 1) / 2
    out = []
    for a, b in pairs:
        ma, mb = float(masses[a]), float(masses[b])
        if ma < mb:
            src, tgt = a, b
        elif mb < ma:
            src, tgt = b, a
        elif abs(a - centre) > abs(b - centre):
            src, tgt = a, b
        else:
            src, tgt = b, a
        out.append(Candidate(a, b, src, tgt, min(ma, mb)))
    return out


def best_candidate(cands: list[Candidate]) -> Candidate:
    # min() keeps the first of equal scores, i.e. the lowest pair index
    return min(cands, key=lambda c: c.score)


def plan_folding(template, n: int = 4, pairing: str = "adjacent") -> FoldingPlan:
    """Pick the column fold and the row fold that move the least saliency."""
    if n < 2:
        raise PlanShapeMismatch("folding needs at least a 2x2 grid")
    col_mass, row_mass = strip_masses(template, n)
    degenerate = not (np.any(col_mass > 0) or np.any(row_mass > 0))
    col_c = fold_candidates(col_mass, pairing)
    row_c = fold_candidates(row_mass, pairing)
    cb, rb = best_candidate(col_c), best_candidate(row_c)
    return FoldingPlan(
        n=n,
        column=(cb.source, cb.target),
        row=(rb.source, rb.target),
        column_scores=tuple(col_c),
        row_scores=tuple(row_c),
        degenerate=degenerate,
        pairing=pairing,
    )


def fixed_plan(n: int = 4) -> FoldingPlan:
    """Saliency-blind plan: the one a uniform template would produce."""
    return plan_folding(np.ones((n, n)), n)


def _combine(target, source, op):
    if op == "mean":
        return (target + source) / 2.0
    if op == "max":
        return np.maximum(target, source)
    if op == "sum":
        return np.clip(target + source, 0.0, 255.0)
    raise ValueError(f"unknown superposition operator {op!r}")


def _fold_axis(data, edges, src, tgt, op, axis):
    def strip(i):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(edges[i], edges[i + 1])
        return data[tuple(sl)]

    source, target = strip(src), strip(tgt)
    if source.shape != target.shape:
        source = resize_bilinear(source, target.shape)
    merged = _combine(target, source, op)
    pieces = []
    for i in range(len(edges) - 1):
        if i == src:
            continue
        pieces.append(merged if i == tgt else strip(i))
    return np.concatenate(pieces, axis=axis)


def apply_folding(img, plan: FoldingPlan, op: str = "mean") -> GrayImage:
    """Fold the plan's column strip, then its row strip.

    The result keeps (n-1) x (n-1) of the original blocks.
    """
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    try:
        grid = make_grid(data, plan.n)
    except GridTooFine as exc:
        raise PlanShapeMismatch(str(exc)) from exc
    out = _fold_axis(data, grid.col_edges, *plan.column, op, axis=1)
    out = _fold_axis(out, grid.row_edges, *plan.row, op, axis=0)
    return GrayImage(out)


# ---------------------------------------------------------------------------
# persistence


def save_plan(plan: FoldingPlan, path) -> None:
    lines = [
        f"{PLAN_MAGIC} {PLAN_VERSION}",
        f"grid {plan.n}",
        f"pairing {plan.pairing}",
        f"column {plan.column[0]} {plan.column[1]}",
        f"row {plan.row[0]} {plan.row[1]}",
        f"degenerate {int(plan.degenerate)}",
    ]
    for tag, cands in (("column_score", plan.column_scores), ("row_score", plan.row_scores)):
        for c in cands:
            lines.append(f"{tag} {c.a} {c.b} {c.source} {c.target} {c.score!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_plan(path, n: int | None = None) -> FoldingPlan:
    """Read a plan file; ``n`` if given must match the stored grid size."""
    try:
        lines = Path(path).read_text(encoding="ascii").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptPlanFile(f"cannot read plan {path}: {exc}") from exc
    if not lines or lines[0].split() != [PLAN_MAGIC, str(PLAN_VERSION)]:
        raise CorruptPlanFile(f"{path}: bad plan header")
    fields = {}
    scores = {"column_score": [], "row_score": []}
    try:
        for line in lines[1:]:
            parts = line.split()
            if not parts:
                continue
            key = parts[0]
            if key in scores:
                a, b, s, t = (int(x) for x in parts[1:5])
                scores[key].append(Candidate(a, b, s, t, float(parts[5])))
            else:
                fields[key] = parts[1:]
        grid = int(fields["grid"][0])
        pairing = fields["pairing"][0]
        column = (int(fields["column"][0]), int(fields["column"][1]))
        row = (int(fields["row"][0]), int(fields["row"][1]))
        degenerate = bool(int(fields["degenerate"][0]))
    except (KeyError, IndexError, ValueError) as exc:
        raise CorruptPlanFile(f"{path}: malformed plan record") from exc
    if n is not None and grid != n:
        raise PlanShapeMismatch(f"{path}: plan is for a {grid}x{grid} grid, config expects {n}x{n}")
    return FoldingPlan(
        n=grid,
        column=column,
        row=row,
        column_scores=tuple(scores["column_score"]),
        row_scores=tuple(scores["row_score"]),
        degenerate=degenerate,
        pairing=pairing,
    )
