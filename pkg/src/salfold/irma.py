"""IRMA codes and the hierarchical, position-weighted ImageCLEF error score."""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import BadAxisStructure, BadCharacter, BadLength, EmptyInput, LengthMismatch, ManifestError

AXES = ("T", "D", "A", "B")
AXIS_LENGTHS = (4, 3, 3, 3)
CODE_LENGTH = sum(AXIS_LENGTHS)
WILDCARD = "*"
ALPHABET = frozenset(string.digits + string.ascii_lowercase + WILDCARD)
AXIS_WEIGHT = 0.25


@dataclass(frozen=True, order=True)
class IrmaCode:
    t: str
    d: str
    a: str
    b: str

    @property
    def axes(self) -> tuple[str, str, str, str]:
        return (self.t, self.d, self.a, self.b)

    def __str__(self):
        return "-".join(self.axes)


def parse_code(s) -> IrmaCode:
    """Parse ``TTTT-DDD-AAA-BBB`` or the bare 13-character form (case-insensitive)."""
    if isinstance(s, IrmaCode):
        return s
    text = str(s).strip().lower()
    bare = text.replace("-", "")
    if len(bare) != CODE_LENGTH:
        raise BadLength(f"IRMA code {s!r} has {len(bare)} characters, expected {CODE_LENGTH}")
    bad = sorted(set(bare) - ALPHABET)
    if bad:
        raise BadCharacter(f"IRMA code {s!r} contains invalid characters {''.join(bad)!r}")
    if "-" in text:
        parts = text.split("-")
        if tuple(len(p) for p in parts) != AXIS_LENGTHS:
            raise BadAxisStructure(f"IRMA code {s!r} is not split as TTTT-DDD-AAA-BBB")
    else:
        parts, k = [], 0
        for n in AXIS_LENGTHS:
            parts.append(bare[k : k + n])
            k += n
    return IrmaCode(*parts)


@dataclass(frozen=True)
class PositionVocabulary:
    """Characters seen at each position of each axis."""

    sets: tuple[tuple[frozenset, ...], ...]

    def b(self, axis: int, position: int) -> int:
        """Label count at 0-based ``position`` of ``axis``."""
        return len(self.sets[axis][position])

    def counts(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(len(s) for s in ax) for ax in self.sets)

    def __contains__(self, item) -> bool:
        axis, position, ch = item
        return ch in self.sets[axis][position]


def build_vocabulary(codes: Iterable) -> PositionVocabulary:
    codes = [parse_code(c) for c in codes]
    if not codes:
        raise EmptyInput("vocabulary needs at least one code")
    sets = []
    for ax, n in enumerate(AXIS_LENGTHS):
        sets.append(tuple(frozenset(c.axes[ax][i] for c in codes) for i in range(n)))
    return PositionVocabulary(tuple(sets))


@dataclass(frozen=True)
class ErrorScore:
    axes: tuple[float, float, float, float]
    gaps: tuple[tuple[str, int, str], ...] = ()  # (axis, 1-based position, char)
    wildcards: int = 0

    @property
    def total(self) -> float:
        return sum(self.axes)


def _mismatch(u: str, v: str) -> bool:
    return u != v or u == WILDCARD or v == WILDCARD


def error_score(truth, predicted, vocab: PositionVocabulary, propagate: bool = False) -> ErrorScore:
    """Per-axis error, each axis scaled so that all-wrong costs 0.25.

    Position ``i`` (1-based within its axis) costs ``1 / (b_i * i)`` when the
    characters differ. With ``propagate`` a mismatch also counts every
    deeper position of that axis as wrong.
    """
    truth, predicted = parse_code(truth), parse_code(predicted)
    axes, gaps, wild = [], [], 0
    for ax, n in enumerate(AXIS_LENGTHS):
        tr, pr = truth.axes[ax], predicted.axes[ax]
        raw = raw_max = 0.0
        wrong = False
        for i in range(n):
            b = max(vocab.b(ax, i), 1)
            w = 1.0 / (b * (i + 1))
            raw_max += w
            if WILDCARD in (tr[i], pr[i]):
                wild += 1
            elif (ax, i, pr[i]) not in vocab:
                gaps.append((AXES[ax], i + 1, pr[i]))
            wrong = (propagate and wrong) or _mismatch(tr[i], pr[i])
            if wrong:
                raw += w
        axes.append(AXIS_WEIGHT * raw / raw_max)
    return ErrorScore(tuple(axes), tuple(gaps), wild)


@dataclass(frozen=True)
class RunSummary:
    scores: tuple[ErrorScore, ...]

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def total(self) -> float:
        acc = 0.0
        for s in self.scores:
            acc += s.total
        return acc

    @property
    def mean(self) -> float:
        return self.total / self.n if self.n else 0.0

    @property
    def per_axis(self) -> tuple[float, ...]:
        sums = [0.0] * len(AXES)
        for s in self.scores:
            for k, v in enumerate(s.axes):
                sums[k] += v
        return tuple(sums)

    @property
    def gap_count(self) -> int:
        return sum(len(s.gaps) for s in self.scores)

    def summary_line(self) -> str:
        return f"TOTAL {self.total:.6f} MEAN {self.mean:.6f} N {self.n}"


def evaluate_run(truths: Sequence, predictions: Sequence, vocab: PositionVocabulary,
                 propagate: bool = False) -> RunSummary:
    if len(truths) != len(predictions):
        raise LengthMismatch(f"{len(truths)} truths but {len(predictions)} predictions")
    return RunSummary(tuple(error_score(t, p, vocab, propagate) for t, p in zip(truths, predictions)))


def format_report(ids: Sequence[str], truths: Sequence, predictions: Sequence, summary: RunSummary) -> str:
    """Aligned per-image table followed by the machine-readable summary line."""
    header = ("image", "truth", "predicted", "T", "D", "A", "B", "error")
    rows = [header]
    for i, t, p, s in zip(ids, truths, predictions, summary.scores):
        rows.append((str(i), str(parse_code(t)), str(parse_code(p)), *(f"{v:.4f}" for v in s.axes), f"{s.total:.4f}"))
    widths = [max(len(r[k]) for r in rows) for k in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    ax = "  ".join(f"{a}={v:.4f}" for a, v in zip(AXES, summary.per_axis))
    lines.append(f"# per-axis sums: {ax}; vocabulary gaps: {summary.gap_count}")
    lines.append(summary.summary_line())
    return "\n".join(lines) + "\n"


def write_predictions(path, ids: Sequence[str], codes: Sequence) -> None:
    body = "".join(f"{i}\t{parse_code(c)}\n" for i, c in zip(ids, codes))
    Path(path).write_text(body, encoding="utf-8")


def read_predictions(path) -> list[tuple[str, IrmaCode]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ManifestError(f"{path}:{lineno}: expected image_id<TAB>code")
        out.append((parts[0].strip(), parse_code(parts[1])))
    return out
