"""Soft-margin SVM trained by SMO, with one-vs-one multi-class voting.

The solver works on the dual in minimization form::

    min  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K(x_i, x_j)

and picks its working pair with second-order information (maximal
violating ``i``, then the ``j`` with the largest guaranteed decrease).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import (
    CorruptModelFile,
    DimensionMismatch,
    FingerprintMismatch,
    NonFiniteFeature,
    SingleClassInput,
)

MODEL_MAGIC = "SALFOLD-SVM"
MODEL_VERSION = 1
TAU = 1e-12
KERNELS = ("rbf", "linear")


@dataclass(frozen=True)
class SvmParams:
    C: float = 1.0
    gamma: float | None = None  # None means 1 / dimension
    tol: float = 1e-3
    max_iter: int = 100_000
    kernel: str = "rbf"
    cache_bytes: int = 256 * 2**20

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")

    def gamma_for(self, dims: int) -> float:
        return self.gamma if self.gamma is not None else 1.0 / dims


# ---------------------------------------------------------------------------
# kernels


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: str = "rbf", gamma: float = 1.0) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if kernel == "linear":
        return A @ B.T
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def gram_matrix(X: np.ndarray, kernel: str = "rbf", gamma: float = 1.0) -> np.ndarray:
    K = kernel_matrix(X, X, kernel, gamma)
    K = (K + K.T) / 2.0
    if kernel == "rbf":
        np.fill_diagonal(K, 1.0)
    return K


def kernel_row(X: np.ndarray, x: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
    """K(X_t, x) for every row, by direct differences."""
    if kernel == "linear":
        return X @ x
    d = X - x
    return np.exp(-gamma * np.einsum("ij,ij->i", d, d))


# ---------------------------------------------------------------------------
# SMO


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    gradient: np.ndarray
    iterations: int
    converged: bool
    gap: float

    def objective(self, Q: np.ndarray) -> float:
        """Dual objective in maximization form: sum(a) - 1/2 a'Qa."""
        a = self.alpha
        return float(a.sum() - 0.5 * a @ Q @ a)


class _FullQ:
    def __init__(self, K, y):
        self.Q = K * np.outer(y, y)
        self.diag = np.diag(self.Q).copy()

    def row(self, i):
        return self.Q[i]


class _RowQ:
    """Kernel rows computed on demand when the full matrix exceeds the budget."""

    def __init__(self, X, y, kernel, gamma):
        self.X, self.y, self.kernel, self.gamma = X, y, kernel, gamma
        if kernel == "rbf":
            self.diag = np.ones(len(y))
        else:
            self.diag = np.einsum("ij,ij->i", X, X)

    def row(self, i):
        return self.y[i] * self.y * kernel_row(self.X, self.X[i], self.kernel, self.gamma)


def smo_solve(Qsrc, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 100_000) -> SmoResult:
    """Run SMO on a Q provider (``.row(i)``, ``.diag``) or a dense kernel matrix."""
    y = np.asarray(y, dtype=np.float64)
    if isinstance(Qsrc, np.ndarray):
        Qsrc = _FullQ(Qsrc, y)
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = Qsrc.diag
    pos = y > 0
    it = 0
    gap = math.inf
    converged = False
    while it < max_iter:
        # I_up: can move along +y; I_low: can move along -y
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        score = -y * G
        if not up.any() or not low.any():
            converged = True
            gap = 0.0
            break
        su = np.where(up, score, -np.inf)
        i = int(np.argmax(su))
        gmax = su[i]
        sl = np.where(low, score, np.inf)
        gmin = float(sl.min())
        gap = gmax - gmin
        if gap < tol:
            converged = True
            break
        Qi = Qsrc.row(i)
        b = gmax - score
        quad = QD[i] + QD - 2.0 * y[i] * y * Qi
        quad = np.where(quad > 0, quad, TAU)
        cand = low & (b > 0)
        obj = np.where(cand, -(b * b) / quad, np.inf)
        j = int(np.argmin(obj))
        Qj = Qsrc.row(j)
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            q = QD[i] + QD[j] + 2.0 * Qi[j]
            q = q if q > 0 else TAU
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            q = QD[i] + QD[j] - 2.0 * Qi[j]
            q = q if q > 0 else TAU
            delta = (G[i] - G[j]) / q
            s = ai + aj
            ni, nj = ai - delta, aj + delta
            if s > C:
                if ni > C:
                    ni, nj = C, s - C
            elif nj < 0:
                nj, ni = 0.0, s
            if s > C:
                if nj > C:
                    nj, ni = C, s - C
            elif ni < 0:
                ni, nj = 0.0, s
        G += Qi * (ni - ai) + Qj * (nj - aj)
        alpha[i], alpha[j] = ni, nj
        it += 1
    return SmoResult(alpha, _bias(alpha, G, y, C), G, it, converged, float(gap))


def _bias(alpha, G, y, C):
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yG[free].mean()
    else:
        pos = y > 0
        at_ub = alpha >= C
        at_lb = alpha <= 0
        ub_mask = (at_ub & ~pos) | (at_lb & pos)
        lb_mask = (at_ub & pos) | (at_lb & ~pos)
        ub = yG[ub_mask].min() if ub_mask.any() else math.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -math.inf
        rho = (ub + lb) / 2.0
    return float(-rho)


# ---------------------------------------------------------------------------
# models


@dataclass(eq=False)
class BinaryModel:
    """Decision f(x) = sum_i coef_i K(s_i, x) + bias; f > 0 votes for ``pair[0]``."""

    pair: tuple[int, int]
    support_vectors: np.ndarray
    coef: np.ndarray
    bias: float
    kernel: str = "rbf"
    gamma: float = 1.0
    iterations: int = 0
    converged: bool = True

    def decision(self, x: np.ndarray) -> float:
        if len(self.coef) == 0:
            return self.bias
        k = kernel_row(self.support_vectors, x, self.kernel, self.gamma)
        return float(self.coef @ k + self.bias)


def _check_finite(X):
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("feature matrix contains NaN or infinite values")


def train_binary(X, y, params: SvmParams = SvmParams(), pair=(0, 1)) -> BinaryModel:
    """Train one two-class machine; ``y`` holds +1 / -1."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch("X and y have different lengths")
    _check_finite(X)
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClassInput("binary training needs samples of both signs")
    if not np.all(np.abs(y) == 1):
        raise ValueError("labels must be +1 or -1")
    gamma = params.gamma_for(X.shape[1])
    n = X.shape[0]
    if n * n * 8 <= params.cache_bytes:
        Qsrc = _FullQ(gram_matrix(X, params.kernel, gamma), y)
    else:
        Qsrc = _RowQ(X, y, params.kernel, gamma)
    res = smo_solve(Qsrc, y, params.C, params.tol, params.max_iter)
    sv = res.alpha > 0
    return BinaryModel(
        pair=tuple(pair),
        support_vectors=X[sv].copy(),
        coef=(res.alpha * y)[sv],
        bias=res.bias,
        kernel=params.kernel,
        gamma=gamma,
        iterations=res.iterations,
        converged=res.converged,
    )


@dataclass(eq=False)
class MultiClassModel:
    classes: list[str]
    binaries: list[BinaryModel]
    dims: int
    fingerprint: str = ""
    kernel: str = "rbf"
    gamma: float = 1.0
    C: float = 1.0

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def votes(self, x: np.ndarray):
        """Per-class vote counts and summed margins of the decisions each class won."""
        votes = np.zeros(self.n_classes, dtype=np.intp)
        margin = np.zeros(self.n_classes)
        for m in self.binaries:
            f = m.decision(x)
            winner = m.pair[0] if f > 0 else m.pair[1]
            votes[winner] += 1
            margin[winner] += abs(f)
        return votes, margin

    def predict(self, x) -> int:
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.shape[0] != self.dims:
            raise DimensionMismatch(f"query has {x.shape[0]} dims, model expects {self.dims}")
        votes, margin = self.votes(x)
        tied = np.flatnonzero(votes == votes.max())
        if len(tied) == 1:
            return int(tied[0])
        best = tied[margin[tied] == margin[tied].max()]
        return int(best.min())

    def predict_many(self, X) -> np.ndarray:
        return np.array([self.predict(x) for x in np.atleast_2d(X)], dtype=np.intp)


def train_multiclass(
    X, labels, params: SvmParams = SvmParams(), classes=None, fingerprint: str = "", threads: int = 1
) -> MultiClassModel:
    """One-vs-one training; ``labels`` are class indices into ``classes``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.intp)
    _check_finite(X)
    if classes is None:
        classes = [str(c) for c in range(int(labels.max()) + 1)]
    present = np.unique(labels)
    if len(present) < 2:
        raise SingleClassInput("multi-class training needs at least two classes")
    pairs = list(combinations(range(len(classes)), 2))

    def fit(pair):
        a, b = pair
        mask = (labels == a) | (labels == b)
        y = np.where(labels[mask] == a, 1.0, -1.0)
        return train_binary(X[mask], y, params, pair)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            binaries = list(pool.map(fit, pairs))
    else:
        binaries = [fit(p) for p in pairs]
    return MultiClassModel(
        classes=list(classes),
        binaries=binaries,
        dims=X.shape[1],
        fingerprint=fingerprint,
        kernel=params.kernel,
        gamma=params.gamma_for(X.shape[1]),
        C=params.C,
    )


# ---------------------------------------------------------------------------
# persistence


def save_model(model: MultiClassModel, path) -> None:
    out = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"kernel {model.kernel}",
        f"gamma {model.gamma!r}",
        f"C {model.C!r}",
        f"dims {model.dims}",
        f"fingerprint {model.fingerprint or '-'}",
        f"classes {model.n_classes}",
    ]
    out += [f"class {i} {name}" for i, name in enumerate(model.classes)]
    out.append(f"binaries {len(model.binaries)}")
    for m in model.binaries:
        out.append(f"binary {m.pair[0]} {m.pair[1]} {m.bias!r} {len(m.coef)}")
        for c, sv in zip(m.coef, m.support_vectors):
            out.append(repr(float(c)) + " " + " ".join(repr(float(v)) for v in sv))
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")


def load_model(path, fingerprint: str | None = None) -> MultiClassModel:
    """Read a model file; a given ``fingerprint`` must match the stored one."""
    try:
        lines = Path(path).read_text(encoding="ascii").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptModelFile(f"cannot read model {path}: {exc}") from exc
    pos = 0

    def take(key):
        nonlocal pos
        if pos >= len(lines):
            raise CorruptModelFile(f"{path}: truncated before {key!r}")
        parts = lines[pos].split()
        pos += 1
        if not parts or parts[0] != key:
            raise CorruptModelFile(f"{path}: expected {key!r} at line {pos}")
        return parts[1:]

    try:
        if take(MODEL_MAGIC) != [str(MODEL_VERSION)]:
            raise CorruptModelFile(f"{path}: unsupported version")
        kernel = take("kernel")[0]
        gamma = float(take("gamma")[0])
        C = float(take("C")[0])
        dims = int(take("dims")[0])
        fp = take("fingerprint")[0]
        fp = "" if fp == "-" else fp
        n_classes = int(take("classes")[0])
        classes = []
        for i in range(n_classes):
            idx, name = take("class")
            if int(idx) != i:
                raise CorruptModelFile(f"{path}: class table out of order")
            classes.append(name)
        n_bin = int(take("binaries")[0])
        binaries = []
        for _ in range(n_bin):
            a, b, bias, nsv = take("binary")
            nsv = int(nsv)
            rows = lines[pos : pos + nsv]
            if len(rows) != nsv:
                raise CorruptModelFile(f"{path}: truncated support vectors")
            pos += nsv
            data = np.array([[float(v) for v in r.split()] for r in rows]).reshape(nsv, -1)
            if nsv and data.shape[1] != dims + 1:
                raise CorruptModelFile(f"{path}: support vector width mismatch")
            binaries.append(
                BinaryModel(
                    pair=(int(a), int(b)),
                    support_vectors=np.ascontiguousarray(data[:, 1:]) if nsv else np.empty((0, dims)),
                    coef=np.ascontiguousarray(data[:, 0]) if nsv else np.empty(0),
                    bias=float(bias),
                    kernel=kernel,
                    gamma=gamma,
                )
            )
    except (ValueError, IndexError) as exc:
        raise CorruptModelFile(f"{path}: malformed model file ({exc})") from exc
    if any(ln.strip() for ln in lines[pos:]):
        raise CorruptModelFile(f"{path}: trailing data")
    if kernel not in KERNELS or n_bin != n_classes * (n_classes - 1) // 2:
        raise CorruptModelFile(f"{path}: inconsistent header")
    if fingerprint is not None and fp != fingerprint:
        raise FingerprintMismatch(f"{path}: model features are {fp}, expected {fingerprint}")
    return MultiClassModel(classes, binaries, dims, fp, kernel, gamma, C)
