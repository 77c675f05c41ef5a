"""End-to-end orchestration: preprocess, train, classify, evaluate, bench."""

from __future__ import annotations

import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import folding, irma, lbp, saliency, svm
from .errors import DataError, FingerprintMismatch, MissingArtifact, UsageError
from .imagecore import GrayImage, load_image, read_manifest, remove_quietly

FOLD_MODES = ("saliency", "fixed", "off")

TEMPLATE_FILE = "template.txt"
PLAN_FILE = "plan.txt"
FOLDED_DIR = "folded"
FEATURES_FILE = "features.txt"
MODEL_FILE = "model.txt"
PREDICTIONS_FILE = "predictions.tsv"
REPORT_FILE = "report.txt"
BENCH_REPORT_FILE = "bench_report.txt"
BENCH_SUMMARY_FILE = "bench_summary.txt"

# Published results on the full IRMA 2009 test set, quoted, never recomputed.
LITERATURE = (
    ("MS4x4 LBP/SVM", 146.55, 53.0, 1888),
    ("MS3x3 LBP/SVM w. folding", 153.07, 30.0, 1062),
    ("TAU", 169.5, None, None),
    ("VPASabanci", 261.2, None, None),
)


@dataclass(frozen=True)
class PipelineConfig:
    manifest: Path | None = None
    output: Path = Path("salfold-out")
    grid: int = 4
    fold: str = "saliency"
    operator: str = "mean"
    pairing: str = "adjacent"
    saliency: saliency.SaliencyParams = field(default_factory=saliency.SaliencyParams)
    radii: tuple[float, ...] = (1, 2)
    sampling: str = "circular"
    svm: svm.SvmParams = field(default_factory=svm.SvmParams)
    propagate: bool = False
    seed: int = 0
    threads: int = 1
    bench_repeats: int = 3

    def __post_init__(self):
        if self.fold not in FOLD_MODES:
            raise UsageError(f"fold mode must be one of {FOLD_MODES}")
        if self.grid < 2:
            raise UsageError("grid must be >= 2")
        if self.operator not in folding.OPERATORS:
            raise UsageError(f"operator must be one of {folding.OPERATORS}")
        if self.pairing not in folding.PAIRINGS:
            raise UsageError(f"pairing must be one of {folding.PAIRINGS}")
        if self.threads < 1:
            raise UsageError("threads must be >= 1")

    @property
    def folded_grid(self) -> int:
        return self.grid - 1 if self.fold != "off" else self.grid

    @property
    def lbp_params(self) -> lbp.LbpParams:
        return lbp.LbpParams(radii=self.radii, grid=self.folded_grid, sampling=self.sampling)

    def path(self, name: str) -> Path:
        return Path(self.output) / name

    def require_manifest(self):
        if self.manifest is None:
            raise UsageError("no manifest configured")
        return read_manifest(self.manifest)


# ---------------------------------------------------------------------------
# config files


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {v!r}")


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(" ", "").split(",") if x)


def _resolution(v: str) -> tuple[int, int]:
    parts = v.lower().replace(" ", "").split("x")
    if len(parts) == 1:
        return (int(parts[0]), int(parts[0]))
    w, h = (int(p) for p in parts)
    return (h, w)


def config_from_mapping(values: dict, base_dir: Path | None = None,
                        start: PipelineConfig | None = None) -> PipelineConfig:
    """Apply ``key = value`` settings on top of ``start`` (or the defaults)."""
    cfg = start or PipelineConfig()
    top, sal, svm_kw = {}, {}, {}
    base_dir = Path(base_dir) if base_dir else None

    def resolve(p):
        p = Path(p)
        return base_dir / p if base_dir and not p.is_absolute() else p

    try:
        for key, raw in values.items():
            v = str(raw).strip()
            if key == "manifest":
                top["manifest"] = resolve(v)
            elif key == "output":
                top["output"] = resolve(v)
            elif key in ("grid", "seed", "threads", "bench_repeats"):
                top[key] = int(v)
            elif key in ("fold", "operator", "pairing"):
                top[key] = v
            elif key == "lbp.radii":
                top["radii"] = _floats(v)
            elif key == "lbp.sampling":
                top["sampling"] = v
            elif key == "irma.propagate":
                top["propagate"] = _parse_bool(v)
            elif key in ("saliency.patch_size", "saliency.k", "saliency.stride"):
                sal[key.split(".")[1]] = int(v)
            elif key in ("saliency.c", "saliency.focus_threshold"):
                sal[key.split(".")[1]] = float(v)
            elif key == "saliency.scales":
                sal["scales"] = _floats(v)
            elif key == "saliency.resolution":
                sal["resolution"] = _resolution(v)
            elif key in ("svm.C", "svm.tol"):
                svm_kw[key.split(".")[1]] = float(v)
            elif key == "svm.gamma":
                svm_kw["gamma"] = None if v.lower() in ("auto", "none", "") else float(v)
            elif key in ("svm.max_iter", "svm.cache_bytes"):
                svm_kw[key.split(".")[1]] = int(v)
            elif key == "svm.kernel":
                svm_kw["kernel"] = v
            else:
                raise UsageError(f"unknown config key {key!r}")
        if sal:
            top["saliency"] = replace(cfg.saliency, **sal)
        if svm_kw:
            top["svm"] = replace(cfg.svm, **svm_kw)
        return replace(cfg, **top)
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}") from exc


def read_config(path, start: PipelineConfig | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return config_from_mapping(values, path.parent, start)


# ---------------------------------------------------------------------------
# helpers


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


@contextmanager
def _cleanup_on_failure(paths: list):
    """Delete every path appended to ``paths`` if the block raises."""
    try:
        yield paths
    except BaseException:
        remove_quietly(reversed(paths))
        raise


def _folded_name(index: int, entry) -> str:
    return f"{index:05d}_{entry.path.stem}.npy"


def _load_train(cfg, manifest):
    entries = manifest.train
    if not entries:
        raise DataError("manifest has no train split")
    images = _map(lambda e: load_image(e.path).require_min_size(), entries, cfg.threads)
    return entries, images


def _plan_for(cfg) -> folding.FoldingPlan | None:
    if cfg.fold == "off":
        return None
    p = cfg.path(PLAN_FILE)
    if not p.is_file():
        raise MissingArtifact(f"folding plan {p} not found; run preprocess first")
    return folding.load_plan(p, cfg.grid)


# ---------------------------------------------------------------------------
# commands


@dataclass
class PreprocessResult:
    template: saliency.SaliencyTemplate | None
    plan: folding.FoldingPlan | None
    folded: list[Path]
    seconds: float


def cmd_preprocess(cfg: PipelineConfig) -> PreprocessResult:
    """Saliency template, folding plan and folded training-image cache."""
    manifest = cfg.require_manifest()
    t0 = time.perf_counter()
    entries, images = _load_train(cfg, manifest)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.fold == "off":
        return PreprocessResult(None, None, [], time.perf_counter() - t0)
    written: list[Path] = []
    with _cleanup_on_failure(written):
        template = None
        if cfg.fold == "saliency":
            maps = _map(lambda im: saliency.compute_saliency(im, cfg.saliency), images, cfg.threads)
            groups: dict[str, list] = {}
            for e, m in zip(entries, maps):
                groups.setdefault(e.code, []).append(m)
            template = saliency.build_template(groups)
            written.append(cfg.path(TEMPLATE_FILE))
            saliency.save_template(template, written[-1])
            plan = folding.plan_folding(template, cfg.grid, cfg.pairing)
        else:
            plan = folding.fixed_plan(cfg.grid)
        written.append(cfg.path(PLAN_FILE))
        folding.save_plan(plan, written[-1])
        fdir = cfg.path(FOLDED_DIR)
        if fdir.exists():
            remove_quietly([fdir])
        fdir.mkdir()
        written.append(fdir)
        paths = []
        for i, (e, im) in enumerate(zip(entries, images)):
            p = fdir / _folded_name(i, e)
            np.save(p, folding.apply_folding(im, plan, cfg.operator).data)
            paths.append(p)
    return PreprocessResult(template, plan, paths, time.perf_counter() - t0)


@dataclass
class TrainResult:
    model: svm.MultiClassModel
    seconds: float
    feature_seconds: float


def _training_images(cfg, manifest):
    entries = manifest.train
    if not entries:
        raise DataError("manifest has no train split")
    if cfg.fold == "off":
        return entries, _map(lambda e: load_image(e.path).require_min_size(), entries, cfg.threads)
    _plan_for(cfg)
    fdir = cfg.path(FOLDED_DIR)
    paths = [fdir / _folded_name(i, e) for i, e in enumerate(entries)]
    missing = [p for p in paths if not p.is_file()]
    if missing:
        raise MissingArtifact(f"folded cache incomplete ({len(missing)} files missing); run preprocess")
    return entries, [GrayImage(np.load(p)) for p in paths]


def cmd_train(cfg: PipelineConfig) -> TrainResult:
    """Extract LBP features from the (folded) training images and fit the SVM."""
    manifest = cfg.require_manifest()
    entries, images = _training_images(cfg, manifest)
    classes = manifest.classes
    labels = np.array([classes.index(e.code) for e in entries], dtype=np.intp)
    params = cfg.lbp_params
    t0 = time.perf_counter()
    X = np.array(_map(lambda im: lbp.extract_features(im, params), images, cfg.threads))
    t1 = time.perf_counter()
    model = svm.train_multiclass(X, labels, cfg.svm, classes, params.fingerprint(), cfg.threads)
    t2 = time.perf_counter()
    written: list[Path] = []
    with _cleanup_on_failure(written):
        Path(cfg.output).mkdir(parents=True, exist_ok=True)
        written.append(cfg.path(FEATURES_FILE))
        lbp.save_features(written[-1], X, labels, params.fingerprint())
        written.append(cfg.path(MODEL_FILE))
        svm.save_model(model, written[-1])
    return TrainResult(model, t2 - t0, t1 - t0)


class Classifier:
    """Online stage: fold a query with the stored plan, extract features, vote."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.params = cfg.lbp_params
        if cfg.fold == "saliency" and not cfg.path(TEMPLATE_FILE).is_file():
            raise MissingArtifact(f"saliency template {cfg.path(TEMPLATE_FILE)} not found")
        self.plan = _plan_for(cfg)
        mp = cfg.path(MODEL_FILE)
        if not mp.is_file():
            raise MissingArtifact(f"model {mp} not found; run train first")
        self.model = svm.load_model(mp, self.params.fingerprint())

    def features(self, img: GrayImage) -> np.ndarray:
        if self.plan is not None:
            img = folding.apply_folding(img, self.plan, self.cfg.operator)
        return lbp.extract_features(img, self.params)

    def classify(self, img: GrayImage) -> tuple[int, float]:
        """Class index and online seconds (fold + features + predict)."""
        img.require_min_size()
        t0 = time.perf_counter()
        label = self.model.predict(self.features(img))
        return label, time.perf_counter() - t0


@dataclass
class ClassifyResult:
    label: int
    code: str
    seconds: float


def cmd_classify(cfg: PipelineConfig, query) -> ClassifyResult:
    clf = Classifier(cfg)
    img = load_image(query)
    label, secs = clf.classify(img)
    return ClassifyResult(label, clf.model.classes[label], secs)


@dataclass
class EvaluateResult:
    summary: irma.RunSummary
    accuracy: float
    report: str


def cmd_evaluate(cfg: PipelineConfig, predictions=None) -> EvaluateResult:
    """Score test-split predictions with the hierarchical error.

    Without ``predictions`` the test split is classified first and the
    predictions are written next to the report.
    """
    manifest = cfg.require_manifest()
    tests = manifest.test
    if not tests:
        raise DataError("manifest has no test split")
    vocab = irma.build_vocabulary(e.code for e in manifest.train)
    ids = [e.image_id for e in tests]
    truths = [e.code for e in tests]
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    with _cleanup_on_failure(written):
        if predictions is None:
            clf = Classifier(cfg)
            preds = [clf.model.classes[clf.classify(load_image(e.path))[0]] for e in tests]
            written.append(cfg.path(PREDICTIONS_FILE))
            irma.write_predictions(written[-1], ids, preds)
        else:
            given = dict(irma.read_predictions(predictions))
            missing = [i for i in ids if i not in given]
            if missing:
                raise DataError(f"predictions missing for {len(missing)} test images, e.g. {missing[0]}")
            preds = [str(given[i]) for i in ids]
        summary = irma.evaluate_run(truths, preds, vocab, cfg.propagate)
        report = irma.format_report(ids, truths, preds, summary)
        written.append(cfg.path(REPORT_FILE))
        written[-1].write_text(report, encoding="utf-8")
    acc = float(np.mean([str(irma.parse_code(t)) == str(irma.parse_code(p)) for t, p in zip(truths, preds)]))
    return EvaluateResult(summary, acc, report)


# ---------------------------------------------------------------------------
# bench


@dataclass
class ArmReport:
    name: str
    dims: int
    train_seconds: float
    test_seconds: float
    per_image_ms: float
    error_sum: float
    accuracy: float
    n_test: int


@dataclass
class BenchReport:
    arms: dict[str, ArmReport]
    threads: int
    host: str

    @property
    def dim_reduction(self) -> float:
        return 1.0 - self.arms["folded"].dims / self.arms["unfolded"].dims

    @property
    def speedup(self) -> float:
        """Relative drop in per-query online time, folded vs unfolded."""
        return 1.0 - self.arms["folded"].per_image_ms / self.arms["unfolded"].per_image_ms

    def table(self) -> str:
        lines = [
            "# online time per image = fold + LBP features + SVM vote; image decode excluded",
            f"# host {self.host}, threads {self.threads}",
        ]
        head = ("arm", "dims", "train_s", "test_s", "ms/image", "error_sum", "accuracy")
        rows = [head]
        for a in self.arms.values():
            rows.append((a.name, str(a.dims), f"{a.train_seconds:.3f}", f"{a.test_seconds:.3f}",
                         f"{a.per_image_ms:.3f}", f"{a.error_sum:.4f}", f"{a.accuracy:.4f}"))
        widths = [max(len(r[k]) for r in rows) for k in range(len(head))]
        lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"dimension reduction: {100 * self.dim_reduction:.2f}%")
        lines.append(f"online time reduction: {100 * self.speedup:.2f}%")
        lines.append("")
        lines.append("literature values (IRMA 2009, 1,733 test images; reported, not recomputed):")
        for name, err, ms, dims in LITERATURE:
            extra = f"  {ms:g} ms/image" if ms is not None else ""
            extra += f"  {dims} dims" if dims is not None else ""
            lines.append(f"  {name:<26} error {err:g}{extra}  [reported]")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        out = [f"threads = {self.threads}"]
        for a in self.arms.values():
            for k in ("dims", "train_seconds", "test_seconds", "per_image_ms", "error_sum", "accuracy", "n_test"):
                out.append(f"{a.name}.{k} = {getattr(a, k)}")
        out.append(f"dim_reduction = {self.dim_reduction}")
        out.append(f"online_time_reduction = {self.speedup}")
        for name, err, _, _ in LITERATURE:
            out.append(f"reported.{name.replace(' ', '_')}.error = {err}")
        return "\n".join(out) + "\n"


def _run_arm(name, cfg, manifest, test_images) -> ArmReport:
    cmd_preprocess(cfg)
    trained = cmd_train(cfg)
    clf = Classifier(cfg)
    classes = clf.model.classes
    best = None
    preds = None
    for _ in range(max(1, cfg.bench_repeats)):
        t0 = time.perf_counter()
        labels = [clf.model.predict(clf.features(im)) for im in test_images]
        elapsed = time.perf_counter() - t0
        if best is None or elapsed < best:
            best = elapsed
        preds = labels
    truths = [e.code for e in manifest.test]
    codes = [classes[k] for k in preds]
    vocab = irma.build_vocabulary(e.code for e in manifest.train)
    summary = irma.evaluate_run(truths, codes, vocab, cfg.propagate)
    irma.write_predictions(cfg.path(PREDICTIONS_FILE), [e.image_id for e in manifest.test], codes)
    acc = float(np.mean([t == c for t, c in zip(truths, codes)]))
    n = len(test_images)
    return ArmReport(name, clf.model.dims, trained.seconds, best, 1e3 * best / n, summary.total, acc, n)


def cmd_bench(cfg: PipelineConfig) -> BenchReport:
    """Unfolded n x n arm against the folded (n-1) x (n-1) arm on identical splits."""
    manifest = cfg.require_manifest()
    if not manifest.train or not manifest.test:
        raise DataError("bench needs both train and test splits")
    test_images = [load_image(e.path).require_min_size() for e in manifest.test]
    fold_mode = cfg.fold if cfg.fold != "off" else "saliency"
    arms = {
        "unfolded": replace(cfg, fold="off", output=Path(cfg.output) / "unfolded"),
        "folded": replace(cfg, fold=fold_mode, output=Path(cfg.output) / "folded"),
    }
    reports = {name: _run_arm(name, c, manifest, test_images) for name, c in arms.items()}
    report = BenchReport(reports, cfg.threads, f"{platform.node()} ({platform.machine()}, {os.cpu_count()} cpus)")
    Path(cfg.output).mkdir(parents=True, exist_ok=True)
    cfg.path(BENCH_REPORT_FILE).write_text(report.table(), encoding="utf-8")
    cfg.path(BENCH_SUMMARY_FILE).write_text(report.summary(), encoding="utf-8")
    return report
