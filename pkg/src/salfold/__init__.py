"""Saliency-guided image folding with multi-block LBP features and SVM classification."""

from .folding import FoldingPlan, apply_folding, plan_folding
from .imagecore import BlockGrid, DatasetManifest, GrayImage, load_image, make_grid
from .irma import IrmaCode, build_vocabulary, error_score, evaluate_run, parse_code
from .lbp import LbpParams, extract_features, lbp_code, uniform_map
from .saliency import SaliencyParams, SaliencyTemplate, build_template, compute_saliency
from .svm import MultiClassModel, SvmParams, train_binary, train_multiclass

__version__ = "0.1.0"

__all__ = [
    "BlockGrid",
    "DatasetManifest",
    "FoldingPlan",
    "GrayImage",
    "IrmaCode",
    "LbpParams",
    "MultiClassModel",
    "SaliencyParams",
    "SaliencyTemplate",
    "SvmParams",
    "apply_folding",
    "build_template",
    "build_vocabulary",
    "compute_saliency",
    "error_score",
    "evaluate_run",
    "extract_features",
    "lbp_code",
    "load_image",
    "make_grid",
    "parse_code",
    "plan_folding",
    "train_binary",
    "train_multiclass",
    "uniform_map",
]
