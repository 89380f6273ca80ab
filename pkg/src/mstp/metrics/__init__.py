"""State, image-quality, and distributional metric suites."""
from .features import (
    ActivationBlock,
    FeatureSet,
    clipscore,
    fid,
    kid,
    lpips,
    r_precision,
    read_feature_set,
    write_feature_set,
)
from .report import report_rows, write_report
from .state import ClassMetrics, StateMetricsReport, joint_state_metrics, state_metrics
from .visual import ms_ssim, psnr, ssim

__all__ = [
    "ActivationBlock",
    "FeatureSet",
    "ClassMetrics",
    "StateMetricsReport",
    "clipscore",
    "fid",
    "joint_state_metrics",
    "kid",
    "lpips",
    "ms_ssim",
    "psnr",
    "r_precision",
    "read_feature_set",
    "report_rows",
    "ssim",
    "state_metrics",
    "write_feature_set",
    "write_report",
]
