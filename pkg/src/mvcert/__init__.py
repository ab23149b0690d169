"""Majority-vote error certificates: exact values, bounds and anytime-valid stopping."""

from .bounds import BoundReport, NoUniqueMode, bound_report, hoeffding_sample_size
from .core import CategoricalDistribution, CertificateConfig, ModeProfile, Tally, mode_profile
from .exact import InstanceTooLarge, exact_error_dp, exact_error_enumeration
from .mmc import (
    CertificateOutcome,
    PointRatio,
    PointShared,
    TruncatedBeta,
    run_certificate,
    stop_time_heuristics,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "CategoricalDistribution",
    "CertificateConfig",
    "CertificateOutcome",
    "InstanceTooLarge",
    "ModeProfile",
    "NoUniqueMode",
    "PointRatio",
    "PointShared",
    "Tally",
    "TruncatedBeta",
    "bound_report",
    "exact_error_dp",
    "exact_error_enumeration",
    "hoeffding_sample_size",
    "mode_profile",
    "run_certificate",
    "stop_time_heuristics",
]
