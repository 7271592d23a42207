"""Generalised linear mixed models with a discrete (nonparametric) random-effects distribution.

Groups are clustered by fitting a finite set of support points for the random
coefficients with an EM algorithm; the number of clusters is found by merging
support points whose confidence regions overlap, or that lie closer than a
distance threshold.
"""

from .collapse import ConfidenceRegion, regions_overlap
from .em import DiscreteSupport, FitConfig, FitResult, fit
from .family import Family, HierarchicalDataset
from .io import CsvSchema, ingest_csv
from .metrics import confusion_metrics, elbow_scan, entropy, gof_counts, roc_auc
from .simulation import DgpSpec, run_study, simulate

__all__ = [
    "ConfidenceRegion",
    "CsvSchema",
    "DgpSpec",
    "DiscreteSupport",
    "Family",
    "FitConfig",
    "FitResult",
    "HierarchicalDataset",
    "confusion_metrics",
    "elbow_scan",
    "entropy",
    "fit",
    "gof_counts",
    "ingest_csv",
    "regions_overlap",
    "roc_auc",
    "run_study",
    "simulate",
]
