"""Phase discovery and interpretable classification on binary lattice snapshots.

Two stages: an unsupervised pass (density-shift-invariant structure factors,
PCA, Gaussian mixture clustering) proposes phase regions; correlator
convolutional networks then classify snapshots phase by phase, and their
learned filters, spatial weights and logistic coefficients are read back as
Fourier order-parameter maps and connected correlators.
"""
__version__ = "0.1.0"

from .errors import DataError, HybridCCNNError, NumericalError  # noqa: E402
from .core import (  # noqa: E402
    Dataset,
    Lattice,
    ParameterPoint,
    Snapshot,
    SnapshotSet,
    mean_density,
    normalize_global,
    normalize_per_site,
    site_mean_density,
    zero_pad,
)

__all__ = [
    "__version__", "DataError", "HybridCCNNError", "NumericalError",
    "Dataset", "Lattice", "ParameterPoint", "Snapshot", "SnapshotSet",
    "mean_density", "normalize_global", "normalize_per_site", "site_mean_density", "zero_pad",
]
