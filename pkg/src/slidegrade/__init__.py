"""Semi-supervised grading of slide images from patch classifiers.

The package segments tissue from glass, tiles slides into labelled
patches, trains a 4-class patch classifier with an EM loop over annotated
and unannotated patches, and renders per-slide cancer heatmaps.
"""

__version__ = "0.1.0"

from .errors import ConfigurationError, InvalidInputError, SlideGradeError  # noqa: F401
from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
