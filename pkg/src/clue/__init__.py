"""Lecture engagement scoring from transcript, audio and object detections.

Four heads feed a convex fusion: a random forest over transcript statistics,
a text emotion classifier, a 1-D CNN over per-window speech features and an
object-activity rate. The package also explains the forest with Shapley
values and turns delivery statistics into a rule-based feedback report.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .errors import ClueError, InputError, NumericError, SchemaError

__all__ = ["BACKEND", "ClueError", "InputError", "NumericError", "SchemaError", "__version__"]
