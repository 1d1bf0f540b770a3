"""Two-stream vision/grid transformer for document layout analysis, desk scale."""

__version__ = "0.1.0"

from vgt.precision import set_precision  # noqa: F401
from vgt.tensor import Tensor  # noqa: F401
from vgt.params import AdamWConfig, ParamStore  # noqa: F401
