"""Global float precision switch.

Training defaults to float32; gradient checks run in float64. The active
dtype applies to every Tensor created after the switch, so tests that need
float64 must set it before building parameters.
"""

import os

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}

_active = os.environ.get("VGT_PRECISION", "f32")
if _active not in _DTYPES:
    raise ValueError(f"VGT_PRECISION must be one of {sorted(_DTYPES)}, got {_active!r}")


def set_precision(name: str) -> None:
    global _active
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}, expected one of {sorted(_DTYPES)}")
    _active = name


def precision() -> str:
    return _active


def dtype() -> np.dtype:
    return np.dtype(_DTYPES[_active])
