import numpy as np
import pytest

from vgt import precision


@pytest.fixture
def f64():
    """Run a test under float64 and restore the previous precision."""
    before = precision.precision()
    precision.set_precision("f64")
    yield np.float64
    precision.set_precision(before)


@pytest.fixture
def f32():
    before = precision.precision()
    precision.set_precision("f32")
    yield np.float32
    precision.set_precision(before)
