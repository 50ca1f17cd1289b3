import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture
def intr():
    from spatialgrasp.geometry import Intrinsics
    return Intrinsics(600.0, 600.0, 320.0, 240.0)


@pytest.fixture
def rgb():
    """A small deterministic test image with gradients in every channel."""
    from spatialgrasp.raster import Image
    yy, xx = np.mgrid[0:12, 0:16]
    px = np.stack([xx / 15.0, yy / 11.0, (xx + yy) / 26.0], axis=-1)
    return Image(px)
