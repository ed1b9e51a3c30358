import numpy as np
import pytest

from scalpel.video import FrameGeometry, VideoMatrix


def as_video(values) -> VideoMatrix:
    """Wrap a 2-D array as a P x 1-column-geometry video (P rows, T frames)."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    return VideoMatrix(values, FrameGeometry(height=values.shape[0], width=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
