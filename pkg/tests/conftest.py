import io

import numpy as np
import pytest

from crossmedia.corpus import FeatureStore, Normalizer, parse_click_log


@pytest.fixture(scope="session")
def norm():
    return Normalizer()


def _make_log(rows, norm):
    """rows: list of (query_text, image_id, click)."""
    text = "".join(f"{q}\t{i}\t{c}\n" for q, i, c in rows)
    return parse_click_log(io.StringIO(text), norm)


@pytest.fixture(scope="session")
def make_log():
    return _make_log


@pytest.fixture
def tiny_log(norm, make_log):
    return make_log(
        [
            ("red car", "i1", 3),
            ("red car", "i2", 1),
            ("blue car", "i2", 7),
            ("flower", "i3", 220747),
        ],
        norm,
    )


@pytest.fixture
def line_store():
    """Three points on a line plus the origin, 2-d."""
    return FeatureStore(
        ["a", "b", "c", "q"],
        np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [10.0, 0.0]]),
    )
