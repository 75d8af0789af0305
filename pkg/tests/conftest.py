import os

import numpy as np
import pytest

os.environ.setdefault("MPCMWEM_ALLOW_PINNED_TAPE", "1")

from mpcmwem.cluster import LocalCluster  # noqa: E402
from mpcmwem.data import Schema, build_local_histogram, bundled_path, load_csv_discretize  # noqa: E402
from mpcmwem.ring import DEFAULT_CODEC  # noqa: E402
from mpcmwem.sharing import share_secret  # noqa: E402


@pytest.fixture
def cluster():
    with LocalCluster(seed=20240611) as c:
        yield c


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def codec():
    return DEFAULT_CODEC


@pytest.fixture(scope="session")
def car():
    schema = Schema.load(bundled_path("car.schema"))
    records = load_csv_discretize(bundled_path("car.csv"), schema)
    hist = build_local_histogram(records, schema.domain)
    return schema, records, hist


def run_shared(cluster, fn, *secrets, rng=None):
    """Share each secret, run ``fn(party, *views)`` on all parties, return party 0's result."""
    rng = rng or np.random.default_rng(7)
    views = [share_secret(s, rng) for s in secrets]
    return cluster.run(fn, *views)[0]
