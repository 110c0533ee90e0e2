import json

import numpy as np
import pytest

from fusion.datamix import write_csv
from fusion.fixedpoint import encode
from fusion.model import random_network, save_model


@pytest.fixture(scope="session")
def small_net():
    return random_network([6, 12, 3], seed=1)


@pytest.fixture(scope="session")
def three_layer_net():
    # dense / relu / dense
    return random_network([8, 16, 4], seed=7)


@pytest.fixture(scope="session")
def public_pool(small_net):
    """300 samples labelled by the served model, 3% of labels flipped."""
    rng = np.random.default_rng(11)
    X = rng.normal(size=(300, 6))
    y = small_net.predict(X).copy()
    flip = rng.choice(300, size=9, replace=False)
    y[flip] = (y[flip] + 1) % 3
    return X, y


@pytest.fixture(scope="session")
def query_rows():
    return np.random.default_rng(12).normal(size=(32, 6))


@pytest.fixture
def run_files(tmp_path, small_net, public_pool, query_rows):
    X, y = public_pool
    paths = {k: tmp_path / v for k, v in {"model": "m.json", "queries": "q.csv", "publics": "p.csv", "lowq": "lq.json"}.items()}
    save_model(small_net, paths["model"])
    save_model(random_network([6, 12, 3], seed=2), paths["lowq"])
    write_csv(paths["publics"], y, X)
    write_csv(paths["queries"], [-1] * len(query_rows), query_rows)
    return paths


def fixed(x, f=12):
    return encode(np.asarray(x, dtype=float), f)
