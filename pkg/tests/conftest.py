import csv
import math

import numpy as np
import pytest

from ermlimits.services.dists import BinaryLink, NoiseModel


@pytest.fixture
def gaussian():
    return NoiseModel.gaussian(1.0)


@pytest.fixture
def laplace():
    return NoiseModel.laplace(1.0)


@pytest.fixture
def sign_link():
    return BinaryLink.sign()


@pytest.fixture
def logistic10():
    return BinaryLink.logistic(10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def even_link_csv(tmp_path):
    """f̂ ≡ 1/2 的链接表，ν_f = 0"""
    path = tmp_path / "even.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "fhat"])
        for x in np.linspace(-5.0, 5.0, 21):
            writer.writerow([x, 0.5])
    return path


@pytest.fixture
def gaussian_grid_csv(tmp_path):
    """标准正态密度的网格表"""
    path = tmp_path / "gauss.csv"
    x = np.linspace(-8.0, 8.0, 401)
    p = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "p"])
        writer.writerows(zip(x, p))
    return path
