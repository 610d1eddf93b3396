import math

import numpy as np
import pytest

from liyau_lab.geometry import build_manifold, conformal_torus, flat_torus, icosphere


@pytest.fixture(scope="session")
def circle128():
    return build_manifold(flat_torus(1, 128))


@pytest.fixture(scope="session")
def circle256():
    return build_manifold(flat_torus(1, 256))


@pytest.fixture(scope="session")
def torus64():
    return build_manifold(flat_torus(2, 64))


@pytest.fixture(scope="session")
def conformal64():
    return build_manifold(conformal_torus("0.1*sin(x)", 64))


@pytest.fixture(scope="session")
def sphere():
    return build_manifold(icosphere(4))


@pytest.fixture(scope="session")
def all_manifolds():
    """Every manifold kind at its default resolution."""
    return [build_manifold(s) for s in (flat_torus(1), flat_torus(2), flat_torus(3),
                                        conformal_torus("0.1*sin(x)"),
                                        conformal_torus("0.2*sin(x)*cos(y)"), icosphere())]


def xs(M):
    return M.coords[:, 0]


TWO_PI = 2 * math.pi
