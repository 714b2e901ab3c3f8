import numpy as np
import pytest
from hypothesis import settings

from surfparc.mesh import TriangleMesh
from surfparc.phantom import make_icosphere

settings.register_profile("surfparc", deadline=None, max_examples=40)
settings.load_profile("surfparc")


def strip_mesh(n_cols):
    """Two rows of ``n_cols`` vertices triangulated into a ribbon.

    Vertex ``c`` is the bottom row, ``n_cols + c`` the top row.
    """
    xs = np.arange(n_cols, dtype=float)
    v = np.vstack([np.c_[xs, np.zeros(n_cols), np.zeros(n_cols)],
                   np.c_[xs, np.ones(n_cols), np.zeros(n_cols)]])
    faces = []
    for c in range(n_cols - 1):
        a, b, d, e = c, c + 1, n_cols + c, n_cols + c + 1
        faces += [(a, b, e), (a, e, d)]
    return TriangleMesh(v, np.array(faces))


def path_mesh(n):
    """Triangle fan strip whose vertices form a path-like chain 0-1-2-...-(n-1)."""
    v = np.c_[np.arange(n, dtype=float), (np.arange(n) % 2).astype(float), np.zeros(n)]
    faces = np.array([(i, i + 1, i + 2) for i in range(n - 2)])
    return TriangleMesh(v, faces)


@pytest.fixture(scope="session")
def ico2():
    return make_icosphere(1.0, 2)


@pytest.fixture(scope="session")
def ico3():
    return make_icosphere(1.0, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(20241015)
