import numpy as np
import pytest

from rkaccel import probgen
from rkaccel.dense import build_matrix


def consistent_system(m, n, seed):
    """Seeded Gaussian system with a known solution."""
    A = probgen.gen_gaussian(m, n, seed)
    x_true, b = probgen.gen_consistent(A, seed)
    return A, b, x_true


@pytest.fixture
def small_system():
    return consistent_system(20, 10, 3)


@pytest.fixture
def identity2():
    return build_matrix(np.eye(2))


def hyperplane_gap(A, b, j, x):
    """Scaled violation |a_j^T x - b_j| / (||a_j|| (1 + ||x||))."""
    a = A.data[j]
    return abs(a @ x - b[j]) / (np.sqrt(A.row_norms_sq[j]) * (1.0 + np.linalg.norm(x)))
