import numpy as np
import pytest

from adaptive_cr.cr_space import CRSpace, assemble
from adaptive_cr.mesh import Mesh, build_structured_square


@pytest.fixture
def unit_square():
    return build_structured_square(1)


@pytest.fixture
def square2():
    return build_structured_square(2)


@pytest.fixture
def system2():
    """The 8-unknown pencil on the n=2 unit square with b=(1,0)."""
    return assemble(CRSpace(build_structured_square(2)), (1.0, 0.0))


@pytest.fixture
def right_triangle_mesh():
    return Mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
