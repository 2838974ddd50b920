import numpy as np
import pytest

from ldexpand.model import brownian, example1, example2, pide_special


@pytest.fixture(scope="session")
def ex1():
    return example1()


@pytest.fixture(scope="session")
def ex2():
    return example2()


@pytest.fixture(scope="session")
def bm():
    return brownian()


@pytest.fixture(scope="session")
def pide_model():
    return pide_special()


@pytest.fixture(scope="session")
def ex1_solution(ex1):
    from ldexpand.functionals import example1_F
    from ldexpand.variational import maximize_direct
    return maximize_direct(example1_F(), ex1, n=200)


def h0_closed(u):
    u = np.asarray(u, dtype=float)
    r = np.sqrt(u * u + 1)
    return u * np.log(u + r) + 1 - r
