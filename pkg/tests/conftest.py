import numpy as np
import pytest

from polysafe.datagen import collect
from polysafe.dynamics import Dictionary, Monomial, PlantModel
from polysafe.polytope import PolyhedralSet
from polysafe import synthesis

# The shipped two-state benchmark: parallelogram safe set, quadratic dictionary,
# single input on the second state, disturbance bound 0.05.
SECV_F = np.array([
    [0.2, 0.4],
    [-0.2, -0.4],
    [-0.15, 0.2],
    [0.15, -0.2],
])
SECV_G = np.ones(4)

# Hand-derived vertices (solve each non-parallel row pair, keep feasible):
# rows (0,2) -> (-2, 3.5); rows (0,3) -> (6, -0.5);
# rows (1,2) -> (-6, 0.5); rows (1,3) -> (2, -3.5).
SECV_VERTICES = np.array([
    [-2.0, 3.5],
    [6.0, -0.5],
    [-6.0, 0.5],
    [2.0, -3.5],
])


@pytest.fixture(scope="session")
def secv_dictionary():
    return Dictionary([Monomial((2, 0)), Monomial((0, 2))], 2)


@pytest.fixture(scope="session")
def secv_plant(secv_dictionary):
    return PlantModel(
        a1=[[0.8, 0.5], [-0.4, 1.2]],
        a2=[[0.0, 0.0], [1.0, 1.0]],
        b=[[0.0], [1.0]],
        dictionary=secv_dictionary,
        w_bound=0.05,
    )


@pytest.fixture(scope="session")
def secv_set():
    return PolyhedralSet(SECV_F, SECV_G)


@pytest.fixture(scope="session")
def secv_data(secv_plant):
    return collect(secv_plant, 40, 0.003, [0.0, 0.0], seed=7)


@pytest.fixture(scope="session")
def secv_design(secv_data, secv_set):
    return synthesis.synthesize_noiseless(
        secv_data, secv_set, 0.95, expansion=[0.5, 0.5])


def stable_test_plant():
    """A comfortably stable two-state plant for noisy-collection tests."""
    dictionary = Dictionary([Monomial((2, 0))], 2)
    return PlantModel(
        a1=[[0.5, 0.1], [-0.1, 0.4]],
        a2=[[0.05], [0.02]],
        b=[[1.0], [0.5]],
        dictionary=dictionary,
        w_bound=0.05,
    )
