import numpy as np
import pytest
from surrogates import MLP, SegmentPlan


def random_mlp(rng, widths, scale = 1.0):
    '''
    ReLU network with standard normal weights and biases.
    '''
    weights = [scale * rng.standard_normal((widths[i + 1], widths[i])) for i in range(len(widths) - 1)]
    biases = [scale * rng.standard_normal(widths[i + 1]) for i in range(len(widths) - 1)]
    return MLP(weights, biases)


def linear_mlp(matrix, offset):
    '''
    Network without hidden layers computing matrix @ s0 + offset.
    '''
    matrix = np.asarray(matrix, dtype = float)
    return MLP([matrix], [np.asarray(offset, dtype = float)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_plan():
    return SegmentPlan.uniform(4, 1)


@pytest.fixture
def small_config():
    '''
    Linear2d config small enough to run the keras-free phases in a test.
    '''
    return {
        'system': {'name': 'linear2d', 'params': {'scale': 0.9, 'theta': 0.3}, 'noise_std': 0.05, 'noise_correlation': 0.5},
        'plan': {'K': 4, 'segment_length': 1},
        'train': {'hidden': [4], 'epochs': 2, 'seed': 1},
        'reach': {'mode': 'approx'},
        'conformal': {'delta': 0.8, 'tau': 0.0},
        'validate': {'trials': 50, 'seed': 9},
        'run': {'seed': 3, 'train_size': 60, 'calibration_size': 40},
    }
