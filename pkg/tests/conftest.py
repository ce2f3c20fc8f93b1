import os

# flake8: noqa: E402

os.environ["DPLSVM_ENV_FILE"] = os.path.abspath(
    os.path.join(os.path.dirname(os.path.dirname(__file__)), "tests/test.env")
)

import numpy as np
import pytest

from dplsvm.features import EdgeFeatureTable, edge_descriptors
from dplsvm.rngkit import RandomStream
from dplsvm.svm_static import Hyperparameters


@pytest.fixture
def stream():
    return RandomStream(1234, 0)


@pytest.fixture
def quick_hyper():
    return Hyperparameters(n_iter=400, burn_in=200, thin=2, n_chains=2, log_every=0)


@pytest.fixture
def separable_table():
    """one edge, z = sign(u)"""
    x = np.concatenate([-np.linspace(0.2, 2.0, 20), np.linspace(0.2, 2.0, 20)])
    return EdgeFeatureTable(
        values=x[:, None],
        columns=edge_descriptors(2),
        covariates=np.zeros((40, 0)),
        labels=np.sign(x),
    )
