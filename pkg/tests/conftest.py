import logging
import time

import allure
import networkx as nx
import numpy as np
import pytest
import scipy

from deep_rtc.data import SyntheticConfig, synth_generate
from deep_rtc.taxonomy import Taxonomy
from deep_rtc.training import TrainConfig, train, train_flat

logger = logging.getLogger(__name__)

# root -> n1, y3, y4 ; n1 -> y1, y2
TOY_EDGES = [("n1", "root"), ("y3", "root"), ("y4", "root"), ("y1", "n1"), ("y2", "n1")]
FLAT_EDGES = [(leaf, "root") for leaf in ("a", "b", "c", "d")]
BINARY_EDGES = [("a", "root"), ("b", "root"), ("a1", "a"), ("a2", "a"), ("b1", "b"), ("b2", "b")]
# leaves at depths 1, 2 and 3
UNEVEN_EDGES = [
    ("g0", "root"), ("g1", "root"), ("c9", "root"),
    ("c0", "g0"), ("c1", "g0"),
    ("g2", "g1"), ("c2", "g1"),
    ("c3", "g2"), ("c4", "g2"),
]


# Register custom markers
def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: directional benchmark runs, enabled with --run-slow"
    )


def pytest_metadata(metadata, config):
    """
    Record the numeric stack in the report environment table
    """
    metadata["numpy"] = np.__version__
    metadata["scipy"] = scipy.__version__
    metadata["networkx"] = nx.__version__


def pytest_addoption(parser):
    """
    Add command line options for the test suite
    """
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="run the slow synthetic benchmark tests"
    )


def pytest_collection_modifyitems(config, items):
    """
    Skip slow tests unless they were asked for
    """
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    """
    Attach the test duration to the Allure report
    """
    start_time = time.time()

    yield

    duration = time.time() - start_time
    allure.attach(
        f"Test duration: {duration:.2f} seconds",
        name="test_duration",
        attachment_type=allure.attachment_type.TEXT
    )


@pytest.hookimpl(tryfirst=True, hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """
    Add captured logs to the Allure report on test failure
    """
    outcome = yield
    rep = outcome.get_result()

    if rep.when == "call" and rep.failed and rep.caplog:
        allure.attach(
            rep.caplog,
            name="test_logs",
            attachment_type=allure.attachment_type.TEXT
        )


# -- taxonomies -------------------------------------------------------------

@pytest.fixture(scope="session")
def toy_edges():
    return list(TOY_EDGES)


@pytest.fixture(scope="session")
def toy_tree():
    return Taxonomy.from_edges(TOY_EDGES)


@pytest.fixture(scope="session")
def flat_taxonomy():
    return Taxonomy.from_edges(FLAT_EDGES)


@pytest.fixture(scope="session")
def binary_taxonomy():
    return Taxonomy.from_edges(BINARY_EDGES)


@pytest.fixture(scope="session")
def uneven_taxonomy():
    return Taxonomy.from_edges(UNEVEN_EDGES)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- synthetic data and trained heads -----------------------------------------

@pytest.fixture(scope="session")
def small_benchmark():
    """branching (3, 2): 6 leaves, 3 internal non-root nodes"""
    cfg = SyntheticConfig(branching=(3, 2), feature_dim=8, class_sep=3.0, noise_sd=1.0,
                          imbalance_factor=0.1, n_max=60, test_per_class=30, seed=0)
    logger.info(f"Generating small benchmark: {cfg}")
    return synth_generate(cfg)


@pytest.fixture(scope="session")
def small_train_config():
    return TrainConfig(epochs=15, lr=0.2, batch_size=16, seed=0)


@pytest.fixture(scope="session")
def trained_deep(small_benchmark, small_train_config):
    return train(small_benchmark.train, small_benchmark.taxonomy, small_train_config)


@pytest.fixture(scope="session")
def trained_flat(small_benchmark, small_train_config):
    return train_flat(small_benchmark.train, small_benchmark.taxonomy, small_train_config)
