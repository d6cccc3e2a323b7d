import pytest

from attnshare import random_weights, toy_config


@pytest.fixture(scope="session")
def toy():
    """Default 8-layer toy model: (config, weights), shared read-only."""
    config = toy_config()
    return config, random_weights(config)
