import pytest

import helpers


@pytest.fixture(scope="session")
def pipelines():
    """Cache of full grid pipelines keyed by (example name, resolution)."""
    cache = {}

    def get(name, resolution):
        key = (name, resolution)
        if key not in cache:
            cache[key] = helpers.pipeline(name, resolution)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def solutions():
    """Cache of (bundle, rho_set, solution) keyed by example name."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = helpers.solution(name)
        return cache[name]

    return get
