import sys
from functools import lru_cache

import pytest

from torusfold.bumpkit import solve_params
from torusfold.flatten import FlattenedMap, build_collapse
from torusfold.torusmap import BaseMap


@lru_cache(maxsize=None)
def params_for(n: int):
    return solve_params(n)


@lru_cache(maxsize=None)
def base_map(n: int) -> BaseMap:
    return BaseMap(params_for(n))


@lru_cache(maxsize=None)
def flat_map(n: int) -> FlattenedMap:
    return FlattenedMap(base_map(n))


@lru_cache(maxsize=None)
def collapse_map(n: int):
    return build_collapse(flat_map(n))


@pytest.fixture(params=[2, 3], ids=lambda n: f"n{n}")
def n(request):
    return request.param


@pytest.fixture
def fmap(n):
    return base_map(n)


@pytest.fixture
def hmap(n):
    return flat_map(n)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k].line())
