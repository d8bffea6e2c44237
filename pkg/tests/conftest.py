import functools

import pytest

from pmp_horizon.catalog import catalog_get, catalog_names, catalog_raw
from pmp_horizon.pipeline import analyze
from pmp_horizon.problem import validate

NAMES = catalog_names()


@functools.lru_cache(maxsize=None)
def core(name: str):
    """Pipeline without truncation or continuity, cached per session."""
    return analyze(catalog_get(name), truncation=False, continuity=False)


@functools.lru_cache(maxsize=None)
def core_with_candidate(name: str, u0: str):
    raw = catalog_raw(name)
    raw["candidate"] = [u0]
    return analyze(validate(raw), truncation=False, continuity=False)


@pytest.fixture(params=NAMES)
def catalog_run(request):
    return core(request.param)
