import pytest

from odconv import backend


@pytest.fixture(scope="session", autouse=True)
def warm_backend():
    # compile-on-first-call must not land inside a timed assertion
    return backend.warmup()
