import pytest
from hypothesis import HealthCheck, settings

from tilqr import LqrParams

# property tests must not depend on a per-run entropy source
settings.register_profile(
    "deterministic",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("deterministic")


@pytest.fixture(scope="session")
def benchmark_params() -> LqrParams:
    return LqrParams()
