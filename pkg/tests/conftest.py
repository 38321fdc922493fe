import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("dvge", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dvge")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (modified in place, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


_RESULTS_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's verdict for the end-of-run summary."""
    results = request.config.stash.setdefault(_RESULTS_KEY, {})
    number = int(request.node.name.split("_")[1][1:])
    results[number] = ("FAIL", "did not complete")

    def record(ok: bool, detail: str) -> bool:
        results[number] = ("PASS" if ok else "FAIL", detail)
        print(f"criterion {number}: {results[number][0]} ({detail})")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        verdict, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {detail}")
