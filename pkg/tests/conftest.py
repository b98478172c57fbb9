import pytest

from mirrorbench.agents import BackendSpec
from mirrorbench.harness import episode_seed, run_episode
from mirrorbench.metrics import episode_metrics
from mirrorbench.world import generate_scenario

API_KEY = "test-token"

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("MIRRORBENCH_API_KEY", API_KEY)
    return API_KEY


class SuiteCache:
    """Standard 3x7 episode suites, computed once per session and shared."""

    def __init__(self):
        self._runs = {}

    def records(self, kind: str, condition: str, base_seed: int = 0, seeds: int = 3, runs: int = 7, **params):
        key = (kind, condition, base_seed, seeds, runs, tuple(sorted(params.items())))
        if key not in self._runs:
            spec = BackendSpec(kind, params)
            out = []
            for s in range(seeds):
                for r in range(runs):
                    scenario = generate_scenario(condition, episode_seed(base_seed, condition, s, r))
                    out.append(run_episode(scenario, spec))
            self._runs[key] = out
        return self._runs[key]

    def metrics(self, kind: str, condition: str, **kw):
        return [episode_metrics(r.trace) for r in self.records(kind, condition, **kw)]


_CACHE = SuiteCache()


@pytest.fixture(scope="session")
def suites():
    return _CACHE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, text = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
