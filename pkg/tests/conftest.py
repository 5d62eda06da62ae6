"""Shared, cached simulation runs; several are expensive and reused across modules."""
import functools
import sys
import time

from ftibr import scenario, sim_engine


@functools.lru_cache(maxsize=None)
def cached_run(name, splitter=None, record_every=None, **overrides):
    """Run a bundled scenario once per argument set; ``wall_s`` holds the first run's time."""
    cfg = scenario.load(name)
    if splitter is not None:
        overrides["splitter"] = splitter
    if overrides:
        cfg = scenario.with_overrides(cfg, **overrides)
    t0 = time.perf_counter()
    res = sim_engine.run(cfg, record_every=record_every)
    res.wall_s = time.perf_counter() - t0
    return res


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
