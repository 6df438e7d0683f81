import sys
from functools import lru_cache

from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@lru_cache(maxsize=None)
def built(L, h, s, widths=None):
    from tiletower.cme import ScaleProfile, build_cme

    return build_cme(ScaleProfile(L=L, h=h, s=s, widths=widths or ()))


@lru_cache(maxsize=None)
def structure_only(L, h, s, widths=None):
    from tiletower.cme import ScaleProfile, build_structure

    return build_structure(ScaleProfile(L=L, h=h, s=s, widths=widths or ()))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
