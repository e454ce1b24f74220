from fractions import Fraction

from hypothesis import settings, strategies as st

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=60)
settings.load_profile("repo")


def rationals(lo=-8, hi=8, max_den=12):
    return st.builds(lambda a, b: Fraction(a, b),
                     st.integers(lo * max_den, hi * max_den), st.integers(1, max_den))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
