import pytest

# criterion number -> list of (passed, detail)
_ACCEPTANCE = {}


class AcceptanceRecorder:
    def __init__(self, criterion):
        self.criterion = criterion
        self.checks = _ACCEPTANCE.setdefault(criterion, [])

    def check(self, passed, detail):
        """Record one sub-check of the criterion and return ``passed``."""
        self.checks.append((bool(passed), detail))
        return bool(passed)

    @property
    def failures(self):
        return [d for p, d in self.checks if not p]


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is None:
        raise RuntimeError("acceptance tests need @pytest.mark.criterion(n)")
    return AcceptanceRecorder(marker.args[0])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        checks = _ACCEPTANCE[n]
        ok = all(p for p, _ in checks)
        failed = [d for p, d in checks if not p]
        detail = "; ".join(failed) if failed else "; ".join(d for _, d in checks)
        tr.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
