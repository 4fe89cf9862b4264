import sys
from pathlib import Path

import pytest

from madcrow import alignment, kernels

# every sw_align call in the suite replays its own traceback
alignment.VERIFY_TRACEBACK = True

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session", params=kernels.available_backends())
def backend(request):
    return kernels.get_backend(request.param)


def pytest_terminal_summary(terminalreporter):
    terminalreporter.write_sep("-", f"traceback replays verified: {alignment.verified_alignments}")
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
