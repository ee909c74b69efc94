import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gatekeeper.adapters import VirtualAdapter, build_latent_map  # noqa: E402


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def demo_adapter():
    return VirtualAdapter({"README.md": "# demo\n", "old.txt": "", "src/a.txt": "hi",
                           "src/b.txt": "b\n"})


@pytest.fixture
def demo_scr(demo_adapter):
    return build_latent_map(demo_adapter, task="tidy up")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
