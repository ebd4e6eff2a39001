import sys
from pathlib import Path

import pytest

from embedkit.features import load_manifest, load_split
from embedkit.synth import synth_dataset

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def micro_manifest(tmp_path_factory):
    """20 training videos x 5 frames, one sentence each, two web images."""
    root = tmp_path_factory.mktemp("micro")
    return synth_dataset(root, n_videos=20, seed=7)


@pytest.fixture(scope="session")
def micro(micro_manifest):
    m = load_manifest(micro_manifest)
    return m, load_split(m, "train"), load_split(m, "validation")


# acceptance criteria append (name, passed, detail) here; printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
