import shutil
from pathlib import Path

import pytest

from madcue.cli import main

SYNTH_CONFIG = """\
[run]
seed = 4
threads = 1

[synth]
n_train = 200
text_dim = 32
n_test = 40
n_grounding = 400
distractor_mode = 'mixed'
question_types = ('Scene', 'Interesting', 'PersonAction', 'ObjectAttribute')

[eval]
columns = baseline, places, ensemble
"""


@pytest.fixture(scope="session")
def fitted_run(tmp_path_factory):
    """A small synthetic dataset written and fitted through the CLI (treat as read-only)."""
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.ini").write_text(SYNTH_CONFIG, encoding="utf-8")
    assert main(["synth", "--config", str(root / "synth.ini"), "--out", str(root / "data")]) == 0
    config = root / "data" / "config.ini"
    assert main(["fit", "--config", str(config)]) == 0
    return config


@pytest.fixture
def run_copy(fitted_run, tmp_path):
    """A private copy of the fitted run that a test may modify."""
    dest = tmp_path / "data"
    shutil.copytree(fitted_run.parent, dest)
    return dest / "config.ini"


GOLDEN = Path(__file__).parent / "golden"


def pytest_terminal_summary(terminalreporter):
    from criteria import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
