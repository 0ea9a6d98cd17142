import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from metaplastic.config import default_config, override  # noqa: E402


def tiny_cue(**extra):
    """A cue config small enough for unit tests (a few seconds per update)."""
    base = dict(network__n_hidden=8, network__nm_sizes=[8], cue__n_cues=1, train__batch_episodes=4,
                train__chunk_episodes=2, train__outer_updates=3, train__checkpoint_every=2)
    base.update(extra)
    return override(default_config(), **base)


def tiny_character(tmp_dir, **extra):
    base = dict(train__task="character", plasticity__rule="triplet", network__n_hidden=6, network__nm_sizes=[6],
                character__synthetic_classes=8, character__synthetic_samples=3,
                character__synthetic_dir=str(tmp_dir), character__current_scale=0.3,
                train__batch_episodes=4, train__chunk_episodes=2, train__outer_updates=2)
    base.update(extra)
    return override(default_config(), **base)


@pytest.fixture
def cue_cfg():
    return tiny_cue()


@pytest.fixture(scope="session")
def glyph_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("glyphs")


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
