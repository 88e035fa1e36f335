import numpy as np
import pytest

from slidegrade.features import FEATURE_DIM
from slidegrade.tiling import Patch, PatchLabel


def feature_patch(slide_id, index, vec, label=None, pad=True):
    """A pixel-less patch carrying a precomputed feature vector.

    Short vectors are zero-padded to the reference dimension unless ``pad``
    is false.
    """
    vec = np.asarray(vec, dtype=np.float64)
    if pad and len(vec) < FEATURE_DIM:
        vec = np.concatenate([vec, np.zeros(FEATURE_DIM - len(vec))])
    return Patch(slide_id=slide_id, origin=(index, 0), size=1, features=vec, label=label)


def blob_dataset(rng, n_per_class, dim=8, spread=0.15, slide_id="s"):
    """Four Gaussian blobs of nonnegative features, one per class."""
    centres = np.eye(4, dim) + 0.05
    out = []
    for c in range(4):
        for _ in range(n_per_class):
            vec = np.abs(centres[c] + rng.normal(0, spread, dim))
            out.append((feature_patch(slide_id, len(out), vec), PatchLabel(c)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one ``PASS``/``FAIL`` line per acceptance criterion.

    Lines are echoed live and repeated in the terminal summary, so they show
    up whether or not output capture is on.
    """
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
