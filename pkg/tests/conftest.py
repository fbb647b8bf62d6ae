import numpy as np
import pytest

from czsl_tta.datagen import SynthSpec, generate
from czsl_tta.space import build_composition_space

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_manifest():
    return {
        "attributes": ["red", "blue"],
        "objects": ["car", "cup"],
        "seen_pairs": [[0, 0], [0, 1], [1, 0]],
        "unseen_pairs": [[1, 1]],
    }


@pytest.fixture
def tiny_space(tiny_manifest):
    return build_composition_space(tiny_manifest)


@pytest.fixture(scope="session")
def standard_bundle():
    return generate(SynthSpec(seed=0))


def unit(rng, *shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)
