from pathlib import Path

import pytest

from pecas.models import load_model

GOLDEN = Path(__file__).parent / "fixtures" / "golden"


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN


@pytest.fixture(scope="session")
def ped_model():
    """Fixture-trained pedestrian model committed under tests/fixtures/golden."""
    return load_model(GOLDEN / "pedestrian.pecas")


@pytest.fixture(scope="session")
def eye_model():
    """Fixture-trained eye model committed under tests/fixtures/golden."""
    return load_model(GOLDEN / "eye.pecas")
