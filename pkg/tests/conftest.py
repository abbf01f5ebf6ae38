from __future__ import annotations

from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures" / "corpus"


@pytest.fixture
def fixture_dir() -> Path:
    return FIXTURES
