from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import build_ladder  # noqa: E402


@pytest.fixture
def ladder():
    return build_ladder()
