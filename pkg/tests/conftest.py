import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from woundrag.corpus import default_dictionary


@pytest.fixture(scope="session")
def dictionary():
    return default_dictionary()
