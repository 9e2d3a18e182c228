import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bluechain.crypto_core import generate_keypair  # noqa: E402


@pytest.fixture(scope="session")
def keypair():
    return generate_keypair(1024, 7)


@pytest.fixture(scope="session")
def other_keypair():
    return generate_keypair(1024, 8)
