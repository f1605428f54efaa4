"""
Shared fixtures: quiet file-less logging and seeded generators
"""

import os

# Console-only logging for tests; must be set before any module calls setup_logger
os.environ.setdefault("LOG_TO_FILE", "false")
os.environ.setdefault("LOG_LEVEL", "WARNING")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from utils.rng import stream  # noqa: E402


@pytest.fixture
def rng():
    return stream(12345, "tests", 0, "default")


@pytest.fixture
def rng_factory():
    """Independent generators keyed by a tag"""

    def make(tag: str, seed: int = 0) -> np.random.Generator:
        return stream(12345, "tests", seed, tag)

    return make


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("IG_OUTPUT_DIR", str(tmp_path / "results"))
    return tmp_path / "results"
