from pathlib import Path

import pytest

from rebound.store import load_log, save_log

from .builders import demo_bundle


@pytest.fixture
def demo_log_root(tmp_path: Path) -> Path:
    """A saved native demo log (3 frames, 2 GT boxes each, 2 prediction sets)."""
    bundle = demo_bundle(tmp_path / "payloads")
    root = tmp_path / "demo_log"
    save_log(bundle, root)
    return root


@pytest.fixture
def demo_loaded(demo_log_root: Path):
    return load_log(demo_log_root)
