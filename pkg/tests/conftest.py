from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

import sys
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from fem2nn.refine import lshape, unit_square  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def square_mesh():
    return unit_square(2)


@pytest.fixture
def lshape_mesh():
    return lshape(1)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    for name in ("FEM2NN_THREADS", "FEM2NN_SEED", "FEM2NN_TOL"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("FEM2NN_LOG_DIR", str(tmp_path / "logs"))
