from __future__ import annotations

import logging
from pathlib import Path

import pytest
from rich.logging import RichHandler

import sys
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from fem2nn.config import Fem2nnConfig  # noqa: E402
from fem2nn.errors import ConfigError, Fem2nnError  # noqa: E402
from fem2nn.logging_utils import configure_logging  # noqa: E402


@pytest.fixture
def _clean_logger():
    logger = logging.getLogger("fem2nn")
    before = list(logger.handlers)
    yield logger
    for handler in list(logger.handlers):
        if handler not in before:
            logger.removeHandler(handler)
            handler.close()


def test_config_from_env(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.setenv("FEM2NN_THREADS", "3")
    monkeypatch.setenv("FEM2NN_SEED", "42")
    monkeypatch.setenv("FEM2NN_TOL", "1e-10")
    monkeypatch.setenv("FEM2NN_LOG_DIR", str(tmp_path / "runs"))
    config = Fem2nnConfig.from_env()
    assert config.threads == 3
    assert config.seed == 42
    assert config.tol == 1e-10
    assert config.log_dir == tmp_path / "runs"


def test_config_defaults(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("FEM2NN_LOG_DIR", raising=False)
    config = Fem2nnConfig.from_env()
    assert config.threads >= 1
    assert config.seed == 0
    assert config.tol == 1e-9
    assert config.log_dir.name == "logs"


@pytest.mark.parametrize(
    "name, value",
    [("FEM2NN_THREADS", "0"), ("FEM2NN_THREADS", "many"), ("FEM2NN_SEED", "1.5"), ("FEM2NN_TOL", "-1"), ("FEM2NN_TOL", "tiny")],
)
def test_invalid_config_values(monkeypatch: pytest.MonkeyPatch, name: str, value: str) -> None:
    monkeypatch.setenv(name, value)
    with pytest.raises(ConfigError) as excinfo:
        Fem2nnConfig.from_env()
    assert name in str(excinfo.value)
    assert isinstance(excinfo.value, Fem2nnError)
    assert isinstance(excinfo.value, RuntimeError)


def test_configure_logging_writes_package_log(tmp_path: Path, _clean_logger: logging.Logger) -> None:
    logger = configure_logging(tmp_path, verbose=False)
    logging.getLogger("fem2nn.mesh").info("hello from the mesh module")
    for handler in logger.handlers:
        handler.flush()
    text = (tmp_path / "fem2nn.log").read_text(encoding="utf-8")
    assert "INFO fem2nn.mesh: hello from the mesh module" in text
    assert not any(isinstance(h, RichHandler) for h in logger.handlers)

    configure_logging(tmp_path / "other", verbose=True)
    files = [h for h in logger.handlers if isinstance(h, logging.FileHandler)]
    assert len(files) == 1
    assert files[0].baseFilename.endswith(str(Path("other") / "fem2nn.log"))
    assert any(isinstance(h, RichHandler) for h in logger.handlers)
