import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

from .errors import ConfigError

DEFAULT_LOG_DIR = Path(__file__).resolve().parent.parent / "logs"


@dataclass
class Fem2nnConfig:
    threads: int
    log_dir: Path = DEFAULT_LOG_DIR
    seed: int = 0
    tol: float = 1e-9

    @classmethod
    def from_env(cls) -> "Fem2nnConfig":
        load_dotenv()
        threads = _int_env("FEM2NN_THREADS", os.cpu_count() or 1)
        if threads < 1:
            raise ConfigError("FEM2NN_THREADS must be >= 1")
        seed = _int_env("FEM2NN_SEED", 0)
        raw_tol = os.environ.get("FEM2NN_TOL")
        try:
            tol = float(raw_tol) if raw_tol else 1e-9
        except ValueError:
            raise ConfigError(f"FEM2NN_TOL is not a number: {raw_tol!r}") from None
        if not tol > 0:
            raise ConfigError("FEM2NN_TOL must be positive")
        log_dir = os.environ.get("FEM2NN_LOG_DIR")
        return cls(
            threads=threads,
            log_dir=Path(log_dir) if log_dir else DEFAULT_LOG_DIR,
            seed=seed,
            tol=tol,
        )


def _int_env(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} is not an integer: {raw!r}") from None
