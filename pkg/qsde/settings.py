import os
import logging
from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
LOG_LEVEL = os.getenv("QSDE_LOG_LEVEL", "INFO").upper()

# trajectories per work item; fixed so results never depend on the worker count
ENSEMBLE_CHUNK_SIZE = 256


def configure_logging(level: str | None = None) -> None:
    logging.basicConfig(level=(level or LOG_LEVEL).upper(), format=LOG_FORMAT, force=True)


def worker_count() -> int:
    """
    reads QSDE_THREADS each call so tests and wrappers can change it at runtime.
    0 or unset means one worker per cpu.
    """
    raw = os.getenv("QSDE_THREADS", "0").strip() or "0"
    try:
        threads = int(raw)
    except ValueError:
        raise ValueError(f"QSDE_THREADS must be an integer, got {raw!r}")
    if threads < 0:
        raise ValueError(f"QSDE_THREADS must be >= 0, got {threads}")
    if threads == 0:
        return os.cpu_count() or 1
    return threads
