"""
Runtime configuration.

Values come from the process environment, optionally seeded from a ``.env``
file in the working directory.
"""
import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

DEFAULT_OUTPUT_DIR = "./runs"

LOG_LEVEL = os.getenv("RELUOPT_LOG_LEVEL", "INFO")
THREADS = int(os.getenv("RELUOPT_THREADS", "1"))
TIME_LIMIT = float(os.getenv("RELUOPT_TIME_LIMIT", "300"))
MAX_REGIONS = int(os.getenv("RELUOPT_MAX_REGIONS", "100000"))
MAX_HIDDEN_NEURONS = int(os.getenv("RELUOPT_MAX_HIDDEN", "250"))


def resolve_output_dir(cli_value: str = None) -> Path:
    """Return the output directory, honouring RELUOPT_OUT over the CLI flag."""
    value = os.getenv("RELUOPT_OUT") or cli_value or DEFAULT_OUTPUT_DIR
    return Path(value)


def database_url(output_dir: Path) -> str:
    """Registry database URL; defaults to a SQLite file inside the output directory."""
    return os.getenv("RELUOPT_DATABASE_URL", f"sqlite:///{Path(output_dir) / 'registry.db'}")
