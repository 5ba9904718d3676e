import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Precedence is CLI flag > config file > these environment values > literals.
OUT_DIR = Path(os.getenv("HALFLINE_OUT_DIR", "data/processed"))
WORKERS = int(os.getenv("HALFLINE_WORKERS", "1"))
SEED = int(os.getenv("HALFLINE_SEED", "20240101"))

if WORKERS < 1:
    raise RuntimeError("HALFLINE_WORKERS must be >= 1")
