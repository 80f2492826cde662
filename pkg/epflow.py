#!/usr/bin/env python3
"""
epflow command-line entry point.

    python epflow.py rate --config configs/rotation_rate.ini --out out/rotation
"""

import sys
from pathlib import Path

backend_path = Path(__file__).parent / "backend"
sys.path.insert(0, str(backend_path))

from app.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
