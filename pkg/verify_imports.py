#!/usr/bin/env python3
"""
Import verification script for epflow.
Checks the package layout and that every module imports against the installed stack.
"""

import sys
from pathlib import Path


def main():
    print("epflow - Import Verification")
    print("=" * 40)

    backend_path = Path(__file__).parent / "backend"
    sys.path.insert(0, str(backend_path))

    print("\nChecking file structure...")
    required_files = [
        "backend/app/__init__.py",
        "backend/app/cli.py",
        "backend/app/commands/__init__.py",
        "backend/core/__init__.py",
        "backend/core/model.py",
        "backend/core/riccati.py",
        "backend/core/ratefn.py",
        "backend/core/spectral.py",
        "backend/core/montecarlo.py",
        "backend/utils/logging.py",
        "backend/utils/csv_io.py",
    ]
    missing = [f for f in required_files if not (Path(__file__).parent / f).exists()]
    for file_path in required_files:
        print(f"  {'MISSING ' if file_path in missing else 'ok      '}{file_path}")

    print("\nTesting imports...")
    try:
        import numpy
        import scipy
        print(f"  numpy {numpy.__version__}, scipy {scipy.__version__}")

        from app.config import settings
        from app.schemas import RunConfig
        from app.cli import main as cli_main
        from app.commands import get_handler
        print("  app modules imported")

        from core.model import builtin, find_critical_points
        from core.riccati import solve_are
        from core.ratefn import semiclassical_cgf, legendre
        from core.spectral import assemble, leading_eigpair
        from core.montecarlo import simulate, estimate_mgf
        print("  core modules imported")

        from utils.logging import get_logger
        from utils.csv_io import write_csv, read_csv
        print("  utils imported")
    except ImportError as e:
        print(f"\nImport error: {e}")
        print("Install the requirements with: pip install -r requirements.txt")
        return 1

    if missing:
        print(f"\n{len(missing)} files missing")
        return 1
    print("\nAll imports successful.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
