from __future__ import annotations
import sys

from cvlearn.cli import main


# uv run python scripts/run.py bound-multiclass --config configs/bound_multiclass.yml
if __name__ == "__main__":
    sys.exit(main())
