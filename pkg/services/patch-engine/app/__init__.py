"""
Patch Engine

An embeddable visual data management engine: stores raw video, turns
frames into patches, indexes patch collections and runs pull-based query
plans over them with tuple-level lineage back to the base frames.
"""

import sys
from pathlib import Path

# Add monorepo root to path so the shared modules resolve
_root_path = Path(__file__).resolve().parent.parent.parent.parent
if str(_root_path) not in sys.path:
    sys.path.append(str(_root_path))

__version__ = "1.0.0"
