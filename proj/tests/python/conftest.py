import os
import sys

for var in ("COVFK_PKG_DIR", "COVFK_EXT_DIR"):
    path = os.environ.get(var)
    if path and path not in sys.path:
        sys.path.insert(0, path)
