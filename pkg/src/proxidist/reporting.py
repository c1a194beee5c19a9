"""CSV/JSON report writers with config hashes and run manifests."""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def to_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def config_hash(config):
    """First 12 hex digits of the SHA-256 of the canonical JSON config."""
    text = json.dumps(config, sort_keys=True, default=_default, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def write_table(path, frame, chash, units="", float_format="%.10g"):
    """CSV with a leading ``# config_hash=...; units=...`` comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={chash}; units={units}\n")
        frame.to_csv(fh, index=False, float_format=float_format, lineterminator="\n")
    return path


def read_table(path):
    import pandas as pd
    return pd.read_csv(path, comment="#")


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(obj), encoding="utf-8")
    return path


def versions():
    import joblib
    import pandas
    import scipy
    import sklearn

    from . import __version__
    return {"proxidist": __version__, "python": sys.version.split()[0],
            "numpy": np.__version__, "scipy": scipy.__version__, "pandas": pandas.__version__,
            "scikit-learn": sklearn.__version__, "joblib": joblib.__version__,
            "platform": platform.platform()}


def manifest(config, outputs, wall_time, seeds=None, chash=None):
    return {"config": config, "config_hash": chash or config_hash(config), "outputs": sorted(outputs),
            "seeds": seeds or {"seed": config.get("seed")}, "versions": versions(),
            "wall_time_seconds": round(float(wall_time), 3)}
