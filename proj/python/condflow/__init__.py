"""Python front end to the condflow C++ core."""

import json as _json

from ._core import (
    ConfigError,
    LqParams,
    NumericOverflow,
    Unsupported,
    __version__,
    brownian_path,
    builtin_functionals,
    d_lions,
    delta_m2,
    eval,
    experiment_names,
    fd_check_dm,
    lemma_study,
    list_registry,
    lq_hjb_max_residual,
    lq_value,
    normals,
    philox4x32,
    realized_qv,
    riccati,
    w2_squared,
)
from . import _core


def _decode(raw):
    out = dict(raw)
    out["report"] = _json.loads(out["report"])
    return out


def run(config, seed=None):
    """Run an experiment from YAML text; returns report (dict), tables (csv text), passed."""
    return _decode(_core.run_yaml(config, seed))


def run_file(path, seed=None, out=None):
    """Run the experiment in a YAML file; writes report, tables and manifest when `out` is set."""
    return _decode(_core.run_file(str(path), seed, None if out is None else str(out)))


__all__ = [
    "ConfigError",
    "LqParams",
    "NumericOverflow",
    "Unsupported",
    "__version__",
    "brownian_path",
    "builtin_functionals",
    "d_lions",
    "delta_m2",
    "eval",
    "experiment_names",
    "fd_check_dm",
    "lemma_study",
    "list_registry",
    "lq_hjb_max_residual",
    "lq_value",
    "normals",
    "philox4x32",
    "realized_qv",
    "riccati",
    "run",
    "run_file",
    "w2_squared",
]
