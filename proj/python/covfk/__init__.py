"""Monte Carlo estimation of covariant semigroups, heat kernels, operator traces
and equivariant Chern-character pieces on compact model geometries, with
spectral cross-validation."""

import json as _json

try:
    from ._core import *  # noqa: F401,F403
    from . import _core as _impl
except ImportError:  # running against a flat build directory
    import _core as _impl
    from _core import *  # noqa: F401,F403

__version__ = _impl.__version__


def run(command, config):
    """Run an fk / trace / chern / validate command from a config dict.

    Returns (result_dict, ok).
    """
    text, ok = _impl.run_json(command, _json.dumps(config))
    return _json.loads(text), ok
