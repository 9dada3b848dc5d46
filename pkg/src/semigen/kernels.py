"""Backend selection for the hot loops.

The compiled extension ``semigen._kernels`` is used when it imports; otherwise
the numpy versions in ``semigen._kernels_py`` are used. Setting the environment
variable ``SEMIGEN_PURE_PYTHON=1`` forces the numpy path.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("SEMIGEN_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def _c2(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gaussian_lme(x, theta, inv_two_var, impl=None):
    """``(mean_i logsumexp_j a_ij, d/dtheta)`` with ``a_ij = -|x_i - theta_j|^2 * inv_two_var``."""
    impl = impl or _impl
    return impl.gaussian_lme(_c2(x), _c2(theta), float(inv_two_var))


def poisson_lme(x, theta, impl=None):
    """Same as :func:`gaussian_lme` for ``a_ij = x_i log theta_j - theta_j``; 1-D inputs."""
    impl = impl or _impl
    return impl.poisson_lme(_c2(x).ravel(), _c2(theta).ravel())


def nearest_center(samples, centers, impl=None):
    impl = impl or _impl
    return impl.nearest_center(_c2(samples), _c2(centers))


def implementations():
    """All available backends, keyed by name (for benchmarks and cross-checks)."""
    out = {"python": _kernels_py}
    if _impl is not _kernels_py:
        out["compiled"] = _impl
    else:
        try:
            from . import _kernels as _compiled
        except ImportError:
            pass
        else:
            out["compiled"] = _compiled
    return out
