"""3D cephalometric landmark regression toolkit (C++ core bindings)."""

try:
    from ._ceph3d import *  # noqa: F401,F403  (installed package layout)
    from ._ceph3d import __version__  # noqa: F401
except ImportError:  # build-tree layout: extension on PYTHONPATH
    from _ceph3d import *  # noqa: F401,F403
    from _ceph3d import __version__  # noqa: F401
