"""Python bindings for the villa DocMNIST lab.

The heavy lifting lives in the C++ core; this package re-exports it.
"""

from ._villa import *  # noqa: F401,F403
from ._villa import VillaError, __doc__  # noqa: F401

__all__ = [name for name in dir() if not name.startswith("_")]
