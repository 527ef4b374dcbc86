"""Differentiable search index with a training-time diversity term."""

from ._core import *  # noqa: F401,F403
from ._core import __version__, DdsiError  # noqa: F401
