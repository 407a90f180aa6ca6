# Copyright (c) 2026, The MaskApprox Authors
# SPDX-License-Identifier: Apache-2.0
"""Diffusion-approximated change masks and bi-temporal change captioning."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401

__version__ = "0.1.0"
