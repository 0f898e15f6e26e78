"""Browser-side BrowserOnly and Monitored cookie attributes with a simulated
network pipeline, cookie store and verifying origin server."""

from __future__ import annotations

__version__ = "0.1.0"

import logging

logging.getLogger(__name__).addHandler(logging.NullHandler())
