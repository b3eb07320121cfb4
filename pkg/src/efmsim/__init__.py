"""Loss-bit and spin-bit measurement testbed with a passive observer."""
from __future__ import annotations

__version__ = "0.1.0"
