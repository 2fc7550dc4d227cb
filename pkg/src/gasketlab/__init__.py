"""Finite-depth constructions and numerical certificates for gasket non-removability."""
from __future__ import annotations

__version__ = "0.1.0"
