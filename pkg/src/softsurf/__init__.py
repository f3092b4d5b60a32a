"""Soft-tissue surface simulation and learned deformation/force prediction.

Geometry is in millimetres and forces in newtons everywhere except inside
the mass-spring integrator, which works in SI units (metres).
"""

from softsurf.errors import (
    ConfigError,
    DataFormatError,
    DivergenceError,
    SoftsurfError,
)

__all__ = [
    "SoftsurfError",
    "ConfigError",
    "DataFormatError",
    "DivergenceError",
]

__version__ = "0.1.0"
