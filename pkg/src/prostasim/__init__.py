"""prostasim: desk-scale simulator of robot-assisted transperineal needle
placement with ultrasound-based motion tracking and closed-loop depth
correction."""

__version__ = "0.1.0"

from ._kernels import active_backend, set_backend

__all__ = ["__version__", "active_backend", "set_backend"]
