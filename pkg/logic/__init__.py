from .array_geometry import build_circle, build_square, build_triangle
from .contact_mechanics import assemble, simulate_detachment

__all__ = ["build_circle", "build_square", "build_triangle", "assemble", "simulate_detachment"]
