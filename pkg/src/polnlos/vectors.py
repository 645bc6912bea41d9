"""Small vector helpers shared by the optics and geometry modules.

All functions broadcast over leading axes; the last axis holds xyz.
"""
import numpy as np

from polnlos import DegenerateGeometryError


def as_vec3(v, name="vector"):
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components")
    return arr


def dot(a, b):
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def norm(a):
    return np.sqrt(dot(a, a))


def normalize(a, eps=1e-15):
    a = np.asarray(a, dtype=np.float64)
    n = norm(a)
    if np.any(n <= eps):
        raise DegenerateGeometryError("cannot normalize a zero-length vector")
    return a / n[..., None]


def unit_or_normalize(a):
    """Keep already-unit vectors bit-identical; normalize anything else."""
    a = np.asarray(a, dtype=np.float64)
    if abs(float(norm(a)) - 1.0) <= 2e-16:
        return a
    return normalize(a)


def half_angle(omega_i, omega_o):
    """Half of the angle between two unit directions, in [0, pi/2]."""
    return 0.5 * np.arccos(np.clip(dot(omega_i, omega_o), -1.0, 1.0))


def cross_unit(a, b):
    """Unit vector along ``a x b``; falls back to any direction perpendicular to ``b``."""
    c = np.cross(a, b)
    n = float(norm(c))
    if n > 1e-12:
        return c / n
    b = np.asarray(b, dtype=np.float64)
    trial = np.array([1.0, 0.0, 0.0]) if abs(b[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    c = np.cross(trial, b)
    return c / norm(c)
