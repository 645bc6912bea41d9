"""Parametric wall reflectance with a single roughness knob.

Roughness 0 gives a near-mirror Gaussian lobe around the specular
direction, roughness 1 gives a pure Lambertian wall; values in between
blend the two linearly.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from polnlos import ConfigError
from polnlos.polarization import FresnelMedium
from polnlos.vectors import as_vec3, dot, half_angle, norm

__all__ = ["RoughSurface", "half_angle", "lobe_width", "brdf_eval", "SIGMA_MIN"]

SIGMA_MIN = 1e-3


@dataclass(frozen=True, eq=False)
class RoughSurface:
    roughness: float
    medium: FresnelMedium
    wall_normal: np.ndarray = (0.0, 0.0, 1.0)

    def __post_init__(self):
        g = float(self.roughness)
        if not 0.0 <= g <= 1.0:
            raise ConfigError(f"roughness must lie in [0, 1], got {g}")
        n = as_vec3(self.wall_normal, "wall_normal")
        if abs(norm(n) - 1.0) > 1e-12:
            raise ConfigError("wall_normal must be unit-length")
        object.__setattr__(self, "roughness", g)
        object.__setattr__(self, "wall_normal", n)

    def __eq__(self, other):
        if not isinstance(other, RoughSurface):
            return NotImplemented
        return (self.roughness == other.roughness and self.medium == other.medium
                and np.array_equal(self.wall_normal, other.wall_normal))


def lobe_width(roughness):
    return roughness * (np.pi / 2) + SIGMA_MIN


@lru_cache(maxsize=4096)
def _lobe_norm(sigma):
    # solid-angle integral of exp(-a^2 / 2 sigma^2) over the hemisphere around the lobe axis
    f = lambda a: np.exp(-0.5 * (a / sigma) ** 2) * np.sin(a)
    upper = min(np.pi / 2, 12.0 * sigma)
    val, _ = integrate.quad(f, 0.0, upper, epsabs=0.0, epsrel=1e-10, limit=200)
    return 2.0 * np.pi * val


def brdf_eval(omega_i, omega_o, surface):
    """Evaluate the wall BRDF for directions pointing away from the wall.

    Broadcasts over leading axes. Directions on the back side of the wall
    return 0.
    """
    n = surface.wall_normal
    omega_i = np.asarray(omega_i, dtype=np.float64)
    omega_o = np.asarray(omega_o, dtype=np.float64)
    cos_i = dot(omega_i, n)
    cos_o = dot(omega_o, n)
    gamma = surface.roughness
    mirror_cos = 2.0 * cos_i * cos_o - dot(omega_i, omega_o)
    alpha = np.arccos(np.clip(mirror_cos, -1.0, 1.0))
    sigma = lobe_width(gamma)
    lobe = np.exp(-0.5 * (alpha / sigma) ** 2) / _lobe_norm(sigma)
    value = (1.0 - gamma) * lobe + gamma / np.pi
    value = np.where((cos_i > 0.0) & (cos_o > 0.0), value, 0.0)
    return value[()] if value.ndim == 0 else value
