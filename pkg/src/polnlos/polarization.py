"""Closed-form polarization optics for a camera-side linear polarizer.

Covers the oblique-view effective angle of a polarizer, Fresnel
reflectances of a dielectric wall, and the leakage factor that a
near-crossed polarizer applies to each wall-to-camera ray.
"""
from dataclasses import dataclass

import numpy as np

from polnlos import ConfigError, DegenerateGeometryError
from polnlos.vectors import as_vec3, cross_unit, dot, half_angle, norm, unit_or_normalize

LEAKAGE_FORMS = ("linear", "squared")


@dataclass(frozen=True)
class FresnelMedium:
    refractive_index: float

    def __post_init__(self):
        eta = float(self.refractive_index)
        if not np.isfinite(eta) or eta <= 1.0:
            raise ConfigError(f"refractive_index must satisfy η > 1, got {eta}")
        object.__setattr__(self, "refractive_index", eta)


@dataclass(frozen=True, eq=False)
class PolarizerConfig:
    """Linear polarizer in front of a camera.

    ``normal`` points from the camera toward the scene it views, so a ray
    travelling toward the camera along ``omega_o`` has ``-omega_o . normal > 0``.
    ``axis_world`` is the transmission axis embedded in 3D.
    """

    axis_angle: float
    normal: np.ndarray
    axis_world: np.ndarray

    def __post_init__(self):
        n = as_vec3(self.normal, "polarizer normal")
        q = as_vec3(self.axis_world, "polarizer axis")
        if abs(norm(n) - 1.0) > 1e-12 or abs(norm(q) - 1.0) > 1e-12:
            raise ConfigError("polarizer normal and axis must be unit-length")
        if abs(dot(n, q)) > 1e-12:
            raise ConfigError("polarizer axis must be perpendicular to its normal")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "axis_world", q)
        object.__setattr__(self, "axis_angle", float(self.axis_angle))

    @classmethod
    def from_angle(cls, axis_angle, normal, reference=(0.0, 0.0, 1.0)):
        """Build a polarizer whose axis sits ``axis_angle`` from ``reference x normal``.

        With ``reference`` the wall normal and ``normal`` aimed at the wall,
        angle 0 is horizontal (parallel to the wall) and pi/2 lies in the
        vertical plane containing the viewing direction.
        """
        n = unit_or_normalize(as_vec3(normal, "polarizer normal"))
        e1 = cross_unit(as_vec3(reference, "reference"), n)
        e2 = np.cross(n, e1)
        q = np.cos(axis_angle) * e1 + np.sin(axis_angle) * e2
        # remove the rounding-level component along n so the invariant holds tightly
        q = q - dot(q, n) * n
        q = q / norm(q)
        return cls(axis_angle=axis_angle, normal=n, axis_world=q)

    def rotated(self, axis_angle, reference=(0.0, 0.0, 1.0)):
        return PolarizerConfig.from_angle(axis_angle, self.normal, reference)

    def __eq__(self, other):
        if not isinstance(other, PolarizerConfig):
            return NotImplemented
        return (self.axis_angle == other.axis_angle
                and np.array_equal(self.normal, other.normal)
                and np.array_equal(self.axis_world, other.axis_world))


@dataclass(frozen=True)
class PolarizationComponents:
    i_p: float
    i_s: float

    def __post_init__(self):
        if not (self.i_p >= 0 and self.i_s >= 0):
            raise ConfigError("polarization component intensities must be >= 0")


def effective_polarizer_angle(theta, azimuth, zenith):
    """Apparent polarizer axis angle seen along an oblique ray.

    Parameters
    ----------
    theta : float or array
        Polarizer axis angle measured in the polarizer plane (radians).
    azimuth, zenith : float or array
        Direction of the incident ray; ``zenith`` must lie in [0, pi/2).

    Returns
    -------
    float or ndarray
        Effective angle on the principal branch (-pi/2, pi/2]. The axis is a
        line, so the angle is only defined modulo pi; it is computed from the
        projected cosine/sine pair, which stays finite where the tangent form
        divides by zero.
    """
    zenith = np.asarray(zenith, dtype=np.float64)
    if np.any(~np.isfinite(zenith)) or np.any(zenith < 0) or np.any(zenith >= np.pi / 2):
        raise DegenerateGeometryError("zenith must lie in [0, pi/2)")
    shifted = np.asarray(theta, dtype=np.float64) - azimuth + np.pi / 2
    out = np.arctan2(np.cos(zenith) * np.sin(shifted), np.cos(shifted))
    out = np.where(out > np.pi / 2, out - np.pi, out)
    out = np.where(out <= -np.pi / 2, out + np.pi, out)
    return out[()] if out.ndim == 0 else out


def _snell(incidence, medium):
    phi = np.asarray(incidence, dtype=np.float64)
    if np.any(~np.isfinite(phi)) or np.any(phi < 0) or np.any(phi >= np.pi / 2):
        raise ValueError("incidence angle must lie in [0, pi/2)")
    return phi, np.arcsin(np.sin(phi) / medium.refractive_index)


def _normal_limit(medium):
    eta = medium.refractive_index
    return ((eta - 1.0) / (eta + 1.0)) ** 2


# below this incidence the closed forms are 0/0 in floating point; the
# analytic limit differs from the true value by O(phi^2)
_TINY_INCIDENCE = 1e-100


def fresnel_rp(incidence, medium):
    """Reflectance of the p (in-plane) component; zero at Brewster's angle."""
    phi, phi_t = _snell(incidence, medium)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (np.tan(phi - phi_t) / np.tan(phi + phi_t)) ** 2
    r = np.where(phi < _TINY_INCIDENCE, _normal_limit(medium), r)
    return r[()] if r.ndim == 0 else r


def fresnel_rs(incidence, medium):
    """Reflectance of the s (perpendicular) component."""
    phi, phi_t = _snell(incidence, medium)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (np.sin(phi - phi_t) / np.sin(phi + phi_t)) ** 2
    r = np.where(phi < _TINY_INCIDENCE, _normal_limit(medium), r)
    return r[()] if r.ndim == 0 else r


def brewster_angle(medium):
    return float(np.arctan(medium.refractive_index))


def leakage_angles(omega_i, omega_o, polarizer):
    """Half angle of the reflection path and effective polarizer angle per ray.

    Returns ``(theta_h, theta_eff)``, broadcast over leading axes.
    """
    omega_i = np.asarray(omega_i, dtype=np.float64)
    omega_o = np.asarray(omega_o, dtype=np.float64)
    n_p = polarizer.normal
    theta_h = half_angle(omega_i, omega_o)
    cos_z = -dot(omega_o, n_p)
    if np.any(cos_z <= 0.0):
        raise DegenerateGeometryError("ray reaches the polarizer from behind or at grazing incidence")
    cos_z = np.minimum(cos_z, 1.0)
    zenith = np.arccos(cos_z)
    w = omega_o + cos_z[..., None] * n_p
    w_len = norm(w)
    if np.any(w_len <= 1e-15):
        raise DegenerateGeometryError("ray is parallel to the polarizer normal; azimuth undefined")
    w = w / w_len[..., None]
    rel = np.arccos(np.clip(-dot(w, polarizer.axis_world), -1.0, 1.0))
    theta_eff = effective_polarizer_angle(rel, 0.0, zenith)
    return theta_h, theta_eff


def _weights(theta_eff, form):
    if form == "linear":
        return np.cos(theta_eff), np.sin(theta_eff)
    if form == "squared":
        return np.cos(theta_eff) ** 2, np.sin(theta_eff) ** 2
    raise ValueError(f"unknown leakage form {form!r}; expected one of {LEAKAGE_FORMS}")


def leakage_polarized_scene(omega_i, omega_o, polarizer, medium, components, form="linear"):
    """Leakage factor for a scene emitting separate p and s intensities.

    ``components`` may be a :class:`PolarizationComponents` or a pair of
    arrays ``(i_p, i_s)`` broadcastable against the ray axes. The result is
    clipped to [0, max(i_p, i_s)], so equal components ``I`` give exactly
    ``I * leakage(...)``.
    """
    if isinstance(components, PolarizationComponents):
        i_p, i_s = components.i_p, components.i_s
    else:
        i_p, i_s = components
    theta_h, theta_eff = leakage_angles(omega_i, omega_o, polarizer)
    w_p, w_s = _weights(theta_eff, form)
    lam = i_p * fresnel_rp(theta_h, medium) * w_p + i_s * fresnel_rs(theta_h, medium) * w_s
    lam = np.clip(lam, 0.0, np.maximum(i_p, i_s))
    return lam[()] if np.ndim(lam) == 0 else lam


def leakage(omega_i, omega_o, polarizer, medium, form="linear"):
    """Fraction of the wall reflection that passes the camera polarizer.

    ``form="linear"`` weights the p/s reflectances by cos/sin of the effective
    angle; ``"squared"`` uses Malus-style cos^2/sin^2. The result is clipped
    to [0, 1] so it acts as a transmission fraction.
    """
    theta_h, theta_eff = leakage_angles(omega_i, omega_o, polarizer)
    w_p, w_s = _weights(theta_eff, form)
    lam = fresnel_rp(theta_h, medium) * w_p + fresnel_rs(theta_h, medium) * w_s
    # near-grazing half angles can push the linear form past 1 (up to sqrt 2)
    lam = np.clip(lam, 0.0, 1.0)
    return lam[()] if np.ndim(lam) == 0 else lam
