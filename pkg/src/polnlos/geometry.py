"""Experiment geometry: relay wall, hidden scene grid, cameras, occluders."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from polnlos import ConfigError, DegenerateGeometryError
from polnlos.brdf import RoughSurface
from polnlos.polarization import PolarizerConfig
from polnlos.vectors import as_vec3, dot, norm

SPEED_OF_LIGHT = 299792458.0


def _vec_eq(a, b):
    return np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class Grid:
    """Regular grid of cells; cell centers sit half a step in from ``origin``.

    ``w_axis``/``nw`` add a depth dimension for voxel grids; planar grids
    keep ``nw == 1``.
    """

    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    nu: int
    nv: int
    w_axis: np.ndarray = (0.0, 0.0, 0.0)
    nw: int = 1

    def __post_init__(self):
        for name in ("origin", "u_axis", "v_axis", "w_axis"):
            object.__setattr__(self, name, as_vec3(getattr(self, name), name))
        for name in ("nu", "nv", "nw"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val}")
            object.__setattr__(self, name, int(val))
        if norm(self.u_axis) == 0 or norm(self.v_axis) == 0:
            raise ConfigError("grid axes must be non-zero")

    @property
    def shape(self):
        return (self.nw, self.nv, self.nu) if self.nw > 1 else (self.nv, self.nu)

    @property
    def size(self):
        return self.nu * self.nv * self.nw

    def centers(self):
        """All cell centers, shape (size, 3), ordered w-major, then v, then u."""
        iw, iv, iu = np.meshgrid(np.arange(self.nw), np.arange(self.nv), np.arange(self.nu),
                                 indexing="ij")
        iu, iv, iw = iu.ravel(), iv.ravel(), iw.ravel()
        return (self.origin
                + (iu[:, None] + 0.5) * self.u_axis
                + (iv[:, None] + 0.5) * self.v_axis
                + (iw[:, None] + 0.5 if self.nw > 1 else 0.0) * self.w_axis)

    def indices(self):
        """Grid coordinates (iu, iv[, iw]) of each cell in :meth:`centers` order."""
        iw, iv, iu = np.meshgrid(np.arange(self.nw), np.arange(self.nv), np.arange(self.nu),
                                 indexing="ij")
        cols = [iu.ravel(), iv.ravel()] + ([iw.ravel()] if self.nw > 1 else [])
        return np.stack(cols, axis=1)

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return all(_vec_eq(getattr(self, f), getattr(other, f)) for f in
                   ("origin", "u_axis", "v_axis", "w_axis", "nu", "nv", "nw"))


@dataclass(frozen=True, eq=False)
class WallGrid(Grid):
    def __post_init__(self):
        super().__post_init__()
        if self.nw != 1:
            raise ConfigError("the relay wall is planar (nw must be 1)")
        if abs(dot(self.u_axis, self.v_axis)) > 1e-9:
            raise ConfigError("wall u_axis and v_axis must be perpendicular")

    @property
    def normal(self):
        n = np.cross(self.u_axis, self.v_axis)
        return n / norm(n)

    @property
    def center(self):
        return self.origin + 0.5 * self.nu * self.u_axis + 0.5 * self.nv * self.v_axis


@dataclass(frozen=True, eq=False)
class SceneGrid(Grid):
    """Hidden scene points. ``emission`` optionally holds per-point (i_p, i_s)."""

    emission: Optional[np.ndarray] = None

    def __post_init__(self):
        super().__post_init__()
        if self.emission is not None:
            em = np.asarray(self.emission, dtype=np.float64)
            if em.shape != (self.size, 2):
                raise ConfigError(f"scene emission must have shape ({self.size}, 2), got {em.shape}")
            if not np.all(np.isfinite(em)) or np.any(em < 0):
                raise ConfigError("scene emission components must be finite and >= 0")
            object.__setattr__(self, "emission", em)

    def __eq__(self, other):
        base = super().__eq__(other)
        if base is not True:
            return base
        if self.emission is None or other.emission is None:
            return self.emission is other.emission
        return _vec_eq(self.emission, other.emission)


@dataclass(frozen=True, eq=False)
class CameraPose:
    position: np.ndarray
    polarizer: Optional[PolarizerConfig] = None

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "camera position"))

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return _vec_eq(self.position, other.position) and self.polarizer == other.polarizer


@dataclass(frozen=True, eq=False)
class OccluderRect:
    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray

    def __post_init__(self):
        for name in ("corner", "edge_u", "edge_v"):
            object.__setattr__(self, name, as_vec3(getattr(self, name), name))
        if norm(np.cross(self.edge_u, self.edge_v)) <= 1e-12 * (norm(self.edge_u) * norm(self.edge_v) + 1e-300):
            raise ConfigError("occluder edges must be linearly independent")

    def __eq__(self, other):
        if not isinstance(other, OccluderRect):
            return NotImplemented
        return all(_vec_eq(getattr(self, f), getattr(other, f)) for f in ("corner", "edge_u", "edge_v"))


@dataclass(frozen=True)
class ActiveParams:
    """Pulsed-source settings.

    ``volume_center``/``volume_edge`` describe the axis-aligned cube that
    voxel grids are generated in for resolution sweeps; when omitted the
    sweep reuses the bounding box of the configured scene grid.
    """

    bin_width: float  # seconds
    bin_count: int
    illumination_patch: int
    volume_center: Optional[tuple] = None
    volume_edge: Optional[float] = None

    def __post_init__(self):
        if not (self.bin_width > 0 and np.isfinite(self.bin_width)):
            raise ConfigError("active bin width must be positive")
        if int(self.bin_count) != self.bin_count or self.bin_count < 1:
            raise ConfigError("active bin_count must be a positive integer")
        if int(self.illumination_patch) != self.illumination_patch or self.illumination_patch < 0:
            raise ConfigError("active illumination_patch must be a non-negative index")
        if (self.volume_center is None) != (self.volume_edge is None):
            raise ConfigError("active volume_center and volume_edge must be given together")
        if self.volume_center is not None:
            object.__setattr__(self, "volume_center",
                               tuple(float(x) for x in as_vec3(self.volume_center, "volume_center")))
            if not (self.volume_edge > 0 and np.isfinite(self.volume_edge)):
                raise ConfigError("active volume_edge must be positive")
            object.__setattr__(self, "volume_edge", float(self.volume_edge))

    def voxel_grid(self, resolution, fallback=None):
        """Cubic ``resolution``^3 voxel grid over the active volume."""
        if int(resolution) != resolution or resolution < 1:
            raise ConfigError("voxel resolution must be a positive integer")
        if self.volume_center is not None:
            center, edge = np.array(self.volume_center), np.full(3, self.volume_edge)
        elif fallback is not None:
            pts = fallback.centers()
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            center, edge = 0.5 * (lo + hi), np.maximum(hi - lo, 1e-3)
        else:
            raise ConfigError("active volume is not configured")
        step = edge / resolution
        return SceneGrid(origin=center - edge / 2, u_axis=(step[0], 0, 0), v_axis=(0, step[1], 0),
                         w_axis=(0, 0, step[2]), nu=resolution, nv=resolution, nw=resolution)


@dataclass(frozen=True, eq=False)
class SceneConfig:
    wall: WallGrid
    scene: SceneGrid
    cameras: tuple
    surface: RoughSurface
    occluders: tuple = ()
    noise_sigma: float = 0.0
    active: Optional[ActiveParams] = None
    falloff_enabled: bool = True
    leakage_form: str = "linear"
    rotating_angles: tuple = tuple(np.deg2rad([0.0, 45.0, 90.0, 135.0]))
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "occluders", tuple(self.occluders))
        object.__setattr__(self, "rotating_angles", tuple(float(a) for a in self.rotating_angles))
        if not self.cameras:
            raise ConfigError("at least one camera is required")
        if not (self.noise_sigma >= 0):
            raise ConfigError("noise_sigma must be >= 0")
        if self.leakage_form not in ("linear", "squared"):
            raise ConfigError("leakage_form must be 'linear' or 'squared'")
        n = self.wall.normal
        for k, cam in enumerate(self.cameras):
            if abs(dot(cam.position - self.wall.origin, n)) <= 1e-12:
                raise ConfigError(f"cameras[{k}] lies on the wall plane")
        if self.active is not None and self.active.illumination_patch >= self.wall.size:
            raise ConfigError("active illumination_patch is outside the wall grid")

    def __eq__(self, other):
        if not isinstance(other, SceneConfig):
            return NotImplemented
        return (self.wall == other.wall and self.scene == other.scene
                and self.cameras == other.cameras and self.surface == other.surface
                and self.occluders == other.occluders and self.noise_sigma == other.noise_sigma
                and self.active == other.active and self.falloff_enabled == other.falloff_enabled
                and self.leakage_form == other.leakage_form
                and self.rotating_angles == other.rotating_angles)


def patch_center(grid, iu, iv, iw=0):
    if not (0 <= iu < grid.nu and 0 <= iv < grid.nv and 0 <= iw < grid.nw):
        raise IndexError(f"cell ({iu}, {iv}, {iw}) outside grid {grid.nu}x{grid.nv}x{grid.nw}")
    center = grid.origin + (iu + 0.5) * grid.u_axis + (iv + 0.5) * grid.v_axis
    if grid.nw > 1:
        center = center + (iw + 0.5) * grid.w_axis
    return center


def ray_directions(s, c, o):
    """Unit directions from wall point ``c`` toward scene point ``s`` and camera ``o``.

    Broadcasts over leading axes.
    """
    s, c, o = (np.asarray(x, dtype=np.float64) for x in (s, c, o))
    d_i = s - c
    d_o = o - c
    n_i, n_o = norm(d_i), norm(d_o)
    if np.any(n_i == 0) or np.any(n_o == 0):
        raise DegenerateGeometryError("scene point or camera coincides with the wall point")
    return d_i / n_i[..., None], d_o / n_o[..., None]


def _segment_hits(s, c, occ):
    """Boolean array: does segment s->c cross the closed parallelogram ``occ``?"""
    d = c - s
    normal = np.cross(occ.edge_u, occ.edge_v)
    denom = dot(d, normal)
    num = dot(occ.corner - s, normal)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    p = s + t[..., None] * d - occ.corner
    # solve p = a*edge_u + b*edge_v via the 2x2 Gram system
    uu, uv, vv = dot(occ.edge_u, occ.edge_u), dot(occ.edge_u, occ.edge_v), dot(occ.edge_v, occ.edge_v)
    pu, pv = dot(p, occ.edge_u), dot(p, occ.edge_v)
    det = uu * vv - uv * uv
    a = (pu * vv - pv * uv) / det
    b = (pv * uu - pu * uv) / det
    tol = 1e-12
    inside = (a >= -tol) & (a <= 1 + tol) & (b >= -tol) & (b <= 1 + tol)
    return (denom != 0) & (t > 0) & (t < 1) & inside


def visibility(s, c, occluders):
    """1 where the open segment (s, c) misses every occluder, else 0.

    Rectangle boundaries count as blocking. Broadcasts over leading axes.
    """
    s = np.asarray(s, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    shape = np.broadcast_shapes(s.shape, c.shape)[:-1]
    s, c = np.broadcast_to(s, shape + (3,)), np.broadcast_to(c, shape + (3,))
    # orient every segment the same way so swapping endpoints is bit-exact
    swap = np.zeros(shape, dtype=bool)
    undecided = np.ones(shape, dtype=bool)
    for k in range(3):
        swap |= undecided & (s[..., k] > c[..., k])
        undecided &= s[..., k] == c[..., k]
    s, c = np.where(swap[..., None], c, s), np.where(swap[..., None], s, c)
    blocked = np.zeros(shape, dtype=bool)
    for occ in occluders:
        blocked |= _segment_hits(s, c, occ)
    vis = (~blocked).astype(np.float64)
    return vis[()] if vis.ndim == 0 else vis
