"""Light-transport matrix assembly for passive and active NLOS setups.

Rows are ordered camera-major, then wall patch row-major (then time bin
for the active model); columns follow the scene grid's cell order.
"""
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from polnlos.brdf import brdf_eval
from polnlos.geometry import SPEED_OF_LIGHT, ray_directions, visibility
from polnlos.polarization import leakage, leakage_polarized_scene
from polnlos.vectors import dot, norm


class TruncationWarning(UserWarning):
    """Some light paths arrive after the last time bin and were dropped."""


@dataclass(eq=False)
class TransportMatrix:
    """Dense transport matrix with row/column bookkeeping.

    ``row_meta`` has columns (camera, wall patch, time bin); passive rows
    use bin 0. ``col_meta`` holds grid coordinates (iu, iv[, iw]) of each
    scene cell.
    """

    data: np.ndarray
    row_meta: np.ndarray
    col_meta: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("transport data must be 2-D")
        self.row_meta = np.asarray(self.row_meta, dtype=np.int64).reshape(self.rows, -1)
        self.col_meta = np.asarray(self.col_meta, dtype=np.int64).reshape(self.cols, -1)

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def scene_shape(self):
        """Scene grid shape as (height, width) or (depth, height, width)."""
        if self.cols == 0:
            return (0,)
        extent = self.col_meta.max(axis=0) + 1
        return tuple(int(e) for e in extent[::-1])

    def row_slice(self, start, stop):
        return TransportMatrix(self.data[start:stop], self.row_meta[start:stop], self.col_meta,
                               dict(self.extra))


def _wall_observation_geometry(config, camera):
    wall_pts = config.wall.centers()
    scene_pts = config.scene.centers()
    omega_i, _ = ray_directions(scene_pts[None, :, :], wall_pts[:, None, :], camera.position)
    _, omega_o = ray_directions(scene_pts[0], wall_pts, camera.position)
    omega_o = np.broadcast_to(omega_o[:, None, :], omega_i.shape)
    return wall_pts, scene_pts, omega_i, omega_o


def falloff(scene_pts, wall_pts, wall_normal):
    """Foreshortening over squared distance, cos(theta_in) / |s - c|^2, clamped at 0."""
    d = scene_pts[None, :, :] - wall_pts[:, None, :]
    dist = norm(d)
    cos_in = dot(d, wall_normal) / dist
    return np.maximum(cos_in, 0.0) / dist**2


def _leakage_matrix(config, camera, omega_i, omega_o):
    if camera.polarizer is None:
        raise ValueError("use_polarizer requires every camera to carry a polarizer")
    medium = config.surface.medium
    emission = config.scene.emission
    if emission is not None:
        comps = (emission[None, :, 0], emission[None, :, 1])
        return leakage_polarized_scene(omega_i, omega_o, camera.polarizer, medium, comps,
                                       form=config.leakage_form)
    return leakage(omega_i, omega_o, camera.polarizer, medium, form=config.leakage_form)


def leakage_matrix(config, camera_index=None):
    """Per-entry leakage factors matching the passive row layout."""
    blocks = []
    cams = range(len(config.cameras)) if camera_index is None else [camera_index]
    for k in cams:
        cam = config.cameras[k]
        _, _, omega_i, omega_o = _wall_observation_geometry(config, cam)
        blocks.append(_leakage_matrix(config, cam, omega_i, omega_o))
    return np.vstack(blocks)


def _col_meta(config):
    return config.scene.indices()


def _passive(config, use_polarizer, occluded):
    blocks, meta = [], []
    n_wall = config.wall.size
    for k, cam in enumerate(config.cameras):
        wall_pts, scene_pts, omega_i, omega_o = _wall_observation_geometry(config, cam)
        block = brdf_eval(omega_i, omega_o, config.surface)
        if config.falloff_enabled:
            block = block * falloff(scene_pts, wall_pts, config.surface.wall_normal)
        if use_polarizer:
            block = block * _leakage_matrix(config, cam, omega_i, omega_o)
        if occluded and config.occluders:
            block = block * visibility(scene_pts[None, :, :], wall_pts[:, None, :], config.occluders)
        blocks.append(block)
        meta.append(np.stack([np.full(n_wall, k), np.arange(n_wall), np.zeros(n_wall, int)], axis=1))
    return TransportMatrix(np.vstack(blocks), np.vstack(meta), _col_meta(config))


def build_passive(config, use_polarizer=False):
    """Passive transport: BRDF x falloff x (leakage if a polarizer is used)."""
    return _passive(config, use_polarizer, occluded=False)


def build_occluded(config, use_polarizer=False):
    """Passive transport with occluder shadowing applied per scene/wall pair."""
    return _passive(config, use_polarizer, occluded=True)


def stack_cameras(matrices):
    """Concatenate transport matrices that share the same scene columns."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("nothing to stack")
    first = matrices[0]
    for m in matrices[1:]:
        if m.cols != first.cols or not np.array_equal(m.col_meta, first.col_meta):
            raise ValueError(f"column mismatch: {m.cols} columns vs {first.cols}")
    return TransportMatrix(np.vstack([m.data for m in matrices]),
                           np.vstack([m.row_meta for m in matrices]),
                           first.col_meta, dict(first.extra))


def active_bins(config):
    """Time-bin index of each (wall patch, voxel) path; -1 where it overflows the range."""
    act = config.active
    if act is None:
        raise ValueError("config has no active parameters")
    wall_pts = config.wall.centers()
    vox = config.scene.centers()
    p = wall_pts[act.illumination_patch]
    path = norm(vox - p)[None, :] + norm(vox[None, :, :] - wall_pts[:, None, :])
    bins = np.floor(path / (SPEED_OF_LIGHT * act.bin_width)).astype(np.int64)
    return np.where(bins < act.bin_count, bins, -1)


def build_active(config, use_polarizer=False):
    """Transient transport for a pulsed source at one wall patch.

    The laser is taken to share the camera position. Each (wall patch, voxel)
    pair lands in exactly one time bin; paths past the last bin are dropped
    with a :class:`TruncationWarning`.
    """
    act = config.active
    if act is None:
        raise ValueError("config has no active parameters")
    surface = config.surface
    wall_pts = config.wall.centers()
    vox = config.scene.centers()
    p = wall_pts[act.illumination_patch]
    n_wall, n_vox, n_bins = len(wall_pts), len(vox), act.bin_count
    bins = active_bins(config)
    if np.any(bins < 0):
        warnings.warn(f"{int(np.sum(bins < 0))} path(s) exceed {n_bins} time bins and were dropped",
                      TruncationWarning, stacklevel=2)
    dist_l = norm(vox - p)
    dist_c = norm(vox[None, :, :] - wall_pts[:, None, :])
    blocks, meta = [], []
    for k, cam in enumerate(config.cameras):
        omega_il, omega_ol = ray_directions(vox, p, cam.position)
        omega_ic, _ = ray_directions(vox[None, :, :], wall_pts[:, None, :], cam.position)
        _, omega_oc = ray_directions(vox[0], wall_pts, cam.position)
        omega_oc = np.broadcast_to(omega_oc[:, None, :], omega_ic.shape)
        weight = (brdf_eval(omega_il, omega_ol, surface)[None, :]
                  * brdf_eval(omega_ic, omega_oc, surface)
                  / (dist_l[None, :] ** 2 * dist_c ** 2))
        if use_polarizer:
            weight = weight * _leakage_matrix(config, cam, omega_ic, omega_oc)
        block = np.zeros((n_wall, n_bins, n_vox))
        wi, si = np.nonzero(bins >= 0)
        block[wi, bins[wi, si], si] = weight[wi, si]
        blocks.append(block.reshape(n_wall * n_bins, n_vox))
        patch, b = np.meshgrid(np.arange(n_wall), np.arange(n_bins), indexing="ij")
        meta.append(np.stack([np.full(n_wall * n_bins, k), patch.ravel(), b.ravel()], axis=1))
    return TransportMatrix(np.vstack(blocks), np.vstack(meta), _col_meta(config))


def forward(T, scene, noise_sigma=0.0, seed=0):
    """Simulated observation ``T @ scene`` plus clamped Gaussian read noise."""
    data = T.data if isinstance(T, TransportMatrix) else np.asarray(T, dtype=np.float64)
    scene = np.asarray(scene, dtype=np.float64).ravel()
    if data.shape[1] != scene.shape[0]:
        raise ValueError(f"dimension mismatch: transport has {data.shape[1]} columns, "
                         f"scene has {scene.shape[0]} entries")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    obs = data @ scene
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        obs = obs + noise_sigma * rng.standard_normal(obs.shape)
    return np.maximum(obs, 0.0)


def single_camera(config, index=0):
    return replace(config, cameras=(config.cameras[index],))


def synthetic_scene(shape, seed=0, rects=3, background=0.1):
    """Piecewise-constant test scene in [0, 1], flattened in grid order.

    ``shape`` is (height, width) or (depth, height, width). Each rectangle
    (box for 3-D) gets a level drawn from [0.5, 0.9] on a dim background.
    """
    rng = np.random.default_rng(seed)
    img = np.full(tuple(shape), background, dtype=np.float64)
    for _ in range(rects):
        lo = [int(rng.integers(0, max(1, n - n // 4))) for n in shape]
        ext = [int(rng.integers(max(1, n // 5), max(2, n // 2) + 1)) for n in shape]
        idx = tuple(slice(a, a + e) for a, e in zip(lo, ext))
        img[idx] = rng.uniform(0.5, 0.9)
    return img.ravel()
