"""Condition numbers of transport matrices and parameter sweeps over them."""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from polnlos.brdf import RoughSurface
from polnlos.transport import (TransportMatrix, build_active, build_occluded, build_passive,
                               single_camera, stack_cameras)

RANK_TOL = 1e-14

CONFIGURATIONS = (
    "unpolarized",
    "rotating",
    "polarized-single",
    "polarized-multi",
    "unpolarized-occluded",
    "polarized-single-occluded",
    "polarized-multi-occluded",
)


def condition_number(T):
    """sigma_max / sigma_min from a full SVD; ``inf`` when numerically rank deficient."""
    data = T.data if isinstance(T, TransportMatrix) else np.asarray(T, dtype=np.float64)
    if data.ndim != 2 or data.size == 0:
        raise ValueError(f"condition number needs a non-empty 2-D matrix, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("matrix contains non-finite entries")
    if data.shape[0] < data.shape[1]:
        # fewer rows than columns always leaves a null space
        return float("inf")
    s = np.linalg.svd(data, compute_uv=False)
    if s[0] == 0 or s[-1] < s[0] * RANK_TOL:
        return float("inf")
    return float(s[0] / s[-1])


def _ratio(num, den):
    if np.isinf(num) and np.isinf(den):
        return float("nan")
    if np.isinf(den):
        return 0.0
    return num / den


@dataclass
class SweepResult:
    """Condition numbers per configuration over one swept parameter.

    ``ratios`` maps each polarized configuration to its condition number
    divided by the matching unpolarized baseline (``nan`` when both are
    infinite). For active sweeps ``extra["resolutions"]`` labels the rows of
    each 2-D grid.
    """

    parameter: str
    values: list
    kappas: dict
    ratios: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.values)
        for name, ks in list(self.kappas.items()) + list(self.ratios.items()):
            if np.shape(ks)[-1] != n:
                raise ValueError(f"{name!r} has {np.shape(ks)[-1]} entries for {n} parameter values")
        for name, ks in self.kappas.items():
            arr = np.asarray(ks, dtype=np.float64)
            if np.any(arr < 1.0 - 1e-12):
                raise ValueError(f"condition numbers below 1 in {name!r}")


def _max_workers():
    raw = os.environ.get("POLNLOS_THREADS")
    if raw is None or raw == "":
        return min(8, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"POLNLOS_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("POLNLOS_THREADS must be >= 1")
    return n


def _map_ordered(fn, items):
    items = list(items)
    workers = min(_max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map keeps submission order, so results are independent of scheduling
        return list(pool.map(fn, items))


def with_roughness(config, gamma):
    surface = config.surface
    return replace(config, surface=RoughSurface(gamma, surface.medium, surface.wall_normal))


def rotating_transport(config, angles=None):
    """Rows of camera 0 observed through its polarizer at each rotation angle, stacked."""
    cam = config.cameras[0]
    if cam.polarizer is None:
        raise ValueError("the rotating configuration needs a polarizer on camera 0")
    angles = config.rotating_angles if angles is None else angles
    mats = []
    for a in angles:
        rotated = replace(cam, polarizer=cam.polarizer.rotated(a))
        mats.append(build_passive(replace(config, cameras=(rotated,)), use_polarizer=True))
    return stack_cameras(mats)


def configuration_transport(config, name):
    """Transport matrix for one named configuration of ``CONFIGURATIONS``."""
    single = single_camera(config, 0)
    builders = {
        "unpolarized": lambda: build_passive(single),
        "rotating": lambda: rotating_transport(single),
        "polarized-single": lambda: build_passive(single, use_polarizer=True),
        "polarized-multi": lambda: build_passive(config, use_polarizer=True),
        "unpolarized-occluded": lambda: build_occluded(single),
        "polarized-single-occluded": lambda: build_occluded(single, use_polarizer=True),
        "polarized-multi-occluded": lambda: build_occluded(config, use_polarizer=True),
    }
    if name not in builders:
        raise ValueError(f"unknown configuration {name!r}; expected one of {CONFIGURATIONS}")
    return builders[name]()


def _baseline(name):
    return "unpolarized-occluded" if name.endswith("-occluded") else "unpolarized"


def roughness_sweep(base, gammas, configurations=("unpolarized", "polarized-single", "polarized-multi")):
    """Condition numbers of each configuration as the wall roughness varies.

    Every cell rebuilds its matrix from scratch. Ratios are stored for every
    non-baseline configuration whose unpolarized baseline was also requested.
    """
    gammas = [float(g) for g in gammas]
    if any(not 0.0 <= g <= 1.0 for g in gammas):
        raise ValueError("roughness values must lie in [0, 1]")
    requested = set(configurations)
    unknown = requested - set(CONFIGURATIONS)
    if unknown or not requested:
        raise ValueError(f"configurations must be a non-empty subset of {CONFIGURATIONS}, "
                         f"got unknown {sorted(unknown)}")
    configurations = [c for c in CONFIGURATIONS if c in requested]
    cells = [(g, name) for g in gammas for name in configurations]
    values = _map_ordered(lambda cell: condition_number(
        configuration_transport(with_roughness(base, cell[0]), cell[1])), cells)
    kappas = {name: [] for name in configurations}
    for (g, name), k in zip(cells, values):
        kappas[name].append(k)
    ratios = {}
    for name in configurations:
        ref = _baseline(name)
        if name != ref and ref in kappas:
            ratios[name] = [_ratio(a, b) for a, b in zip(kappas[name], kappas[ref])]
    return SweepResult("roughness", gammas, kappas, ratios)


def active_config(base, gamma, resolution):
    """``base`` with roughness ``gamma`` and a ``resolution``^3 voxel scene."""
    if base.active is None:
        raise ValueError("config has no active parameters")
    grid = base.active.voxel_grid(resolution, fallback=base.scene)
    return replace(with_roughness(base, gamma), scene=grid)


def active_sweep(base, gammas, resolutions):
    """Polarized vs unpolarized active-transport condition numbers on a (resolution, gamma) grid.

    Result lists are indexed ``[resolution][gamma]``.
    """
    gammas = [float(g) for g in gammas]
    resolutions = [int(r) for r in resolutions]
    if any(not 0.0 <= g <= 1.0 for g in gammas):
        raise ValueError("roughness values must lie in [0, 1]")
    cells = [(r, g, pol) for r in resolutions for g in gammas for pol in (False, True)]
    values = _map_ordered(lambda c: condition_number(build_active(active_config(base, c[1], c[0]), c[2])),
                          cells)
    n = len(gammas)
    grid = np.array(values, dtype=np.float64).reshape(len(resolutions), n, 2)
    kappas = {"unpolarized": grid[:, :, 0].tolist(), "polarized": grid[:, :, 1].tolist()}
    ratios = {"polarized": [[_ratio(p, u) for u, p in row] for row in grid.tolist()]}
    return SweepResult("roughness", gammas, kappas, ratios, extra={"resolutions": resolutions})
