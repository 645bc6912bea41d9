import numpy as np
import pytest

from polnlos import DegenerateGeometryError
from polnlos.brdf import RoughSurface
from polnlos.geometry import (ActiveParams, CameraPose, OccluderRect, SceneConfig, SceneGrid,
                              WallGrid)
from polnlos.polarization import FresnelMedium, PolarizerConfig
from polnlos.transport import build_active, build_passive

ACCEPTANCE_LINES = []


def random_config(seed, active=False, occluded=True):
    """Small randomized but valid scene; retries until every ray is well posed."""
    rng = np.random.default_rng(seed)
    for _ in range(100):
        nw = int(rng.integers(3, 7))
        size = rng.uniform(0.1, 0.3)
        wall = WallGrid(origin=(-size / 2, -size / 2, 0.0), u_axis=(size / nw, 0, 0),
                        v_axis=(0, size / nw, 0), nu=nw, nv=int(rng.integers(3, 7)))
        ns = int(rng.integers(1, 4))
        step = rng.uniform(0.01, 0.05)
        height = rng.uniform(0.1, 0.4)
        center = np.array([*rng.uniform(-0.2, 0.2, 2), height])
        scene = SceneGrid(origin=center - [ns * step / 2, ns * step / 2, 0], u_axis=(step, 0, 0),
                          v_axis=(0, step, 0), nu=ns, nv=ns)
        cams = []
        for _ in range(int(rng.integers(1, 3))):
            pos = np.array([*rng.uniform(-0.15, 0.15, 2), rng.uniform(0.1, 0.3)])
            target = np.array([*rng.uniform(-size / 4, size / 4, 2), 0.0])
            normal = (target - pos) / np.linalg.norm(target - pos)
            cams.append(CameraPose(pos, PolarizerConfig.from_angle(rng.uniform(0, np.pi), normal)))
        occ = []
        if occluded and rng.random() < 0.8:
            zo = rng.uniform(0.02, height - 0.01)
            occ.append(OccluderRect((rng.uniform(-0.2, 0.2), -1.0, zo), (2.0, 0, 0), (0, rng.uniform(0.2, 2.0), 0)))
        act = None
        if active:
            act = ActiveParams(bin_width=rng.uniform(20e-12, 200e-12), bin_count=400,
                               illumination_patch=int(rng.integers(wall.size)))
        surface = RoughSurface(rng.uniform(0.05, 1.0), FresnelMedium(rng.uniform(1.2, 1.8)))
        cfg = SceneConfig(wall, scene, cams, surface, occluders=occ, active=act,
                          leakage_form=str(rng.choice(["linear", "squared"])))
        try:
            build_passive(cfg, use_polarizer=True)
            if active:
                build_active(cfg, use_polarizer=True)
        except DegenerateGeometryError:
            continue
        return cfg
    raise RuntimeError("could not draw a valid configuration")


@pytest.fixture
def report():
    """Record one acceptance line; printed in the terminal summary."""
    def _report(criterion, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
