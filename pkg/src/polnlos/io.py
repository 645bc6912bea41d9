"""File formats: JSON scene configs, PNLT matrices, 16-bit PGM images, CSV.

Every writer goes through :func:`atomic_write`, so readers never observe a
half-written file.
"""
import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from polnlos import ConfigError, __version__
from polnlos.brdf import RoughSurface
from polnlos.geometry import (ActiveParams, CameraPose, OccluderRect, SceneConfig, SceneGrid,
                              WallGrid)
from polnlos.metrics import ImageBuffer
from polnlos.polarization import FresnelMedium, PolarizerConfig
from polnlos.transport import TransportMatrix
from polnlos.vectors import normalize

MAGIC = b"PNLT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
_U64 = struct.Struct("<Q")
PGM_MAXVAL = 65535


class MatrixFormatError(ValueError):
    """A PNLT file is malformed, truncated or too large."""


class ImageFormatError(ValueError):
    """A PGM file is malformed or uses an unsupported sample depth."""


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` via a temporary file and rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------- config

def _fail(path, msg):
    raise ConfigError(f"{path}: {msg}" if path else msg)


def _resolve_angles(obj, path=""):
    """Replace ``<name>_deg`` / ``<name>_rad`` keys by ``<name>`` in radians."""
    if isinstance(obj, list):
        return [_resolve_angles(v, f"{path}[{i}]") for i, v in enumerate(obj)]
    if not isinstance(obj, dict):
        return obj
    out = {}
    for key, val in obj.items():
        sub = f"{path}.{key}" if path else key
        for suffix, conv in (("_deg", math.radians), ("_rad", float)):
            if key.endswith(suffix):
                base = key[: -len(suffix)]
                if base in out or any(k in obj for k in (base, base + "_deg", base + "_rad") if k != key):
                    _fail(sub, f"angle '{base}' given more than once")
                try:
                    out[base] = [conv(float(v)) for v in val] if isinstance(val, list) else conv(float(val))
                except (TypeError, ValueError):
                    _fail(sub, "expected a number or a list of numbers")
                break
        else:
            out[key] = _resolve_angles(val, sub)
    return out


def _get(doc, key, path, required=True, default=None):
    if not isinstance(doc, dict):
        _fail(path, "expected an object")
    if key not in doc:
        if required:
            _fail(f"{path}.{key}" if path else key, "missing required field")
        return default
    return doc[key]


def _vec(doc, key, path, required=True, default=None):
    val = _get(doc, key, path, required, default)
    sub = f"{path}.{key}" if path else key
    if val is None:
        return None
    if (not isinstance(val, (list, tuple)) or len(val) != 3
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val)):
        _fail(sub, "expected a list of 3 numbers")
    return np.array(val, dtype=np.float64)


def _num(doc, key, path, required=True, default=None, kind=float):
    val = _get(doc, key, path, required, default)
    sub = f"{path}.{key}" if path else key
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        _fail(sub, f"expected a number, got {type(val).__name__}")
    if kind is int:
        if int(val) != val:
            _fail(sub, "expected an integer")
        return int(val)
    return float(val)


def _check_keys(doc, allowed, path):
    extra = set(doc) - set(allowed)
    if extra:
        _fail(path, f"unknown field(s) {sorted(extra)}")


def _grid_kwargs(doc, path, planar):
    keys = ["origin", "u_axis", "v_axis", "nu", "nv"] + ([] if planar else ["w_axis", "nw", "emission"])
    _check_keys(doc, keys, path)
    kw = dict(origin=_vec(doc, "origin", path), u_axis=_vec(doc, "u_axis", path),
              v_axis=_vec(doc, "v_axis", path), nu=_num(doc, "nu", path, kind=int),
              nv=_num(doc, "nv", path, kind=int))
    if not planar:
        if "w_axis" in doc or "nw" in doc:
            kw["w_axis"] = _vec(doc, "w_axis", path)
            kw["nw"] = _num(doc, "nw", path, kind=int)
        if doc.get("emission") is not None:
            kw["emission"] = np.asarray(doc["emission"], dtype=np.float64)
    return kw


def _polarizer(doc, path, position, wall):
    if doc is None:
        return None
    _check_keys(doc, ["axis", "normal", "look_at"], path)
    axis = _num(doc, "axis", path)
    if "normal" in doc and "look_at" in doc:
        _fail(path, "give either normal or look_at, not both")
    if "normal" in doc:
        normal = _vec(doc, "normal", path)
    else:
        target = _vec(doc, "look_at", path, required=False, default=None)
        target = wall.center if target is None else target
        normal = normalize(target - position)
    return PolarizerConfig.from_angle(axis, normal, reference=wall.normal)


def _wrap(path, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ValueError as exc:
        msg = str(exc)
        if path and msg.startswith(path):
            raise
        _fail(path, msg)


def parse_config_dict(doc):
    """Build a validated :class:`SceneConfig` from a decoded JSON document."""
    if not isinstance(doc, dict):
        _fail("", "config document must be a JSON object")
    doc = _resolve_angles(doc)
    _check_keys(doc, ["wall", "scene", "cameras", "surface", "polarizer", "occluders", "noise_sigma",
                      "active", "falloff_enabled", "leakage_form", "rotating_angles", "extras"], "")
    wall = _wrap("wall", WallGrid, **_grid_kwargs(_get(doc, "wall", ""), "wall", planar=True))
    scene = _wrap("scene", SceneGrid, **_grid_kwargs(_get(doc, "scene", ""), "scene", planar=False))

    surf_doc = _get(doc, "surface", "")
    _check_keys(surf_doc, ["roughness", "refractive_index"], "surface")
    medium = _wrap("surface.refractive_index", FresnelMedium,
                   _num(surf_doc, "refractive_index", "surface"))
    surface = _wrap("surface.roughness", RoughSurface, _num(surf_doc, "roughness", "surface"),
                    medium, wall.normal)

    default_pol = doc.get("polarizer")
    cams_doc = _get(doc, "cameras", "")
    if not isinstance(cams_doc, list) or not cams_doc:
        _fail("cameras", "expected a non-empty list")
    cameras = []
    for i, cd in enumerate(cams_doc):
        path = f"cameras[{i}]"
        if not isinstance(cd, dict):
            _fail(path, "expected an object")
        _check_keys(cd, ["position", "polarizer"], path)
        pos = _vec(cd, "position", path)
        pol_doc = cd["polarizer"] if "polarizer" in cd else default_pol
        pol_path = f"{path}.polarizer" if "polarizer" in cd else "polarizer"
        pol = _wrap(pol_path, _polarizer, pol_doc, pol_path, pos, wall)
        cameras.append(CameraPose(pos, pol))

    occluders = []
    for i, od in enumerate(_get(doc, "occluders", "", required=False, default=[]) or []):
        path = f"occluders[{i}]"
        _check_keys(od, ["corner", "edge_u", "edge_v"], path)
        occluders.append(_wrap(path, OccluderRect, _vec(od, "corner", path),
                               _vec(od, "edge_u", path), _vec(od, "edge_v", path)))

    active = None
    act_doc = doc.get("active")
    if act_doc is not None:
        _check_keys(act_doc, ["bin_width_ps", "bin_count", "illumination_patch", "volume_center",
                              "volume_edge"], "active")
        active = _wrap("active", ActiveParams,
                       _num(act_doc, "bin_width_ps", "active") * 1e-12,
                       _num(act_doc, "bin_count", "active", kind=int),
                       _num(act_doc, "illumination_patch", "active", kind=int),
                       _vec(act_doc, "volume_center", "active", required=False),
                       _num(act_doc, "volume_edge", "active", required=False))

    kwargs = {}
    if "rotating_angles" in doc:
        angles = doc["rotating_angles"]
        if not isinstance(angles, list) or not angles:
            _fail("rotating_angles", "expected a non-empty list of angles")
        kwargs["rotating_angles"] = tuple(angles)
    falloff = doc.get("falloff_enabled", True)
    if not isinstance(falloff, bool):
        _fail("falloff_enabled", "expected true or false")
    extras = doc.get("extras", {})
    if not isinstance(extras, dict):
        _fail("extras", "expected an object")
    return _wrap("", SceneConfig, wall=wall, scene=scene, cameras=cameras, surface=surface,
                 occluders=occluders,
                 noise_sigma=_num(doc, "noise_sigma", "", required=False, default=0.0),
                 active=active, falloff_enabled=falloff,
                 leakage_form=doc.get("leakage_form", "linear"), extras=extras, **kwargs)


def parse_config(text):
    """Parse a JSON config string; see the README for the schema."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config_dict(doc)


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"))


def default_config_path(name="default_table1.json"):
    return resources.files("polnlos") / "data" / name


def load_default_config(name="default_table1.json"):
    return parse_config(default_config_path(name).read_text(encoding="utf-8"))


def _list(v):
    return [float(x) for x in np.asarray(v).ravel()]


def config_to_dict(cfg):
    """Inverse of :func:`parse_config_dict`; angles are written in radians."""
    def grid(g):
        d = {"origin": _list(g.origin), "u_axis": _list(g.u_axis), "v_axis": _list(g.v_axis),
             "nu": g.nu, "nv": g.nv}
        if g.nw > 1:
            d.update(w_axis=_list(g.w_axis), nw=g.nw)
        return d

    scene = grid(cfg.scene)
    if cfg.scene.emission is not None:
        scene["emission"] = cfg.scene.emission.tolist()
    cams = []
    for cam in cfg.cameras:
        pol = None
        if cam.polarizer is not None:
            pol = {"axis_rad": cam.polarizer.axis_angle, "normal": _list(cam.polarizer.normal)}
        cams.append({"position": _list(cam.position), "polarizer": pol})
    doc = {
        "wall": grid(cfg.wall),
        "scene": scene,
        "cameras": cams,
        "surface": {"roughness": cfg.surface.roughness,
                    "refractive_index": cfg.surface.medium.refractive_index},
        "occluders": [{"corner": _list(o.corner), "edge_u": _list(o.edge_u), "edge_v": _list(o.edge_v)}
                      for o in cfg.occluders],
        "noise_sigma": cfg.noise_sigma,
        "falloff_enabled": cfg.falloff_enabled,
        "leakage_form": cfg.leakage_form,
        "rotating_angles_rad": list(cfg.rotating_angles),
        "extras": cfg.extras,
    }
    if cfg.active is not None:
        act = cfg.active
        doc["active"] = {"bin_width_ps": act.bin_width * 1e12, "bin_count": act.bin_count,
                         "illumination_patch": act.illumination_patch}
        if act.volume_center is not None:
            doc["active"].update(volume_center=list(act.volume_center), volume_edge=act.volume_edge)
    return doc


def serialize_config(cfg):
    return json.dumps(config_to_dict(cfg), indent=2)


# --------------------------------------------------------------------- matrix

def _meta_block(T, extra):
    meta = {"row_meta": T.row_meta.tolist(), "col_meta": T.col_meta.tolist(), "extra": extra}
    return json.dumps(meta, sort_keys=True).encode("utf-8")


def matrix_bytes(T, extra=None):
    if not isinstance(T, TransportMatrix):
        data = np.asarray(T, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        T = TransportMatrix(data, np.zeros((data.shape[0], 0)), np.zeros((data.shape[1], 0)))
    merged = dict(T.extra)
    merged.update(extra or {})
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, T.rows, T.cols)
    body = T.data.astype("<f8", copy=False).tobytes(order="C")
    meta = _meta_block(T, merged)
    return head + body + _U64.pack(len(meta)) + meta


def write_matrix(T, path, extra=None):
    """Write a matrix (or a vector, as one column) in the PNLT format."""
    atomic_write(path, matrix_bytes(T, extra))


def matrix_from_bytes(buf):
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise MatrixFormatError(f"bad magic {bytes(buf[:4])!r}; expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise MatrixFormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes")
    _, version, rows, cols = _HEADER.unpack_from(buf)
    if version != FORMAT_VERSION:
        raise MatrixFormatError(f"unsupported format version {version}; expected {FORMAT_VERSION}")
    count = rows * cols
    if count * 8 > 2**63 - 1:
        raise MatrixFormatError(f"dimensions {rows}x{cols} overflow the addressable size")
    start, end = _HEADER.size, _HEADER.size + count * 8
    if len(buf) < end:
        raise MatrixFormatError(f"truncated data: expected {count * 8} bytes of values, "
                                f"found {len(buf) - start}")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=start).astype(np.float64)
    data = data.reshape(rows, cols)
    row_meta, col_meta, extra = np.zeros((rows, 0)), np.zeros((cols, 0)), {}
    if len(buf) > end:
        if len(buf) < end + _U64.size:
            raise MatrixFormatError("truncated metadata length")
        (n,) = _U64.unpack_from(buf, end)
        blob = buf[end + _U64.size:]
        if len(blob) < n:
            raise MatrixFormatError(f"truncated metadata: {len(blob)} of {n} bytes")
        if len(blob) > n:
            raise MatrixFormatError(f"{len(blob) - n} trailing bytes after the metadata block")
        try:
            meta = json.loads(bytes(blob).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MatrixFormatError(f"metadata is not valid JSON: {exc}") from None
        row_meta = np.asarray(meta.get("row_meta", []), dtype=np.int64).reshape(rows, -1)
        col_meta = np.asarray(meta.get("col_meta", []), dtype=np.int64).reshape(cols, -1)
        extra = meta.get("extra", {})
    return TransportMatrix(data, row_meta, col_meta, extra)


def read_matrix(path):
    return matrix_from_bytes(Path(path).read_bytes())


def read_vector(path):
    """Read a single-column PNLT file as a 1-D array."""
    T = read_matrix(path)
    if T.cols != 1:
        raise MatrixFormatError(f"expected a single-column vector, got {T.rows}x{T.cols}")
    return T.data[:, 0].copy()


# ---------------------------------------------------------------------- image

def image_bytes(img, comment=None):
    px = img.pixels if isinstance(img, ImageBuffer) else ImageBuffer(img).pixels
    if np.any(px < 0) or np.any(px > 1):
        raise ValueError("image values must lie in [0, 1] for 16-bit PGM output")
    samples = np.rint(px * PGM_MAXVAL).astype(">u2")
    head = "P5\n"
    if comment:
        head += "".join(f"# {line}\n" for line in str(comment).splitlines())
    head += f"{px.shape[1]} {px.shape[0]}\n{PGM_MAXVAL}\n"
    return head.encode("ascii") + samples.tobytes()


def write_image(img, path, comment=None):
    """16-bit binary PGM with [0, 1] mapped linearly onto [0, 65535]."""
    atomic_write(path, image_bytes(img, comment))


def _pgm_tokens(buf):
    tokens, i = [], 2
    while len(tokens) < 3:
        while i < len(buf) and (buf[i:i + 1].isspace() or buf[i:i + 1] == b"#"):
            if buf[i:i + 1] == b"#":
                while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                    i += 1
            else:
                i += 1
        j = i
        while j < len(buf) and buf[j:j + 1].isdigit():
            j += 1
        if j == i:
            raise ImageFormatError("malformed PGM header")
        tokens.append(int(buf[i:j]))
        i = j
    if i >= len(buf) or not buf[i:i + 1].isspace():
        raise ImageFormatError("malformed PGM header")
    return tokens, i + 1


def image_from_bytes(buf):
    if buf[:2] != b"P5":
        raise ImageFormatError("not a binary PGM (expected magic 'P5')")
    (width, height, maxval), start = _pgm_tokens(buf)
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid PGM size {width}x{height}")
    if not 1 <= maxval <= PGM_MAXVAL:
        raise ImageFormatError(f"unsupported maxval {maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    nbytes = width * height * np.dtype(dtype).itemsize
    if len(buf) - start < nbytes:
        raise ImageFormatError(f"truncated PGM data: expected {nbytes} bytes, found {len(buf) - start}")
    samples = np.frombuffer(buf, dtype=dtype, count=width * height, offset=start)
    return ImageBuffer(samples.reshape(height, width).astype(np.float64) / maxval)


def read_image(path):
    return image_from_bytes(Path(path).read_bytes())


# ------------------------------------------------------------------------ csv

def format_number(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def csv_text(header, rows):
    for name in header:
        if any(c in str(name) for c in ",\n\r\""):
            raise ValueError(f"CSV header field {name!r} needs quoting")
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"CSV row has {len(row)} fields; header has {len(header)}")
        lines.append(",".join(format_number(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows):
    """Header row plus numeric rows at 17 significant digits."""
    atomic_write(path, csv_text(header, rows))


def read_csv(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError("empty CSV")
    header = lines[0].split(",")
    return header, [[float(v) for v in line.split(",")] for line in lines[1:] if line]


def sweep_rows(result):
    """Flatten a :class:`~polnlos.conditioning.SweepResult` into CSV header and rows."""
    if "resolutions" in result.extra:
        header = [result.parameter, "resolution", "kappa_unpolarized", "kappa_polarized", "ratio_polarized"]
        rows = []
        for i, r in enumerate(result.extra["resolutions"]):
            for j, v in enumerate(result.values):
                rows.append([v, r, result.kappas["unpolarized"][i][j], result.kappas["polarized"][i][j],
                             result.ratios["polarized"][i][j]])
        return header, rows
    names = list(result.kappas)
    ratio_names = list(result.ratios)
    header = [result.parameter] + [f"kappa_{n}" for n in names] + [f"ratio_{n}" for n in ratio_names]
    rows = [[v] + [result.kappas[n][k] for n in names] + [result.ratios[n][k] for n in ratio_names]
            for k, v in enumerate(result.values)]
    return header, rows


# ------------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    """Provenance record written next to every CLI output."""

    config_path: str
    subcommand: str
    parameters: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    seed: int = 0
    version: str = __version__

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path):
        atomic_write(path, self.to_json() + "\n")

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))
