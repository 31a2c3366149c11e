"""File formats: 3DGS PLY, camera JSON, PFM depth, PNG images and masks,
correspondence JSON."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .core import Camera, SplatCloud
from .errors import PlyDataError, PlyFormatError
from .sh import num_coeffs

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _read_header(f):
    first = f.readline()
    if first.strip() != b"ply":
        raise PlyFormatError("not a PLY file (missing 'ply' magic)")
    fmt = None
    count = None
    props = []
    in_vertex = False
    while True:
        raw = f.readline()
        if not raw:
            raise PlyFormatError("unexpected end of file inside header")
        line = raw.decode("ascii").strip()
        if line == "end_header":
            break
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
            elif count is not None and int(parts[2]) > 0:
                raise PlyFormatError(f"unsupported extra element '{parts[1]}'")
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise PlyFormatError("list properties are not supported for vertices")
            if parts[1] not in _PLY_TYPES:
                raise PlyFormatError(f"unknown property type '{parts[1]}'")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if fmt not in ("binary_little_endian", "ascii"):
        raise PlyFormatError(f"unsupported PLY format '{fmt}'")
    if count is None:
        raise PlyFormatError("missing 'element vertex'")
    return fmt, count, props


def load_ply(path) -> SplatCloud:
    """Read a 3DGS-layout PLY (opacity stored as logit, scales as log)."""
    with open(path, "rb") as f:
        fmt, count, props = _read_header(f)
        if fmt == "ascii":
            dtype = np.dtype([(name, "f8") for name, _ in props])
            data = np.loadtxt(f, dtype=dtype, ndmin=1, max_rows=count) if count else np.zeros(0, dtype)
        else:
            dtype = np.dtype([(name, "<" + t) for name, t in props])
            buf = f.read(count * dtype.itemsize)
            if len(buf) < count * dtype.itemsize:
                raise PlyFormatError("truncated vertex data")
            data = np.frombuffer(buf, dtype=dtype, count=count)

    names = set(dtype.names or ())
    base = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
            "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    for name in base:
        if name not in names:
            raise PlyFormatError(f"missing property '{name}'")
    n_rest = sum(1 for nm in names if nm.startswith("f_rest_"))
    k = n_rest // 3 + 1
    degree = int(round(np.sqrt(k))) - 1
    if n_rest % 3 or num_coeffs(degree) != k:
        raise PlyFormatError(f"f_rest count {n_rest} does not match any SH degree")
    for i in range(n_rest):
        if f"f_rest_{i}" not in names:
            raise PlyFormatError(f"missing property 'f_rest_{i}'")

    def col(*cols):
        return np.stack([np.asarray(data[c], dtype=np.float64) for c in cols], axis=-1)

    means = col("x", "y", "z")
    dc = col("f_dc_0", "f_dc_1", "f_dc_2")
    rest = col(*[f"f_rest_{i}" for i in range(n_rest)]) if n_rest else np.zeros((count, 0))
    raw_opacity = np.asarray(data["opacity"], dtype=np.float64) if count else np.zeros(0)
    raw_scale = col("scale_0", "scale_1", "scale_2")
    quats = col("rot_0", "rot_1", "rot_2", "rot_3")

    every = np.concatenate([means, dc, rest, raw_opacity[:, None], raw_scale, quats], axis=1)
    bad = np.flatnonzero(~np.all(np.isfinite(every), axis=1))
    if bad.size:
        raise PlyDataError(f"non-finite value in primitive {int(bad[0])}")

    sh = np.empty((count, k, 3))
    sh[:, 0, :] = dc
    # f_rest is channel-major: rest[c * (k-1) + j]
    sh[:, 1:, :] = rest.reshape(count, 3, k - 1).transpose(0, 2, 1)
    opac = np.clip(_sigmoid(raw_opacity), 1e-12, 1 - 1e-12)
    return SplatCloud(means, quats, np.exp(raw_scale), opac, sh)


def save_ply(cloud: SplatCloud, path, dtype="f4"):
    """Write ``cloud`` as binary little-endian PLY in the common 3DGS layout."""
    n = len(cloud)
    k = cloud.sh.shape[1]
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * (k - 1))]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    ply_type = {"f4": "float", "f8": "double"}[dtype]
    arr = np.zeros(n, dtype=np.dtype([(nm, "<" + dtype) for nm in names]))
    cols = np.concatenate(
        [
            cloud.means,
            np.zeros((n, 3)),
            cloud.sh[:, 0, :],
            cloud.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * (k - 1)),
            _logit(cloud.opacities)[:, None],
            np.log(cloud.scales),
            cloud.quats,
        ],
        axis=1,
    )
    for i, nm in enumerate(names):
        arr[nm] = cols[:, i]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {ply_type} {nm}" for nm in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(arr.tobytes())


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------


def save_cameras(cams, path):
    Path(path).write_text(json.dumps([c.to_dict() for c in cams], indent=1))


def load_cameras(path):
    return [Camera.from_dict(d) for d in json.loads(Path(path).read_text())]


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def save_pfm(path, image):
    """Write a float32 PFM, ``(H, W)`` or ``(H, W, 3)`` (bottom-to-top rows)."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim == 2:
        kind = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        kind = "PF"
    else:
        raise ValueError(f"PFM needs an (H, W) or (H, W, 3) image, got {img.shape}")
    with open(path, "wb") as f:
        f.write(f"{kind}\n{img.shape[1]} {img.shape[0]}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(img).tobytes())


def load_pfm(path):
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ValueError("not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        chans = 3 if kind == b"PF" else 1
        dt = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * chans * 4), dtype=dt)
    shape = (h, w, 3) if chans == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def linear_to_srgb(x):
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_to_linear(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def save_color_png(path, color):
    Image.fromarray(np.round(linear_to_srgb(color) * 255).astype(np.uint8)).save(path)


def load_color_png(path):
    return srgb_to_linear(np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0)


def save_mask_png(path, mask):
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def load_mask_png(path):
    return np.asarray(Image.open(path).convert("L")) > 127


# ---------------------------------------------------------------------------
# correspondences
# ---------------------------------------------------------------------------


def save_correspondences(path, pairs, view_index=None):
    doc = {
        "pairs": [
            {"p_gen": [float(v) for v in p.p_gen], "p_par": [float(v) for v in p.p_par], "confidence": float(p.confidence)}
            for p in pairs
        ],
        "view_index": view_index,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_correspondences(path):
    from .correspond import Corr3D

    doc = json.loads(Path(path).read_text())
    return [Corr3D(np.asarray(p["p_gen"], float), np.asarray(p["p_par"], float), float(p.get("confidence", 1.0)))
            for p in doc["pairs"]], doc.get("view_index")
