"""On-disk formats: binary cubes, CSV matrices, PGM maps and scene bundles.

Binary cube layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"FUMICUBE"
    8       4     uint32 format version (1)
    12      4     uint32 reserved (0)
    16      8     uint64 bands
    24      8     uint64 n_rows
    32      8     uint64 n_cols
    40      ...   float64 little-endian samples, band fastest, then row, then column

The sample order is the column-major flattening of the ``bands x pixels``
matrix, so ``data.reshape(-1, order="F")`` writes it directly.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .datagen import Scene, default_blur
from .model import BandNoise, DegradationModel, Downsampler, SpectralImage

__all__ = [
    "CUBE_MAGIC",
    "CUBE_VERSION",
    "write_cube",
    "read_cube",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_pgm",
    "read_pgm",
    "write_map",
    "write_json",
    "save_scene",
    "load_scene",
    "BUNDLE_FILES",
]

CUBE_MAGIC = b"FUMICUBE"
CUBE_VERSION = 1
_HEADER = struct.Struct("<8sII3Q")
BUNDLE_FILES = ("M.csv", "A.bin", "X.bin", "YH.bin", "YM.bin", "R.csv", "meta.json")


def write_cube(path, X: SpectralImage) -> None:
    header = _HEADER.pack(CUBE_MAGIC, CUBE_VERSION, 0, X.bands, X.n_rows, X.n_cols)
    body = np.asarray(X.data, dtype="<f8").reshape(-1, order="F").tobytes()
    Path(path).write_bytes(header + body)


def read_cube(path) -> SpectralImage:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, _, bands, n_rows, n_cols = _HEADER.unpack_from(raw)
    if magic != CUBE_MAGIC:
        raise ValueError(f"{path}: not a cube file (magic {magic!r})")
    if version != CUBE_VERSION:
        raise ValueError(f"{path}: unsupported cube version {version}")
    count = bands * n_rows * n_cols
    expected = _HEADER.size + 8 * count
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8", count=count, offset=_HEADER.size)
    data = flat.reshape(bands, n_rows * n_cols, order="F").astype(float)
    return SpectralImage(data, int(n_rows), int(n_cols))


def write_matrix_csv(path, M: np.ndarray) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    width = len(rows[0])
    for lineno, r in enumerate(rows, start=1):
        if len(r) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(r)}")
    try:
        return np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def write_pgm(path, img: np.ndarray) -> dict:
    """Write a 2-D array as an 8-bit binary PGM, min-max scaled.

    Returns the ``{"min", "max"}`` scale needed to map grey levels back
    (``value = min + level / 255 * (max - min)``).
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo
    levels = np.zeros(img.shape) if span == 0 else (img - lo) / span * 255.0
    pix = np.clip(np.rint(levels), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())
    return {"min": lo, "max": hi}


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: only binary P5 PGM is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pos += 1
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_map(path, img: np.ndarray) -> None:
    """PGM map plus a ``<name>.json`` sidecar holding its scale."""
    path = Path(path)
    write_json(path.with_suffix(".json"), write_pgm(path, img))


def save_scene(directory, scene: Scene) -> Path:
    """Write a scene bundle (see :data:`BUNDLE_FILES`)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    model = scene.model
    if scene.M_ref is not None:
        write_matrix_csv(out / "M.csv", scene.M_ref)
    if scene.A_ref is not None:
        write_cube(out / "A.bin", SpectralImage(scene.A_ref, *scene.X_ref.shape))
    write_cube(out / "X.bin", scene.X_ref)
    write_cube(out / "YH.bin", scene.Y_H)
    write_cube(out / "YM.bin", scene.Y_M)
    write_matrix_csv(out / "R.csv", model.response)
    meta = dict(scene.meta)
    meta.update({
        "bands": scene.X_ref.bands,
        "pixels": scene.X_ref.pixels,
        "n_rows": scene.X_ref.n_rows,
        "n_cols": scene.X_ref.n_cols,
        "p": None if scene.M_ref is None else int(scene.M_ref.shape[1]),
        "d": model.downsampler.d,
        "noise_hs": [float(v) for v in model.noise_hs.variances],
        "noise_ms": [float(v) for v in model.noise_ms.variances],
    })
    write_json(out / "meta.json", meta)
    return out


def load_scene(directory) -> Scene:
    src = Path(directory)
    meta_path = src / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{src}: not a scene bundle (no meta.json)")
    meta = json.loads(meta_path.read_text())
    X = read_cube(src / "X.bin")
    Y_H = read_cube(src / "YH.bin")
    Y_M = read_cube(src / "YM.bin")
    R = read_matrix_csv(src / "R.csv")
    M = read_matrix_csv(src / "M.csv") if (src / "M.csv").exists() else None
    A = read_cube(src / "A.bin").data if (src / "A.bin").exists() else None
    model = DegradationModel(
        default_blur(X.n_rows, X.n_cols, meta["sigma"], meta["size"]),
        Downsampler(int(meta["d"])),
        R,
        BandNoise(np.array(meta["noise_hs"])),
        BandNoise(np.array(meta["noise_ms"])),
        draw_noise=bool(meta.get("noise", True)),
    )
    return Scene(M, A, X, Y_H, Y_M, model, meta)
