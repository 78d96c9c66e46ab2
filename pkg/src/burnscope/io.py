"""On-disk formats.

A cube lives in two files: ``<stem>.hdr.json`` (shape, wavelengths, tags,
mask) and ``<stem>.raw`` (little-endian float32, band-interleaved-by-pixel).
Scalar and label maps use the same pattern with one band (float32 / uint16).
"""

from __future__ import annotations

import base64
import csv
import json
from pathlib import Path
from typing import Any

import numpy as np

from .core import LABEL_SENTINEL, HyperCube, LabelMap, ScalarMap, WavelengthGrid
from .errors import DataError

HEADER_SUFFIX = ".hdr.json"
RAW_SUFFIX = ".raw"

# unburned, superficial, deep-partial, full-thickness
LABEL_COLORS = np.array(
    [[46, 139, 87], [255, 215, 0], [255, 140, 0], [178, 34, 34]], dtype=np.uint8
)


def _stem(path: str | Path) -> Path:
    p = Path(path)
    name = p.name
    for suffix in (HEADER_SUFFIX, RAW_SUFFIX):
        if name.endswith(suffix):
            return p.with_name(name[: -len(suffix)])
    return p


def header_path(path: str | Path) -> Path:
    s = _stem(path)
    return s.with_name(s.name + HEADER_SUFFIX)


def raw_path(path: str | Path) -> Path:
    s = _stem(path)
    return s.with_name(s.name + RAW_SUFFIX)


def _pack_mask(mask: np.ndarray) -> str:
    return base64.b64encode(np.packbits(mask.astype(np.uint8).ravel()).tobytes()).decode("ascii")


def _unpack_mask(text: str, shape: tuple[int, int]) -> np.ndarray:
    bits = np.frombuffer(base64.b64decode(text), dtype=np.uint8)
    return np.unpackbits(bits)[: shape[0] * shape[1]].reshape(shape).astype(bool)


def dump_json(obj: Any, path: str | Path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def load_json(path: str | Path) -> Any:
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing file {p}")
    return json.loads(p.read_text())


def _write(path: str | Path, header: dict, payload: np.ndarray, interleave: str = "BIP") -> None:
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = dict(header, byte_order="little-endian", interleave=interleave)
    dump_json(header, header_path(stem))
    raw_path(stem).write_bytes(payload.tobytes())


def _read(path: str | Path, kind: str, interleave: str = "BIP") -> tuple[dict, bytes]:
    hp = header_path(path)
    rp = raw_path(path)
    if not hp.exists() or not rp.exists():
        raise DataError(f"missing {kind} files for {_stem(path)}")
    header = json.loads(hp.read_text())
    if header.get("kind") != kind:
        raise DataError(f"{hp} holds a {header.get('kind')!r}, expected {kind!r}")
    if header.get("byte_order") != "little-endian" or header.get("interleave") != interleave:
        raise DataError(f"{hp}: unsupported byte order or interleave")
    return header, rp.read_bytes()


def write_cube(path: str | Path, cube: HyperCube, config_hash: str | None = None) -> None:
    header = {
        "kind": "cube",
        "rows": cube.rows,
        "cols": cube.cols,
        "bands": cube.bands,
        "dtype": "float32",
        "wavelengths_nm": [float(w) for w in cube.wavelengths],
        "quantity": cube.quantity,
        "provenance": list(cube.provenance),
        "mask": _pack_mask(cube.mask),
        "config_hash": config_hash,
    }
    _write(path, header, cube.data.astype("<f4"))


def read_cube(path: str | Path) -> tuple[HyperCube, dict]:
    header, payload = _read(path, "cube")
    shape = (header["rows"], header["cols"], header["bands"])
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != np.prod(shape):
        raise DataError(f"{raw_path(path)}: expected {np.prod(shape)} floats, found {data.size}")
    cube = HyperCube(
        data.reshape(shape).astype(np.float64),
        WavelengthGrid(np.asarray(header["wavelengths_nm"])),
        header["quantity"],
        _unpack_mask(header["mask"], shape[:2]),
        tuple(header["provenance"]),
    )
    return cube, header


def write_scalar_map(path: str | Path, smap: ScalarMap, config_hash: str | None = None) -> None:
    header = {
        "kind": "scalar_map",
        "rows": smap.shape[0],
        "cols": smap.shape[1],
        "bands": 1,
        "dtype": "float32",
        "name": smap.name,
        "units": smap.units,
        "provenance": list(smap.provenance),
        "config_hash": config_hash,
    }
    _write(path, header, smap.values.astype("<f4"))


def read_scalar_map(path: str | Path) -> tuple[ScalarMap, dict]:
    header, payload = _read(path, "scalar_map")
    values = np.frombuffer(payload, dtype="<f4").reshape(header["rows"], header["cols"])
    smap = ScalarMap(values.astype(np.float64), None, header["name"], header["units"],
                     tuple(header["provenance"]))
    return smap, header


def write_label_map(path: str | Path, lmap: LabelMap, config_hash: str | None = None) -> None:
    header = {
        "kind": "label_map",
        "rows": lmap.shape[0],
        "cols": lmap.shape[1],
        "bands": 1,
        "dtype": "uint16",
        "k": lmap.k,
        "sentinel": int(LABEL_SENTINEL),
        "class_names": list(lmap.class_names),
        "provenance": list(lmap.provenance),
        "config_hash": config_hash,
    }
    _write(path, header, lmap.labels.astype("<u2"))


def read_label_map(path: str | Path) -> tuple[LabelMap, dict]:
    header, payload = _read(path, "label_map")
    labels = np.frombuffer(payload, dtype="<u2").reshape(header["rows"], header["cols"])
    lmap = LabelMap(labels.copy(), header["k"], None, tuple(header["provenance"]),
                    tuple(header.get("class_names", ())))
    return lmap, header


def render_scalar_png(path: str | Path, smap: ScalarMap,
                      vmin: float | None = None, vmax: float | None = None) -> None:
    """8-bit grayscale render; masked pixels are black."""
    from PIL import Image

    v = smap.values
    finite = v[smap.mask]
    lo = float(np.min(finite)) if vmin is None and finite.size else (vmin or 0.0)
    hi = float(np.max(finite)) if vmax is None and finite.size else (vmax if vmax is not None else 1.0)
    span = hi - lo if hi > lo else 1.0
    scaled = np.zeros(v.shape, dtype=np.uint8)
    scaled[smap.mask] = np.clip(np.round(1 + 254 * (v[smap.mask] - lo) / span), 1, 255)
    Image.fromarray(scaled, mode="L").save(path, format="PNG")


def render_labels_png(path: str | Path, lmap: LabelMap) -> None:
    from PIL import Image

    rgb = np.zeros(lmap.shape + (3,), dtype=np.uint8)
    lab = lmap.labels.astype(np.int64)
    rgb[lmap.mask] = LABEL_COLORS[lab[lmap.mask] % len(LABEL_COLORS)]
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def export_map_csv(path: str | Path, values: np.ndarray, mask: np.ndarray) -> None:
    """Long-format CSV: row, col, value (unmasked pixels only)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for r, c in zip(*np.nonzero(mask)):
            v = values[r, c]
            w.writerow([int(r), int(c), repr(float(v)) if np.issubdtype(values.dtype, np.floating) else int(v)])


def write_columns_csv(path: str | Path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*arrays):
            w.writerow([repr(float(x)) for x in row])


def read_columns_csv(path: str | Path, required: tuple[str, ...] = ()) -> dict[str, np.ndarray]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing CSV {p}")
    with open(p, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in required if c not in fields]
        if missing:
            raise DataError(f"{p}: missing columns {missing}")
        rows = list(reader)
    try:
        return {name: np.array([float(r[name]) for r in rows]) for name in fields}
    except ValueError as exc:
        raise DataError(f"{p}: non-numeric entry ({exc})") from exc


def write_frame_stack(path: str | Path, frames: np.ndarray, exposure_s: float, rate_hz: float,
                      config_hash: str | None = None) -> None:
    """Frame-major float32 speckle stack."""
    n, rows, cols = frames.shape
    header = {
        "kind": "frame_stack",
        "frames": n,
        "rows": rows,
        "cols": cols,
        "dtype": "float32",
        "exposure_s": float(exposure_s),
        "rate_hz": float(rate_hz),
        "config_hash": config_hash,
    }
    _write(path, header, np.asarray(frames).astype("<f4"), interleave="frame-major")


def read_frame_stack(path: str | Path) -> tuple[np.ndarray, dict]:
    header, payload = _read(path, "frame_stack", interleave="frame-major")
    shape = (header["frames"], header["rows"], header["cols"])
    frames = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    return frames, header
