"""On-disk interchange: the three little-endian binary rasters plus the
JSON/CSV schemas shared by the command-line tools.

Binary layouts (all multi-byte values little-endian):
  depth       "ODM1" | u32 width | u32 height | float32 row-major, 0.0 invalid
  occupancy   "OCG1" | u32 (1, rows, cols, bins) | float32 (row, col, bin) order
  features    "OFG1" | u32 (channels, rows, cols, stride) | float32 channel-major

JSON stays human-editable; readers validate field by field and raise
SchemaError messages naming the file and field so batch runs fail loudly
at the offending input. Non-finite floats are serialized in Python's
extended JSON form (Infinity/NaN) and accepted back.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import SchemaError
from .geometry import CameraIntrinsics, DepthMap, PoseSE3
from .matching import FeatureGrid, Match
from .occupancy import OccupancyGrid
from .supervision import CoarseMatchSet, PairStats, PixelClass
from .synth import Box, Plane, SceneSpec

_DEPTH_MAGIC = b"ODM1"
_OCC_MAGIC = b"OCG1"
_FEAT_MAGIC = b"OFG1"

PathLike = Union[str, Path]


def _read_header(path: Path, magic: bytes, n_fields: int) -> tuple[int, ...]:
    size = len(magic) + 4 * n_fields
    blob = path.read_bytes()
    if len(blob) < size:
        raise SchemaError(f"{path}: truncated header (need {size} bytes, have {len(blob)})")
    if blob[: len(magic)] != magic:
        raise SchemaError(f"{path}: bad magic {blob[:len(magic)]!r}, expected {magic!r}")
    return struct.unpack_from(f"<{n_fields}I", blob, len(magic)) + (size,)


def _read_payload(path: Path, offset: int, count: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4", offset=offset)
    if data.size != count:
        raise SchemaError(f"{path}: expected {count} float32 values, found {data.size}")
    return data.astype(np.float64)


def write_depth(path: PathLike, depth: DepthMap) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_DEPTH_MAGIC)
        fh.write(struct.pack("<2I", depth.width, depth.height))
        fh.write(depth.data.astype("<f4").tobytes())


def read_depth(path: PathLike) -> DepthMap:
    path = Path(path)
    width, height, offset = _read_header(path, _DEPTH_MAGIC, 2)
    data = _read_payload(path, offset, width * height)
    return DepthMap(data.reshape(height, width))


def write_occupancy(path: PathLike, grid: OccupancyGrid) -> None:
    path = Path(path)
    rows, cols, bins = grid.values.shape
    with path.open("wb") as fh:
        fh.write(_OCC_MAGIC)
        fh.write(struct.pack("<4I", 1, rows, cols, bins))
        fh.write(grid.values.astype("<f4").tobytes())  # C order == (row, col, bin)


def read_occupancy(path: PathLike) -> OccupancyGrid:
    path = Path(path)
    lead, rows, cols, bins, offset = _read_header(path, _OCC_MAGIC, 4)
    if lead != 1:
        raise SchemaError(f"{path}: leading dimension must be 1, got {lead}")
    data = _read_payload(path, offset, rows * cols * bins)
    return OccupancyGrid(data.reshape(rows, cols, bins))


def write_features(path: PathLike, grid: FeatureGrid) -> None:
    path = Path(path)
    channels, rows, cols = grid.values.shape
    with path.open("wb") as fh:
        fh.write(_FEAT_MAGIC)
        fh.write(struct.pack("<4I", channels, rows, cols, grid.stride))
        fh.write(grid.values.astype("<f4").tobytes())


def read_features(path: PathLike) -> FeatureGrid:
    path = Path(path)
    channels, rows, cols, stride, offset = _read_header(path, _FEAT_MAGIC, 4)
    data = _read_payload(path, offset, channels * rows * cols)
    return FeatureGrid(data.reshape(channels, rows, cols), stride=stride)


def _require(obj: dict, field: str, source: str) -> Any:
    if field not in obj:
        raise SchemaError(f"{source}: missing field {field!r}")
    return obj[field]


def _floats(obj: dict, field: str, source: str, count: Optional[int] = None) -> np.ndarray:
    raw = _require(obj, field, source)
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError(f"{source}: field {field!r} is not numeric") from None
    if count is not None and arr.size != count:
        raise SchemaError(f"{source}: field {field!r} needs {count} values, got {arr.size}")
    return arr


def intrinsics_to_json(k: CameraIntrinsics) -> dict:
    return {
        "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
        "width": k.width, "height": k.height,
    }


def intrinsics_from_json(obj: dict, source: str = "intrinsics") -> CameraIntrinsics:
    vals = {f: float(_floats(obj, f, source, 1)) for f in ("fx", "fy", "cx", "cy")}
    dims = {f: int(_require(obj, f, source)) for f in ("width", "height")}
    try:
        return CameraIntrinsics(**vals, **dims)
    except ValueError as exc:
        raise SchemaError(f"{source}: {exc}") from None


def pose_to_json(pose: PoseSE3) -> dict:
    return {"R": pose.R.ravel().tolist(), "t": pose.t.tolist()}


def pose_from_json(obj: dict, source: str = "pose") -> PoseSE3:
    r = _floats(obj, "R", source, 9).reshape(3, 3)
    t = _floats(obj, "t", source, 3)
    try:
        return PoseSE3(r, t)
    except ValueError as exc:
        raise SchemaError(f"{source}: {exc}") from None


def scene_to_json(scene: SceneSpec) -> dict:
    prims = []
    for p in scene.primitives:
        if isinstance(p, Plane):
            prims.append({"type": "plane", "point": list(p.point),
                          "normal": list(p.normal), "texture": p.texture})
        else:
            prims.append({"type": "box", "min": list(p.box_min),
                          "max": list(p.box_max), "texture": p.texture})
    return {"primitives": prims}


def scene_from_json(obj: dict, source: str = "scene") -> SceneSpec:
    prims: list[Union[Plane, Box]] = []
    for i, entry in enumerate(_require(obj, "primitives", source)):
        where = f"{source}: primitives[{i}]"
        kind = _require(entry, "type", where)
        texture = int(entry.get("texture", 0))
        if kind == "plane":
            point = tuple(_floats(entry, "point", where, 3))
            normal = tuple(_floats(entry, "normal", where, 3))
            if not np.any(np.asarray(normal)):
                raise SchemaError(f"{where}: zero normal")
            prims.append(Plane(point, normal, texture))
        elif kind == "box":
            lo = _floats(entry, "min", where, 3)
            hi = _floats(entry, "max", where, 3)
            if np.any(hi <= lo):
                raise SchemaError(f"{where}: max must exceed min on every axis")
            prims.append(Box(tuple(lo), tuple(hi), texture))
        else:
            raise SchemaError(f"{where}: unknown type {kind!r}")
    if not prims:
        raise SchemaError(f"{source}: primitives is empty")
    return SceneSpec(tuple(prims))


def supervision_to_json(matches: CoarseMatchSet, stats: PairStats,
                        config: Optional[dict] = None) -> dict:
    out = {
        "patch_stride": matches.patch_stride,
        "vv": [list(p) for p in matches.vv],
        "vo": [list(p) for p in matches.vo],
        "ov": [list(p) for p in matches.ov],
        "occlusion_ratio": stats.occlusion_ratio,
        "overlap_score": stats.overlap_score,
        "counts": {cls.name.lower(): stats.counts[cls] for cls in PixelClass},
    }
    if config is not None:
        out["config"] = config
    return out


def supervision_from_json(obj: dict, source: str = "supervision") -> CoarseMatchSet:
    stride = int(_require(obj, "patch_stride", source))
    lists = {}
    for name in ("vv", "vo", "ov"):
        lists[name] = [(int(a), int(b)) for a, b in _require(obj, name, source)]
    return CoarseMatchSet(patch_stride=stride, **lists)


def match_to_json(m: Match) -> dict:
    """One matches.jsonl record. `a`/`b` are refined pixel coordinates
    (u, v); patch indices and the chosen alignment branch ride along as
    additive fields."""
    out: dict[str, Any] = {
        "a": [m.point_a.u, m.point_a.v] if m.point_a else None,
        "b": [m.point_b.u, m.point_b.v] if m.point_b else None,
        "conf": m.confidence,
        "label": m.label if m.label is not None else "none",
        "pa": m.patch_a,
        "pb": m.patch_b,
    }
    if m.branch is not None:
        out["branch"] = list(m.branch)
    return out


def match_from_json(obj: dict, source: str = "matches") -> Match:
    from .geometry import PixelPoint

    a = _require(obj, "a", source)
    b = _require(obj, "b", source)
    return Match(
        patch_a=int(obj.get("pa", -1)),
        patch_b=int(obj.get("pb", -1)),
        confidence=float(_require(obj, "conf", source)),
        point_a=PixelPoint(float(a[0]), float(a[1])) if a is not None else None,
        point_b=PixelPoint(float(b[0]), float(b[1])) if b is not None else None,
        branch=tuple(float(x) for x in obj["branch"]) if "branch" in obj else None,
        label=str(_require(obj, "label", source)),
    )


def write_matches(path: PathLike, matches: Iterable[Match]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for m in matches:
            fh.write(dump_json_line(match_to_json(m)) + "\n")


def read_matches(path: PathLike) -> list[Match]:
    path = Path(path)
    out = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: line {i + 1}: {exc}") from None
        out.append(match_from_json(obj, source=f"{path}: line {i + 1}"))
    return out


def write_curve_csv(path: PathLike, rows: Sequence[tuple[int, float]]) -> None:
    """Cumulative curve rows (count, mean_err_deg), one per evaluated pair."""
    path = Path(path)
    lines = ["count,mean_err_deg"]
    lines += [f"{count},{_fmt_float(err)}" for count, err in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_curve_csv(path: PathLike) -> list[tuple[int, float]]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "count,mean_err_deg":
        raise SchemaError(f"{path}: expected header 'count,mean_err_deg'")
    out = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise SchemaError(f"{path}: line {i}: expected 2 columns")
        out.append((int(parts[0]), float(parts[1])))
    return out


def _fmt_float(x: float) -> str:
    return repr(float(x))


def dump_json_line(obj: dict) -> str:
    """Compact single-line JSON with sorted keys (deterministic bytes)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def dump_json(obj: dict) -> str:
    """Pretty multi-line JSON with sorted keys (deterministic bytes)."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path: PathLike, obj: dict) -> None:
    Path(path).write_text(dump_json(obj), encoding="utf-8")


def read_json(path: PathLike) -> dict:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: top-level value must be an object")
    return obj
