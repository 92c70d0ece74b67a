"""Geometric containers and file formats.

Point clouds are read from ASCII XYZ, PCD v0.7 and PLY; images are exchanged as
binary PPM (P6). Coordinates are meters in the sensor frame (x right, y down,
z forward). Binary point-cloud encodings are rejected rather than misread.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._font import GLYPH_HEIGHT, GLYPH_WIDTH, glyph_mask
from .exceptions import (
    FormatError,
    NonFiniteError,
    ParseError,
    UnsupportedFormatError,
)

__all__ = [
    "PointCloud",
    "Image",
    "BBox2D",
    "parse_xyz",
    "format_xyz",
    "parse_pcd",
    "format_pcd",
    "parse_ply",
    "format_ply",
    "read_cloud",
    "parse_ppm",
    "write_ppm",
    "read_image",
    "draw_bbox",
    "draw_text",
    "pack_rgb_float",
    "unpack_rgb_float",
]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


class PointCloud:
    """Ordered 3D points with optional per-point 8-bit color.

    Parameters
    ----------
    points : array-like of shape (n, 3)
        Finite coordinates in meters.
    colors : array-like of shape (n, 3), optional
        RGB bytes, one row per point.
    """

    __slots__ = ("points", "colors")

    def __init__(self, points, colors=None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise NonFiniteError("point coordinates must be finite")
        if colors is not None:
            col = np.asarray(colors)
            if col.size == 0:
                col = col.reshape(0, 3)
            if col.shape != pts.shape:
                raise ValueError(f"colors must have shape {pts.shape}, got {col.shape}")
            if col.dtype != np.uint8:
                if np.any((col < 0) | (col > 255)) or np.any(col != np.round(col)):
                    raise ValueError("colors must be integers in 0..255")
            colors = _frozen(col.astype(np.uint8))
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "colors", colors)

    def __setattr__(self, name, value):
        raise AttributeError("PointCloud is immutable")

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        if (self.colors is None) != (other.colors is None):
            return False
        if not np.array_equal(self.points, other.points):
            return False
        return self.colors is None or np.array_equal(self.colors, other.colors)

    __hash__ = None

    def __repr__(self):
        return f"PointCloud(n={len(self)}, colors={'yes' if self.colors is not None else 'no'})"


class Image:
    """RGB8 raster, stored as an (height, width, 3) uint8 array in row-major order."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        px = np.asarray(pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must have shape (h, w, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image width and height must be positive")
        object.__setattr__(self, "pixels", _frozen(px.astype(np.uint8, copy=False)))

    @classmethod
    def blank(cls, width, height, color=(0, 0, 0)):
        px = np.empty((int(height), int(width), 3), dtype=np.uint8)
        px[...] = np.asarray(color, dtype=np.uint8)
        return cls(px)

    def __setattr__(self, name, value):
        raise AttributeError("Image is immutable")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


@dataclass(frozen=True, order=True)
class BBox2D:
    """Pixel rectangle, inclusive min / exclusive max, so width == x_max - x_min."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if isinstance(v, (bool, np.bool_)) or not isinstance(v, (int, np.integer)):
                if isinstance(v, (float, np.floating)) and float(v).is_integer():
                    v = int(v)
                else:
                    raise TypeError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"zero-area box {self.as_list()}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains_pixel(self, x, y) -> bool:
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def inside(self, width, height) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


# -- packed RGB ----------------------------------------------------------------


def pack_rgb_float(colors) -> np.ndarray:
    """Pack (n, 3) uint8 colors into float32 values holding 0x00RRGGBB bits."""
    c = np.asarray(colors, dtype=np.uint32).reshape(-1, 3)
    packed = (c[:, 0] << 16) | (c[:, 1] << 8) | c[:, 2]
    return packed.astype(np.uint32).view(np.float32)


def unpack_rgb_float(values) -> np.ndarray:
    """Inverse of :func:`pack_rgb_float`; also accepts the packed integers."""
    v = np.asarray(values)
    bits = v.astype(np.float32).view(np.uint32) if v.dtype.kind == "f" else v.astype(np.uint32)
    return np.stack([(bits >> 16) & 0xFF, (bits >> 8) & 0xFF, bits & 0xFF], axis=1).astype(np.uint8)


# -- text helpers --------------------------------------------------------------


def _as_text(data) -> str:
    if isinstance(data, str):
        return data
    if isinstance(data, (bytes, bytearray, memoryview)):
        try:
            return bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not UTF-8 text: {exc}") from None
    return _as_text(data.read())


def _parse_floats(fields, lineno):
    try:
        vals = [float(f) for f in fields]
    except ValueError:
        raise ParseError(f"non-numeric field in {' '.join(fields)!r}", lineno) from None
    for v in vals:
        if not math.isfinite(v):
            raise NonFiniteError("non-finite value", lineno)
    return vals


def _fmt(v, precision):
    return f"{v:.{precision}g}"


def _check_color_values(vals, lineno):
    for v in vals:
        if not (0 <= v <= 255) or v != int(v):
            raise ParseError(f"color component {v!r} is not an integer in 0..255", lineno)


# -- XYZ -----------------------------------------------------------------------


def parse_xyz(data) -> PointCloud:
    """Parse whitespace-separated ``x y z [r g b]`` lines; ``#`` starts a comment line."""
    text = _as_text(data)
    rows, colors = [], []
    width = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) not in (3, 6):
            raise ParseError(f"expected 3 or 6 fields, got {len(fields)}", lineno)
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise FormatError(f"mixed 3- and 6-field lines (first data line had {width})", lineno)
        vals = _parse_floats(fields, lineno)
        rows.append(vals[:3])
        if width == 6:
            _check_color_values(vals[3:], lineno)
            colors.append(vals[3:])
    pts = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return PointCloud(pts, np.array(colors, dtype=np.uint8) if width == 6 else None)


def format_xyz(cloud: PointCloud, precision=9) -> bytes:
    lines = []
    for i, p in enumerate(cloud.points):
        s = " ".join(_fmt(v, precision) for v in p)
        if cloud.colors is not None:
            s += " " + " ".join(str(int(c)) for c in cloud.colors[i])
        lines.append(s + "\n")
    return "".join(lines).encode("utf-8")


# -- PCD -----------------------------------------------------------------------

_PCD_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA")


def parse_pcd(data) -> PointCloud:
    """Parse an ASCII PCD v0.7 file. ``rgb``/``rgba`` fields decode to colors."""
    raw = bytes(data) if not isinstance(data, str) else data.encode("utf-8")
    lines = raw.split(b"\n")
    header = {}
    data_start = None
    for lineno, bline in enumerate(lines, 1):
        try:
            line = bline.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ASCII byte in PCD header", lineno) from None
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        key = key.upper()
        if key not in _PCD_KEYS:
            raise ParseError(f"unknown PCD header key {key!r}", lineno)
        header[key] = rest.split()
        if key == "DATA":
            data_start = lineno
            break
    if data_start is None:
        raise ParseError("PCD header has no DATA line")
    encoding = header["DATA"][0].lower() if header["DATA"] else ""
    if encoding != "ascii":
        raise UnsupportedFormatError(f"PCD DATA {encoding or '<missing>'} is not supported (ascii only)")
    fields = header.get("FIELDS")
    if not fields:
        raise FormatError("PCD header lacks FIELDS")
    fields = [f.lower() for f in fields]
    missing = [f for f in ("x", "y", "z") if f not in fields]
    if missing:
        raise FormatError(f"PCD FIELDS lacks {', '.join(missing)}")
    types = [t.upper() for t in header.get("TYPE", ["F"] * len(fields))]
    counts = [int(c) for c in header.get("COUNT", ["1"] * len(fields))]
    if len(types) != len(fields) or len(counts) != len(fields):
        raise FormatError("PCD FIELDS/TYPE/COUNT lengths differ")
    if "POINTS" in header:
        n_points = int(header["POINTS"][0])
    else:
        n_points = int(header.get("WIDTH", ["0"])[0]) * int(header.get("HEIGHT", ["1"])[0])

    offsets = np.cumsum([0] + counts)
    col = {f: int(offsets[i]) for i, f in enumerate(fields)}
    n_cols = int(offsets[-1])
    color_field = next((f for f in ("rgb", "rgba") if f in fields), None)

    pts, packed = [], []
    for lineno in range(data_start + 1, len(lines) + 1):
        line = lines[lineno - 1].decode("ascii", errors="replace").strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != n_cols:
            raise ParseError(f"expected {n_cols} values, got {len(toks)}", lineno)
        try:
            xyz = [float(toks[col[a]]) for a in ("x", "y", "z")]
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in xyz):
            raise NonFiniteError("non-finite coordinate", lineno)
        pts.append(xyz)
        if color_field:
            tok = toks[col[color_field]]
            try:
                if types[fields.index(color_field)] == "F":
                    packed.append(np.float32(float(tok)).view(np.uint32))
                else:
                    packed.append(np.uint32(int(tok)))
            except ValueError:
                raise ParseError(f"bad {color_field} value {tok!r}", lineno) from None
    if len(pts) != n_points:
        raise ParseError(f"header declares POINTS {n_points} but {len(pts)} data rows follow")
    points = np.array(pts, dtype=np.float64).reshape(-1, 3)
    colors = unpack_rgb_float(np.array(packed, dtype=np.uint32)) if color_field else None
    return PointCloud(points, colors)


def format_pcd(cloud: PointCloud, precision=9) -> bytes:
    """Serialize as ASCII PCD v0.7; colors go into a packed-float ``rgb`` field."""
    n = len(cloud)
    has_rgb = cloud.colors is not None
    fields = "x y z rgb" if has_rgb else "x y z"
    k = 4 if has_rgb else 3
    head = [
        "# .PCD v0.7 - Point Cloud Data file format",
        "VERSION 0.7",
        f"FIELDS {fields}",
        "SIZE " + " ".join(["4"] * k),
        "TYPE " + " ".join(["F"] * k),
        "COUNT " + " ".join(["1"] * k),
        f"WIDTH {n}",
        "HEIGHT 1",
        "VIEWPOINT 0 0 0 1 0 0 0",
        f"POINTS {n}",
        "DATA ascii",
    ]
    out = ["\n".join(head) + "\n"]
    rgb = pack_rgb_float(cloud.colors) if has_rgb else None
    for i, p in enumerate(cloud.points):
        s = " ".join(_fmt(v, precision) for v in p)
        if has_rgb:
            s += " " + np.format_float_scientific(rgb[i], unique=True)
        out.append(s + "\n")
    return "".join(out).encode("ascii")


# -- PLY -----------------------------------------------------------------------


def parse_ply(data) -> PointCloud:
    """Parse an ASCII PLY file's ``vertex`` element (x, y, z and optional red/green/blue)."""
    raw = bytes(data) if not isinstance(data, str) else data.encode("utf-8")
    lines = raw.split(b"\n")
    if not lines or lines[0].strip() != b"ply":
        raise FormatError("missing 'ply' magic", 1)
    elements = []  # (name, count, [property names])
    fmt = None
    body_start = None
    for lineno in range(2, len(lines) + 1):
        line = lines[lineno - 1].decode("ascii", errors="replace").strip()
        if not line or line.startswith(("comment", "obj_info")):
            continue
        toks = line.split()
        if toks[0] == "format":
            fmt = toks[1] if len(toks) > 1 else ""
            if fmt != "ascii":
                raise UnsupportedFormatError(f"PLY format {fmt} is not supported (ascii only)")
        elif toks[0] == "element":
            if len(toks) != 3:
                raise ParseError("malformed element line", lineno)
            elements.append((toks[1], int(toks[2]), []))
        elif toks[0] == "property":
            if not elements:
                raise ParseError("property before any element", lineno)
            name = toks[-1]
            elements[-1][2].append(("list:" if toks[1] == "list" else "") + name)
        elif toks[0] == "end_header":
            body_start = lineno + 1
            break
        else:
            raise ParseError(f"unexpected header line {line!r}", lineno)
    if fmt is None:
        raise FormatError("PLY header lacks a format line")
    if body_start is None:
        raise FormatError("PLY header lacks end_header")
    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise FormatError("PLY has no vertex element")
    props = vertex[2]
    missing = [a for a in ("x", "y", "z") if a not in props]
    if missing:
        raise FormatError(f"PLY vertex lacks {', '.join(missing)}")
    if any(p.startswith("list:") for p in props):
        raise UnsupportedFormatError("list properties on vertex are not supported")
    has_rgb = all(c in props for c in ("red", "green", "blue"))

    body = [
        (i, lines[i - 1].decode("ascii", errors="replace").strip())
        for i in range(body_start, len(lines) + 1)
    ]
    body = [(i, s) for i, s in body if s]
    cursor = 0
    for name, count, _ in elements:
        if name == "vertex":
            break
        cursor += count
    rows = body[cursor : cursor + vertex[1]]
    if len(rows) != vertex[1]:
        raise ParseError(f"header declares {vertex[1]} vertices but {len(rows)} rows follow")
    idx = {p: k for k, p in enumerate(props)}
    pts, colors = [], []
    for lineno, line in rows:
        toks = line.split()
        if len(toks) != len(props):
            raise ParseError(f"expected {len(props)} values, got {len(toks)}", lineno)
        vals = _parse_floats(toks, lineno)
        pts.append([vals[idx["x"]], vals[idx["y"]], vals[idx["z"]]])
        if has_rgb:
            c = [vals[idx["red"]], vals[idx["green"]], vals[idx["blue"]]]
            _check_color_values(c, lineno)
            colors.append(c)
    points = np.array(pts, dtype=np.float64).reshape(-1, 3)
    return PointCloud(points, np.array(colors, dtype=np.uint8).reshape(-1, 3) if has_rgb else None)


def format_ply(cloud: PointCloud, precision=9) -> bytes:
    head = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
            "property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        head += ["property uchar red", "property uchar green", "property uchar blue"]
    head.append("end_header")
    out = ["\n".join(head) + "\n"]
    for i, p in enumerate(cloud.points):
        s = " ".join(_fmt(v, precision) for v in p)
        if cloud.colors is not None:
            s += " " + " ".join(str(int(c)) for c in cloud.colors[i])
        out.append(s + "\n")
    return "".join(out).encode("ascii")


_CLOUD_READERS = {".xyz": parse_xyz, ".txt": parse_xyz, ".pcd": parse_pcd, ".ply": parse_ply}


def read_cloud(path) -> PointCloud:
    """Read a point cloud, choosing the parser from the file extension."""
    path = Path(path)
    try:
        reader = _CLOUD_READERS[path.suffix.lower()]
    except KeyError:
        raise UnsupportedFormatError(f"unknown point-cloud extension {path.suffix!r}") from None
    return reader(path.read_bytes())


# -- PPM -----------------------------------------------------------------------


def write_ppm(image: Image) -> bytes:
    """Encode as binary PPM: ``P6\\n{w} {h}\\n255\\n`` followed by raw RGB bytes."""
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(image.pixels).tobytes()


_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def parse_ppm(data) -> Image:
    """Decode a binary (P6) PPM with maxval 255."""
    buf = bytes(data)
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PPM_TOKEN.match(buf, pos)
        if not m:
            raise ParseError("truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P6":
        raise UnsupportedFormatError(f"PPM magic {tokens[0]!r} is not supported (P6 only)")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("non-integer PPM header field") from None
    if maxval != 255:
        raise UnsupportedFormatError(f"PPM maxval {maxval} is not supported (255 only)")
    if w < 1 or h < 1:
        raise ParseError("PPM dimensions must be positive")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise ParseError("missing whitespace after PPM header")
    pos += 1
    need = w * h * 3
    if len(buf) - pos != need:
        raise ParseError(f"PPM payload has {len(buf) - pos} bytes, expected {need}")
    return Image(np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3))


def read_image(path) -> Image:
    return parse_ppm(Path(path).read_bytes())


# -- drawing -------------------------------------------------------------------


def draw_bbox(image: Image, box: BBox2D, color) -> Image:
    """Return a copy of ``image`` with a 1-pixel outline of ``box`` clipped to the image.

    A box entirely outside the image leaves it unchanged.
    """
    w, h = image.width, image.height
    if box.x_max <= 0 or box.y_max <= 0 or box.x_min >= w or box.y_min >= h:
        return image
    px = np.array(image.pixels)
    rgb = np.asarray(color, dtype=np.uint8)
    x0, x1 = max(box.x_min, 0), min(box.x_max, w)
    y0, y1 = max(box.y_min, 0), min(box.y_max, h)
    for y in (box.y_min, box.y_max - 1):
        if 0 <= y < h:
            px[y, x0:x1] = rgb
    for x in (box.x_min, box.x_max - 1):
        if 0 <= x < w:
            px[y0:y1, x] = rgb
    return Image(px)


def draw_text(image: Image, x: int, y: int, text: str, color, scale: int = 1) -> Image:
    """Render ``text`` with a built-in 3x5 bitmap font, top-left at (x, y), clipped."""
    px = np.array(image.pixels)
    rgb = np.asarray(color, dtype=np.uint8)
    h, w = px.shape[:2]
    cx = x
    for ch in text:
        mask = glyph_mask(ch)
        if scale > 1:
            mask = np.kron(mask, np.ones((scale, scale), dtype=bool))
        ys, xs = np.nonzero(mask)
        ys = ys + y
        xs = xs + cx
        keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        px[ys[keep], xs[keep]] = rgb
        cx += (GLYPH_WIDTH + 1) * scale
    return Image(px)


def text_size(text: str, scale: int = 1) -> tuple[int, int]:
    if not text:
        return 0, 0
    return (len(text) * (GLYPH_WIDTH + 1) - 1) * scale, GLYPH_HEIGHT * scale
