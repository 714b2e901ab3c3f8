"""Readers and writers: OFF / PLY meshes, label sidecars, label tables, volumes.

Parse failures raise :class:`~surfparc.errors.FormatError` subclasses that
carry the byte offset where the problem was found.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import (FormatError, IndexRangeError, TruncatedFileError,
                     UnknownMagicError, UnsupportedFormatError, ValidationError)
from .mesh import TriangleMesh
from .volume import LabelEntry, LabelTable, LabelVolume

GZIP_MAGIC = b"\x1f\x8b"


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


class _Lines:
    """Line reader over raw bytes that remembers byte offsets."""

    def __init__(self, buf: bytes, start: int = 0, skip_comments: str | None = None):
        self.buf = buf
        self.pos = start
        self.skip_comments = skip_comments

    def next(self, what: str) -> tuple[str, int]:
        while True:
            if self.pos >= len(self.buf):
                raise TruncatedFileError(f"unexpected end of file while reading {what}", offset=self.pos)
            end = self.buf.find(b"\n", self.pos)
            if end < 0:
                end = len(self.buf)
            start = self.pos
            line = self.buf[start:end].decode("ascii", errors="replace").strip()
            self.pos = end + 1
            if not line:
                continue
            if self.skip_comments and line.startswith(self.skip_comments):
                continue
            return line, start


# -- OFF --------------------------------------------------------------------

def read_off(path) -> TriangleMesh:
    buf = _read_bytes(path)
    lines = _Lines(buf, skip_comments="#")
    if not buf.startswith(b"OFF"):
        raise UnknownMagicError(f"not an OFF file: starts with {buf[:4]!r}", offset=0)
    header, off = lines.next("header")
    rest = header[3:].split()
    if header[:3] != "OFF" or (rest and not rest[0].lstrip("-").isdigit()):
        raise UnknownMagicError(f"unsupported OFF variant {header.split()[0]!r}", offset=off)
    if not rest:
        rest, off = lines.next("element counts")
        rest = rest.split()
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except (IndexError, ValueError):
        raise FormatError("malformed OFF element counts", offset=off) from None
    if nv < 0 or nf < 0:
        raise FormatError("negative OFF element counts", offset=off)
    if nv + nf > len(buf):
        # every element needs at least one byte
        raise TruncatedFileError("OFF element counts exceed the file size", offset=off)
    verts = np.empty((nv, 3))
    for i in range(nv):
        line, off = lines.next(f"vertex {i}")
        parts = line.split()
        try:
            verts[i] = [float(x) for x in parts[:3]]
        except ValueError:
            raise FormatError(f"malformed vertex {i}", offset=off) from None
        if len(parts) < 3:
            raise FormatError(f"vertex {i} has fewer than 3 coordinates", offset=off)
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        line, off = lines.next(f"face {i}")
        try:
            parts = [int(x) for x in line.split()]
        except ValueError:
            raise FormatError(f"malformed face {i}", offset=off) from None
        if not parts or parts[0] != 3 or len(parts) < 4:
            raise FormatError(f"face {i} is not a triangle", offset=off)
        idx = parts[1:4]
        if min(idx) < 0 or max(idx) >= nv:
            raise IndexRangeError(f"face {i} references a vertex outside [0, {nv})", offset=off)
        faces[i] = idx
    return _build_mesh(verts, faces)


def write_off(mesh: TriangleMesh, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.faces.tolist():
            fh.write(f"3 {a} {b} {c}\n")


def _build_mesh(verts, faces) -> TriangleMesh:
    try:
        return TriangleMesh(verts, faces)
    except ValidationError as exc:
        raise FormatError(f"invalid mesh content: {exc.message}") from exc


# -- PLY --------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _ply_header(buf: bytes):
    if not buf.startswith(b"ply"):
        raise UnknownMagicError(f"not a PLY file: starts with {buf[:4]!r}", offset=0)
    lines = _Lines(buf)
    magic, _ = lines.next("magic")
    if magic != "ply":
        raise UnknownMagicError("bad PLY magic line", offset=0)
    fmt = None
    elements = []  # [name, count, props, offset]
    while True:
        line, off = lines.next("PLY header")
        words = line.split()
        key = words[0]
        if key == "format":
            if len(words) < 3 or words[2] != "1.0":
                raise UnsupportedFormatError(f"unsupported PLY format line {line!r}", offset=off)
            fmt = words[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise UnsupportedFormatError(f"unsupported PLY encoding {fmt!r}", offset=off)
        elif key in ("comment", "obj_info"):
            continue
        elif key == "element":
            try:
                elements.append([words[1], int(words[2]), [], off])
            except (IndexError, ValueError):
                raise FormatError(f"malformed element line {line!r}", offset=off) from None
            if not 0 <= elements[-1][1] <= len(buf):
                raise FormatError(f"implausible element count in {line!r}", offset=off)
        elif key == "property":
            if not elements:
                raise FormatError("property before any element", offset=off)
            try:
                if words[1] == "list":
                    prop = (words[4], "list", _PLY_TYPES[words[2]], _PLY_TYPES[words[3]])
                else:
                    prop = (words[2], _PLY_TYPES[words[1]])
            except (IndexError, KeyError):
                raise FormatError(f"malformed property line {line!r}", offset=off) from None
            elements[-1][2].append(prop)
        elif key == "end_header":
            break
        else:
            raise FormatError(f"unexpected PLY header line {line!r}", offset=off)
    if fmt is None:
        raise FormatError("PLY header lacks a format line", offset=0)
    return fmt, elements, lines.pos


def read_ply(path) -> TriangleMesh:
    buf = _read_bytes(path)
    fmt, elements, body = _ply_header(buf)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise FormatError("PLY file has no vertex element", offset=0)
    if fmt == "ascii":
        return _read_ply_ascii(buf, elements, body)
    return _read_ply_binary(buf, elements, body)


def _vertex_xyz(props, offset):
    names = [p[0] for p in props]
    for axis in "xyz":
        if axis not in names:
            raise FormatError(f"vertex element lacks property {axis!r}", offset=offset)
    return [names.index(a) for a in "xyz"]


def _face_list_index(props, offset):
    for i, p in enumerate(props):
        if p[1] == "list" and p[0] in ("vertex_indices", "vertex_index"):
            return i
    raise FormatError("face element lacks a vertex_indices list", offset=offset)


def _read_ply_ascii(buf, elements, pos):
    lines = _Lines(buf, pos)
    verts = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    nv = None
    for name, count, props, hoff in elements:
        if name == "vertex":
            cols = _vertex_xyz(props, hoff)
            if any(p[1] == "list" for p in props):
                raise UnsupportedFormatError("list properties on vertices are not supported", offset=hoff)
            verts = np.empty((count, 3))
            for i in range(count):
                line, off = lines.next(f"vertex {i}")
                parts = line.split()
                if len(parts) < len(props):
                    raise FormatError(f"vertex {i} has too few values", offset=off)
                try:
                    verts[i] = [float(parts[c]) for c in cols]
                except ValueError:
                    raise FormatError(f"malformed vertex {i}", offset=off) from None
            nv = count
        elif name == "face":
            li = _face_list_index(props, hoff)
            faces = np.empty((count, 3), dtype=np.int64)
            for i in range(count):
                line, off = lines.next(f"face {i}")
                try:
                    vals = [int(float(x)) for x in line.split()]
                except ValueError:
                    raise FormatError(f"malformed face {i}", offset=off) from None
                # walk the properties to find the list
                k = 0
                for j, p in enumerate(props):
                    if j == li:
                        break
                    k += 1 + vals[k] if p[1] == "list" else 1
                if k >= len(vals) or vals[k] != 3 or len(vals) < k + 4:
                    raise FormatError(f"face {i} is not a triangle", offset=off)
                idx = vals[k + 1:k + 4]
                if nv is None or min(idx) < 0 or max(idx) >= nv:
                    raise IndexRangeError(f"face {i} references a vertex out of range", offset=off)
                faces[i] = idx
        else:
            for i in range(count):
                lines.next(f"{name} {i}")
    return _build_mesh(verts, faces)


def _read_ply_binary(buf, elements, pos):
    verts = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    nv = None
    for name, count, props, hoff in elements:
        has_list = any(p[1] == "list" for p in props)
        if not has_list:
            dtype = np.dtype([(p[0], "<" + p[1]) for p in props])
            need = dtype.itemsize * count
            if pos + need > len(buf):
                raise TruncatedFileError(f"{name} data truncated", offset=len(buf))
            rec = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
            pos += need
            if name == "vertex":
                _vertex_xyz(props, hoff)
                verts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
                nv = count
            continue
        if name == "vertex":
            raise UnsupportedFormatError("list properties on vertices are not supported", offset=hoff)
        if name != "face" or len(props) != 1:
            raise UnsupportedFormatError(f"unsupported list layout in element {name!r}", offset=hoff)
        _face_list_index(props, hoff)
        _, _, count_t, index_t = props[0]
        # fast path: every face is a triangle
        dtype = np.dtype([("n", "<" + count_t), ("i", "<" + index_t, (3,))])
        need = dtype.itemsize * count
        if pos + need > len(buf):
            raise TruncatedFileError("face data truncated", offset=len(buf))
        rec = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
        bad = np.flatnonzero(rec["n"] != 3)
        if len(bad):
            raise FormatError(f"face {bad[0]} is not a triangle", offset=pos + bad[0] * dtype.itemsize)
        idx = rec["i"].astype(np.int64)
        if count and (nv is None or idx.min() < 0 or idx.max() >= nv):
            first = np.flatnonzero(np.any((idx < 0) | (idx >= (nv or 0)), axis=1))[0]
            raise IndexRangeError(f"face {first} references a vertex out of range",
                                  offset=pos + first * dtype.itemsize)
        faces = idx
        pos += need
    return _build_mesh(verts, faces)


def write_ply(mesh: TriangleMesh, path, binary: bool = True) -> None:
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    v32 = mesh.vertices.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(v32.tobytes())
            rec = np.empty(mesh.n_faces, dtype=[("n", "u1"), ("i", "<i4", (3,))])
            rec["n"] = 3
            rec["i"] = mesh.faces
            fh.write(rec.tobytes())
        else:
            out = io.StringIO()
            for x, y, z in v32.tolist():
                # repr of the float32 value widened to float64 round-trips exactly
                out.write(f"{x!r} {y!r} {z!r}\n")
            for a, b, c in mesh.faces.tolist():
                out.write(f"3 {a} {b} {c}\n")
            fh.write(out.getvalue().encode("ascii"))


def read_mesh(path) -> TriangleMesh:
    """Read OFF or PLY, chosen by magic bytes."""
    buf = _read_bytes(path)
    if buf.startswith(GZIP_MAGIC):
        raise UnsupportedFormatError("compressed input unsupported", offset=0)
    if buf.startswith(b"ply"):
        return read_ply(path)
    if buf.startswith(b"OFF"):
        return read_off(path)
    raise UnknownMagicError(f"unknown mesh format: starts with {buf[:4]!r}", offset=0)


def write_mesh(mesh: TriangleMesh, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        write_off(mesh, path)
    elif suffix == ".ply":
        write_ply(mesh, path)
    else:
        raise UnsupportedFormatError(f"cannot infer mesh format from {suffix!r}")


# -- label sidecars ---------------------------------------------------------------

def read_labels(path, expected_len: int | None = None) -> np.ndarray:
    """One non-negative integer per line; line ``i`` is vertex ``i``'s label."""
    buf = _read_bytes(path)
    values = []
    pos = 0
    lineno = 0
    for raw in buf.split(b"\n"):
        lineno += 1
        text = raw.strip()
        start = pos
        pos += len(raw) + 1
        if not text:
            continue
        try:
            v = int(text)
        except ValueError:
            raise FormatError(f"line {lineno}: not an integer: {text[:20]!r}",
                              offset=start, line=lineno) from None
        if v < 0:
            raise FormatError(f"line {lineno}: negative label {v}", offset=start, line=lineno)
        values.append(v)
    if expected_len is not None and len(values) != expected_len:
        raise FormatError(
            f"label count mismatch: file has {len(values)}, mesh has {expected_len}",
            offset=len(buf), line=lineno, found=len(values), expected=expected_len,
        )
    return np.array(values, dtype=np.int64)


def write_labels(labels, path) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    with open(path, "w", newline="\n") as fh:
        fh.write("".join(f"{v}\n" for v in labels.tolist()))


# -- label table -----------------------------------------------------------------

TABLE_HEADER = ["id", "name", "r", "g", "b", "is_cortical"]
_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}


def read_label_table(path) -> LabelTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != TABLE_HEADER:
        raise FormatError(f"label table header must be {','.join(TABLE_HEADER)}", line=1)
    entries = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(TABLE_HEADER):
            raise FormatError(f"line {lineno}: expected {len(TABLE_HEADER)} fields", line=lineno)
        try:
            lab = int(row[0])
            rgb = tuple(int(c) for c in row[2:5])
        except ValueError:
            raise FormatError(f"line {lineno}: malformed numeric field", line=lineno) from None
        flag = row[5].strip().lower()
        if flag not in _TRUE | _FALSE:
            raise FormatError(f"line {lineno}: is_cortical must be a boolean", line=lineno)
        if lab in entries:
            raise FormatError(f"line {lineno}: duplicate label ID {lab}", line=lineno)
        if lab < 0 or not all(0 <= c <= 255 for c in rgb):
            raise FormatError(f"line {lineno}: ID or colour out of range", line=lineno)
        entries[lab] = LabelEntry(row[1], rgb, flag in _TRUE)
    try:
        return LabelTable(entries)
    except ValidationError as exc:
        raise FormatError(exc.message) from exc


def write_label_table(table: LabelTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for lab, e in table.entries.items():
            w.writerow([lab, e.name, *e.rgb, int(e.is_cortical)])


# -- volumes ---------------------------------------------------------------------

NIFTI_HEADER_SIZE = 348
NIFTI_DTYPES = {2: "u1", 4: "<i2", 8: "<i4", 512: "<u2"}
_NIFTI_CODES = {np.dtype(v).newbyteorder("<"): k for k, v in NIFTI_DTYPES.items()}
NATIVE_DTYPES = {"uint8": "u1", "int16": "<i2", "uint16": "<u2", "int32": "<i4"}


def read_nifti(path) -> LabelVolume:
    """Uncompressed single-file little-endian NIfTI-1 with an sform affine."""
    buf = _read_bytes(path)
    if buf.startswith(GZIP_MAGIC):
        raise UnsupportedFormatError("compressed input unsupported", offset=0)
    if len(buf) < NIFTI_HEADER_SIZE:
        raise TruncatedFileError("file shorter than a NIfTI-1 header", offset=len(buf))
    (sizeof_hdr,) = struct.unpack_from("<i", buf, 0)
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        if struct.unpack_from(">i", buf, 0)[0] == NIFTI_HEADER_SIZE:
            raise UnsupportedFormatError("big-endian NIfTI unsupported", offset=0)
        raise UnknownMagicError(f"sizeof_hdr is {sizeof_hdr}, expected 348", offset=0)
    magic = buf[344:348]
    if magic != b"n+1\x00":
        if magic == b"ni1\x00":
            raise UnsupportedFormatError("two-file NIfTI (.hdr/.img) unsupported", offset=344)
        raise UnknownMagicError(f"bad NIfTI magic {magic!r}", offset=344)
    dim = struct.unpack_from("<8h", buf, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"dim[0] = {ndim} out of range", offset=40)
    shape = list(dim[1:1 + ndim]) + [1] * (3 - ndim)
    if any(d < 1 for d in shape) or any(d != 1 for d in shape[3:]):
        raise FormatError(f"only 3D volumes are supported, got dims {shape}", offset=40)
    shape = shape[:3]
    (datatype,) = struct.unpack_from("<h", buf, 70)
    if datatype not in NIFTI_DTYPES:
        raise UnsupportedFormatError(f"unsupported NIfTI datatype code {datatype}", offset=70,
                                     datatype=datatype)
    (vox_offset,) = struct.unpack_from("<f", buf, 108)
    slope, inter = struct.unpack_from("<2f", buf, 112)
    if slope not in (0.0, 1.0) or inter != 0.0:
        raise UnsupportedFormatError("scaled label data (scl_slope/scl_inter) unsupported", offset=112)
    (sform_code,) = struct.unpack_from("<h", buf, 254)
    if sform_code <= 0:
        raise UnsupportedFormatError("qform-only volumes unsupported (sform_code = 0)", offset=254)
    srow = np.array(struct.unpack_from("<12f", buf, 280), dtype=np.float64).reshape(3, 4)
    if not np.all(np.isfinite(srow)):
        raise FormatError("non-finite sform affine", offset=280)
    affine = np.eye(4)
    affine[:3] = srow
    dtype = np.dtype(NIFTI_DTYPES[datatype])
    if not np.isfinite(vox_offset) or vox_offset < NIFTI_HEADER_SIZE:
        raise FormatError(f"vox_offset {vox_offset} inside the header", offset=108)
    start = int(vox_offset)
    count = int(np.prod(shape))
    if start < NIFTI_HEADER_SIZE:
        raise FormatError(f"vox_offset {vox_offset} inside the header", offset=108)
    if start + count * dtype.itemsize > len(buf):
        raise TruncatedFileError("voxel data truncated", offset=len(buf))
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=start)
    return _volume(data.reshape(shape, order="F"), affine)


def write_nifti(volume: LabelVolume, path) -> None:
    data = volume.data
    dtype = _smallest_dtype(data)
    code = _NIFTI_CODES[np.dtype(dtype)]
    hdr = bytearray(352)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    dims = volume.dims
    struct.pack_into("<8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, np.dtype(dtype).itemsize * 8)
    vs = np.linalg.norm(volume.affine[:3, :3], axis=0)
    struct.pack_into("<8f", hdr, 76, 1.0, *vs, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    struct.pack_into("<B", hdr, 123, 2)  # xyzt_units: mm
    struct.pack_into("<2h", hdr, 252, 0, 2)  # qform_code, sform_code (aligned)
    struct.pack_into("<12f", hdr, 280, *volume.affine[:3].ravel())
    hdr[344:348] = b"n+1\x00"
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(np.asarray(data, dtype=dtype).ravel(order="F").tobytes())


def _smallest_dtype(data):
    hi = int(data.max(initial=0))
    if hi <= 255:
        return "u1"
    if hi <= 32767:
        return "<i2"
    if hi <= 65535:
        return "<u2"
    return "<i4"


def _volume(data, affine) -> LabelVolume:
    data = np.asarray(data)
    if data.size and data.min() < 0:
        raise FormatError("negative labels in volume")
    try:
        return LabelVolume(data.astype(np.int32) if data.dtype.itemsize < 4 or data.dtype.kind == "u" else data,
                           affine)
    except ValidationError as exc:
        raise FormatError(f"invalid volume: {exc.message}") from exc


def read_native_volume(path) -> LabelVolume:
    """JSON header ``{dims, affine, dtype}`` next to a ``.raw`` little-endian file."""
    path = Path(path)
    try:
        header = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"volume header is not valid JSON: {exc.msg}", offset=exc.pos) from None
    try:
        dims = [int(d) for d in header["dims"]]
        affine = np.array(header["affine"], dtype=np.float64)
        dtype_name = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"volume header missing or malformed field: {exc}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise FormatError(f"dims must be three positive integers, got {dims}")
    if affine.size != 16:
        raise FormatError("affine must have 16 numbers (row-major 4x4)")
    if dtype_name not in NATIVE_DTYPES:
        raise UnsupportedFormatError(f"unsupported volume dtype {dtype_name!r}")
    raw_path = path.parent / header.get("data_file", path.with_suffix(".raw").name)
    buf = _read_bytes(raw_path)
    dtype = np.dtype(NATIVE_DTYPES[dtype_name])
    count = int(np.prod(dims))
    if len(buf) < count * dtype.itemsize:
        raise TruncatedFileError("raw voxel data truncated", offset=len(buf))
    data = np.frombuffer(buf, dtype=dtype, count=count).reshape(dims, order="F")
    return _volume(data, affine.reshape(4, 4))


def write_native_volume(volume: LabelVolume, path, dtype: str | None = None) -> None:
    path = Path(path)
    if dtype is None:
        dtype = {v: k for k, v in NATIVE_DTYPES.items()}[_smallest_dtype(volume.data)]
    raw = path.with_suffix(".raw")
    header = {
        "dims": list(volume.dims),
        "affine": [float(x) for x in volume.affine.ravel()],
        "dtype": dtype,
        "data_file": raw.name,
    }
    path.write_text(json.dumps(header, indent=2) + "\n")
    raw.write_bytes(np.asarray(volume.data, dtype=NATIVE_DTYPES[dtype]).ravel(order="F").tobytes())


def read_volume(path) -> LabelVolume:
    path = Path(path)
    head = _read_bytes(path)[:4]
    if head.startswith(GZIP_MAGIC):
        raise UnsupportedFormatError("compressed input unsupported", offset=0)
    if path.suffix.lower() == ".json" or head[:1] == b"{":
        return read_native_volume(path)
    return read_nifti(path)


def write_volume(volume: LabelVolume, path) -> None:
    if Path(path).suffix.lower() == ".json":
        write_native_volume(volume, path)
    else:
        write_nifti(volume, path)
