"""Versioned binary persistence for grids, scenes, and visibility tables.

All formats are little-endian with a 4-byte ASCII magic and a u32 version.
Floating-point payloads are stored as float32; loading returns float64
arrays carrying exactly the float32 values, so a second save reproduces the
file byte for byte. Writes are atomic (temp file + rename).

* grid checkpoint  — magic ``RFLD``: bounding box, resolution, density and
  color parameter grids (x-fastest order), and the per-image GLO table.
* scene file       — magic ``RSPL``: primitive count, active SH degree,
  then contiguous arrays (positions, log-scales, quaternions w-x-y-z,
  opacity logits, SH coefficients). A JSON sidecar carries provenance.
* visibility file  — magic ``RVIS``: cluster count, scene size, baking
  threshold, then per cluster a center and an LSB-first indicator bitset.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .core import (
    FileFormatError,
    GaussianScene,
    InvalidParameterError,
    PinholeCamera,
)
from .field import GloEmbedding, RadianceFieldGrid
from .visibility import ClusterVisibility

GRID_MAGIC = b"RFLD"
SCENE_MAGIC = b"RSPL"
VIS_MAGIC = b"RVIS"
GRID_VERSION = 1
SCENE_VERSION = 1
VIS_VERSION = 1


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _check_header(data: bytes, magic: bytes, version: int, kind: str) -> None:
    if len(data) < 8 or data[:4] != magic:
        raise FileFormatError(f"not a {kind} file (bad magic)")
    got = struct.unpack_from("<I", data, 4)[0]
    if got != version:
        raise FileFormatError(f"unsupported {kind} version {got}, "
                              f"expected {version}")


# ---------------------------------------------------------------------------
# Grid checkpoint
# ---------------------------------------------------------------------------

def save_grid(grid: RadianceFieldGrid, glos, path) -> None:
    """Persist the field parameters and the per-image GLO table."""
    glos = list(glos)
    parts = [GRID_MAGIC, struct.pack("<I", GRID_VERSION)]
    parts.append(np.concatenate([grid.bbox_min, grid.bbox_max])
                 .astype("<f8").tobytes())
    parts.append(np.array(grid.resolution, dtype="<u4").tobytes())
    parts.append(np.asfortranarray(grid.density_raw.astype("<f4"))
                 .tobytes(order="F"))
    parts.append(np.asfortranarray(grid.color_raw.astype("<f4"))
                 .tobytes(order="F"))
    parts.append(struct.pack("<I", len(glos)))
    for g in glos:
        parts.append(np.concatenate([g.log_gain, g.bias])
                     .astype("<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_grid(path):
    """Returns (grid, list of GLO embeddings)."""
    data = Path(path).read_bytes()
    _check_header(data, GRID_MAGIC, GRID_VERSION, "grid checkpoint")
    off = 8
    bbox = np.frombuffer(data, dtype="<f8", count=6, offset=off); off += 48
    res = np.frombuffer(data, dtype="<u4", count=3, offset=off); off += 12
    nx, ny, nz = (int(r) for r in res)
    n = nx * ny * nz
    density = np.frombuffer(data, dtype="<f4", count=n, offset=off)
    off += 4 * n
    density = density.reshape((nx, ny, nz), order="F").astype(np.float64)
    color = np.frombuffer(data, dtype="<f4", count=3 * n, offset=off)
    off += 12 * n
    color = color.reshape((nx, ny, nz, 3), order="F").astype(np.float64)
    n_glo = struct.unpack_from("<I", data, off)[0]
    off += 4
    glos = []
    for _ in range(n_glo):
        vals = np.frombuffer(data, dtype="<f4", count=6, offset=off)
        off += 24
        glos.append(GloEmbedding(log_gain=vals[:3].astype(np.float64),
                                 bias=vals[3:].astype(np.float64)))
    grid = RadianceFieldGrid(bbox_min=bbox[:3], bbox_max=bbox[3:],
                             density_raw=density, color_raw=color)
    return grid, glos


# ---------------------------------------------------------------------------
# Scene file
# ---------------------------------------------------------------------------

def scene_payload(scene: GaussianScene) -> dict:
    """The contiguous array section shared by the file and viewer export."""
    n = len(scene)
    return {
        "positions": np.ascontiguousarray(scene.positions, dtype="<f4"),
        "log_scales": np.ascontiguousarray(scene.log_scales, dtype="<f4"),
        "quaternions": np.ascontiguousarray(scene.quaternions, dtype="<f4"),
        "opacity_logits": np.ascontiguousarray(scene.opacity_logits,
                                               dtype="<f4"),
        "sh": np.ascontiguousarray(scene.sh.reshape(n, 48), dtype="<f4"),
    }


PAYLOAD_ORDER = ("positions", "log_scales", "quaternions",
                 "opacity_logits", "sh")


def save_scene(scene: GaussianScene, path, sidecar: dict | None = None) -> None:
    """Write the scene file plus a <path>.json provenance sidecar."""
    payload = scene_payload(scene)
    parts = [SCENE_MAGIC, struct.pack("<I", SCENE_VERSION),
             struct.pack("<Q", len(scene)),
             struct.pack("<B", scene.active_sh_degree)]
    parts += [payload[k].tobytes() for k in PAYLOAD_ORDER]
    atomic_write_bytes(path, b"".join(parts))

    lo, hi = scene.bounding_box
    side = dict(bbox_min=lo.tolist(), bbox_max=hi.tolist(),
                count=len(scene), active_sh_degree=scene.active_sh_degree,
                metadata={k: v for k, v in scene.metadata.items()
                          if isinstance(v, (str, int, float, bool))})
    side.update(sidecar or {})
    atomic_write_text(str(path) + ".json", json.dumps(side, indent=1))


def load_scene(path) -> GaussianScene:
    data = Path(path).read_bytes()
    _check_header(data, SCENE_MAGIC, SCENE_VERSION, "scene")
    n = struct.unpack_from("<Q", data, 8)[0]
    degree = struct.unpack_from("<B", data, 16)[0]
    off = 17
    shapes = {"positions": (n, 3), "log_scales": (n, 3),
              "quaternions": (n, 4), "opacity_logits": (n,), "sh": (n, 48)}
    arrays = {}
    for key in PAYLOAD_ORDER:
        count = int(np.prod(shapes[key]))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off)
        off += 4 * count
        arrays[key] = arr.reshape(shapes[key]).astype(np.float64)
    if off != len(data):
        raise FileFormatError("scene file has trailing bytes")
    sidecar_path = Path(str(path) + ".json")
    metadata = {}
    if sidecar_path.exists():
        metadata = json.loads(sidecar_path.read_text()).get("metadata", {})
    return GaussianScene(
        positions=arrays["positions"],
        opacity_logits=arrays["opacity_logits"],
        sh=arrays["sh"].reshape(n, 3, 16),
        log_scales=arrays["log_scales"],
        quaternions=arrays["quaternions"],
        active_sh_degree=int(degree),
        metadata=metadata,
    )


# ---------------------------------------------------------------------------
# Visibility file
# ---------------------------------------------------------------------------

def save_visibility(vis: ClusterVisibility, path) -> None:
    parts = [VIS_MAGIC, struct.pack("<I", VIS_VERSION),
             struct.pack("<I", vis.k),
             struct.pack("<Q", vis.scene_size),
             struct.pack("<f", vis.t_cluster)]
    for j in range(vis.k):
        parts.append(vis.centers[j].astype("<f4").tobytes())
        parts.append(np.packbits(vis.indicators[j],
                                 bitorder="little").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_visibility(path, scene: GaussianScene | None = None
                    ) -> ClusterVisibility:
    """Reload a visibility table, optionally binding it to ``scene``.

    The file does not carry the in-session scene generation tag; passing
    the scene the table belongs to (same primitive count) adopts that
    scene's generation so staleness checks keep working.
    """
    data = Path(path).read_bytes()
    _check_header(data, VIS_MAGIC, VIS_VERSION, "visibility")
    k = struct.unpack_from("<I", data, 8)[0]
    size = struct.unpack_from("<Q", data, 12)[0]
    t_cluster = struct.unpack_from("<f", data, 20)[0]
    off = 24
    nbytes = (size + 7) // 8
    centers = np.zeros((k, 3))
    indicators = np.zeros((k, size), dtype=bool)
    for j in range(k):
        centers[j] = np.frombuffer(data, dtype="<f4", count=3,
                                   offset=off).astype(np.float64)
        off += 12
        bits = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=off)
        off += nbytes
        indicators[j] = np.unpackbits(bits, count=size, bitorder="little")
    if scene is not None:
        if len(scene) != size:
            raise InvalidParameterError(
                "visibility file does not match the scene's primitive count")
        generation = scene.generation
    else:
        generation = -1
    return ClusterVisibility(centers=centers, indicators=indicators,
                             t_cluster=float(t_cluster),
                             scene_generation=generation)


# ---------------------------------------------------------------------------
# Camera-state share strings
# ---------------------------------------------------------------------------
#
# A pose is shared between the CLI and the browser viewer as base64 of 18
# little-endian float64 values: rotation (row-major 9), translation (3),
# fx, fy, cx, cy, width, height.

def encode_camera_state(camera: PinholeCamera) -> str:
    vals = np.concatenate([
        camera.rotation.ravel(), camera.translation,
        [camera.fx, camera.fy, camera.cx, camera.cy,
         float(camera.width), float(camera.height)],
    ]).astype("<f8")
    return base64.b64encode(vals.tobytes()).decode("ascii")


def decode_camera_state(state: str) -> PinholeCamera:
    try:
        raw = base64.b64decode(state, validate=True)
    except Exception:
        raise InvalidParameterError("camera state is not valid base64")
    if len(raw) != 18 * 8:
        raise InvalidParameterError(
            f"camera state must hold 18 float64 values, got {len(raw)} bytes")
    vals = np.frombuffer(raw, dtype="<f8")
    return PinholeCamera(
        width=int(vals[16]), height=int(vals[17]),
        fx=float(vals[12]), fy=float(vals[13]),
        cx=float(vals[14]), cy=float(vals[15]),
        rotation=vals[:9].reshape(3, 3), translation=vals[9:12],
    )


# ---------------------------------------------------------------------------
# Viewer bundle
# ---------------------------------------------------------------------------

MANIFEST_SCHEMA_VERSION = 1


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def export_viewer(scene: GaussianScene, visibility: ClusterVisibility | None,
                  cameras, out_dir) -> dict:
    """Write manifest.json + scene.bin + visibility.bin for the browser viewer.

    scene.bin holds the scene-file payload arrays back to back; the manifest
    records each buffer's byte offset, length, and sha256 so the client can
    slice and verify. visibility.bin is a complete visibility file; the
    manifest records each cluster's bitset offset within it. Returns the
    manifest dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    payload = scene_payload(scene)
    buffers = {}
    blob = b""
    for key in PAYLOAD_ORDER:
        raw = payload[key].tobytes()
        buffers[key] = dict(offset=len(blob), length=len(raw),
                            sha256=_sha256(raw))
        blob += raw
    atomic_write_bytes(out / "scene.bin", blob)

    lo, hi = scene.bounding_box
    manifest = dict(
        schema_version=MANIFEST_SCHEMA_VERSION,
        count=len(scene),
        active_sh_degree=scene.active_sh_degree,
        bbox_min=lo.tolist(), bbox_max=hi.tolist(),
        buffers=buffers,
        scene_bin_sha256=_sha256(blob),
        cameras=[dict(width=c.width, height=c.height, fx=c.fx, fy=c.fy,
                      cx=c.cx, cy=c.cy,
                      rotation=c.rotation.ravel().tolist(),
                      translation=c.translation.tolist())
                 for c in cameras],
    )

    if visibility is not None:
        save_visibility(visibility, out / "visibility.bin")
        vis_bytes = (out / "visibility.bin").read_bytes()
        nbytes = (visibility.scene_size + 7) // 8
        offsets = []
        off = 24
        for _ in range(visibility.k):
            offsets.append(dict(center_offset=off, bitset_offset=off + 12,
                                bitset_length=nbytes))
            off += 12 + nbytes
        manifest["visibility"] = dict(
            available=True, k=visibility.k,
            t_cluster=visibility.t_cluster,
            centers=visibility.centers.tolist(),
            clusters=offsets,
            visibility_bin_sha256=_sha256(vis_bytes),
        )
    else:
        manifest["visibility"] = dict(available=False)

    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=1))
    return manifest
