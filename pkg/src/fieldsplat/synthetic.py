"""Procedural synthetic datasets for training and evaluation.

Two generators:

* ``blobs`` — a handful of soft colored density blobs baked into a
  volumetric grid; targets come from the grid's own volume renderer. This
  is the bundled scene for the end-to-end pipeline.
* ``two_room`` — a Gaussian-splat ground truth with two spatially
  separated groups of primitives and cameras that each see only one group;
  targets come from the reference rasterizer. Used for visibility
  filtering, where some clusters must not see the other room.

Datasets are deterministic for a fixed seed, carry an optional per-image
exposure perturbation on the training targets (recorded so tests can check
that the field's per-image embeddings absorb it), and serialize to a
directory of cameras.json + 8-bit sRGB PNGs + lossless planar float32
buffers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    GaussianScene,
    ImageBuffer,
    InvalidParameterError,
    PinholeCamera,
    SH_C0,
    SH_COLOR_OFFSET,
    logit,
    look_at_camera,
)
from .field import FieldRenderConfig, RadianceFieldGrid, render_image, softplus_inv
from .render import RasterizeOptions, rasterize


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator parameters; ``kind`` selects the procedural family."""

    kind: str = "blobs"            # "blobs" | "two_room"
    image_size: int = 64
    n_train: int = 12
    n_test: int = 4
    fov_deg: float = 55.0
    n_blobs: int = 4               # blobs kind
    grid_resolution: int = 40      # blobs kind
    density_scale: float = 1.0     # blobs kind: multiplies blob peak density
    n_per_room: int = 48           # two_room kind
    exposure_range: tuple | None = None  # (lo, hi) train-target gains
    n_samples: int = 96            # volume-render quadrature for targets

    def __post_init__(self):
        if self.kind not in ("blobs", "two_room"):
            raise InvalidParameterError(f"unknown generator kind {self.kind!r}")
        if self.n_train < 2 or self.n_test < 1:
            raise InvalidParameterError("need >= 2 train and >= 1 test cameras")
        if self.exposure_range is not None:
            lo, hi = self.exposure_range
            if not 0.0 < lo <= hi:
                raise InvalidParameterError("exposure range must be 0 < lo <= hi")


@dataclass
class SyntheticDataset:
    """Cameras, targets, and the recorded exposure perturbations.

    ``train_images`` already include the perturbation; ``clean_train_images``
    are the unperturbed renders. ``ground_truth`` holds the generator object
    (grid or scene) in memory and is not serialized.
    """

    spec: SyntheticSpec
    seed: int
    train_cameras: list
    test_cameras: list
    train_images: list
    test_images: list
    clean_train_images: list
    exposure_gains: np.ndarray      # (n_train, 3); ones when unperturbed
    exposure_biases: np.ndarray     # (n_train, 3)
    ground_truth: object = None

    @property
    def perturbed(self) -> bool:
        return not (np.all(self.exposure_gains == 1.0)
                    and np.all(self.exposure_biases == 0.0))


def orbit_cameras(center, radius: float, n: int, *, image_size: int,
                  fov_deg: float, elevation: float = 0.35,
                  phase: float = 0.0) -> list:
    """n cameras on a ring around ``center``, all looking at it."""
    center = np.asarray(center, dtype=np.float64)
    cams = []
    for i in range(n):
        ang = phase + 2.0 * np.pi * i / n
        eye = center + radius * np.array([
            np.cos(ang), np.sin(ang), elevation])
        cams.append(look_at_camera(eye, center, width=image_size,
                                   height=image_size, fov_deg=fov_deg))
    return cams


def _quantize(img: np.ndarray) -> ImageBuffer:
    """Store targets at float32 precision so disk round-trips are exact."""
    return ImageBuffer(np.asarray(img, dtype=np.float32).astype(np.float64))


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

_BLOB_PALETTE = np.array([
    [0.90, 0.25, 0.20],
    [0.20, 0.75, 0.30],
    [0.25, 0.35, 0.90],
    [0.90, 0.80, 0.25],
    [0.75, 0.30, 0.85],
    [0.30, 0.85, 0.85],
])


def make_blob_grid(spec: SyntheticSpec, rng: np.random.Generator
                   ) -> RadianceFieldGrid:
    """Soft colored density blobs inside a [-1, 1]^3 box."""
    res = spec.grid_resolution
    grid = RadianceFieldGrid.create((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), res,
                                    init_density=1e-4, init_color=0.5)
    axes = [np.linspace(-1.0, 1.0, r) for r in grid.resolution]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([gx, gy, gz], axis=-1)

    density = np.full(grid.resolution, 1e-4)
    color_num = np.zeros(grid.resolution + (3,))
    weight = np.full(grid.resolution, 1e-12)
    for b in range(spec.n_blobs):
        pos = rng.uniform(-0.45, 0.45, size=3)
        radius = rng.uniform(0.18, 0.30)
        peak = rng.uniform(18.0, 30.0) * spec.density_scale
        col = _BLOB_PALETTE[b % len(_BLOB_PALETTE)]
        d2 = np.sum((coords - pos) ** 2, axis=-1)
        w = peak * np.exp(-0.5 * d2 / radius ** 2)
        density += w
        color_num += w[..., None] * col
        weight += w
    color = np.clip(color_num / weight[..., None], 1e-4, 1.0 - 1e-4)

    grid.density_raw = softplus_inv(density)
    grid.color_raw = np.log(color) - np.log1p(-color)
    return grid


def make_opaque_box_grid(resolution: int = 32,
                         density: float = 400.0) -> RadianceFieldGrid:
    """A solid high-density box occupying the middle of the volume.

    Useful as an analytic surface: rays from outside hit the box faces, so
    lifted points should land on them.
    """
    grid = RadianceFieldGrid.create((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0),
                                    resolution, init_density=1e-6,
                                    init_color=0.5)
    axes = [np.linspace(-1.0, 1.0, r) for r in grid.resolution]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    inside = (np.abs(gx) <= 0.5) & (np.abs(gy) <= 0.5) & (np.abs(gz) <= 0.5)
    raw = grid.density_raw
    raw[inside] = softplus_inv(density)
    grid.density_raw = raw
    return grid


def make_two_room_scene(spec: SyntheticSpec,
                        rng: np.random.Generator) -> GaussianScene:
    """Two groups of opaque-ish splats separated by an opaque dividing wall.

    Rooms sit at x = -6 and x = +6; a grid of large flat splats at x = 0
    blocks the line of sight between them, so cameras in one room never
    record contributions from the other. The first ``n_per_room`` entries
    belong to the left room, the next ``n_per_room`` to the right, and the
    wall splats come last.
    """
    n = spec.n_per_room
    room_offset = 6.0
    positions, colors, log_scales, opacities = [], [], [], []
    for sign in (-1.0, 1.0):
        center = np.array([sign * room_offset, 0.0, 0.0])
        # clip the spread: splats that wander toward a far-side camera's
        # image plane produce badly conditioned projections
        offsets = np.clip(rng.normal(scale=0.8, size=(n, 3)), -1.6, 1.6)
        positions.append(center + offsets)
        colors.append(rng.uniform(0.15, 0.95, size=(n, 3)))
        log_scales.append(np.log(rng.uniform(0.06, 0.15, size=(n, 3))))
        opacities.append(np.full(n, 0.85))

    # wall: two layers of wide flat splats covering the y/z extent the
    # orbit cameras can see through; overlapping sigmas keep the worst-case
    # transmittance through both layers below the visibility bake threshold
    wall_grid = np.linspace(-6.0, 6.0, 5)
    wy, wz = np.meshgrid(wall_grid, wall_grid, indexing="ij")
    panel = np.stack([np.zeros_like(wy).ravel(), wy.ravel(), wz.ravel()],
                     axis=1)
    wall_pts = np.concatenate([panel + np.array([dx, 0.0, 0.0])
                               for dx in (-0.2, 0.2)])
    n_wall = wall_pts.shape[0]
    positions.append(wall_pts)
    colors.append(np.full((n_wall, 3), 0.35))
    log_scales.append(np.tile(np.log([0.05, 3.0, 3.0]), (n_wall, 1)))
    opacities.append(np.full(n_wall, 0.995))

    positions = np.concatenate(positions)
    colors = np.concatenate(colors)
    total = positions.shape[0]

    sh = np.zeros((total, 3, 16))
    sh[:, :, 0] = (colors - SH_COLOR_OFFSET) / SH_C0
    quats = np.zeros((total, 4))
    quats[:, 0] = 1.0
    return GaussianScene(
        positions=positions,
        opacity_logits=logit(np.concatenate(opacities)),
        sh=sh,
        log_scales=np.concatenate(log_scales),
        quaternions=quats,
        active_sh_degree=0,
        metadata={"source": "two_room", "n_per_room": n, "n_wall": n_wall},
    )


def two_room_cameras(spec: SyntheticSpec, n_per_room: int,
                     phase: float = 0.0) -> list:
    """Half the cameras cover the left room, half the right.

    Each room's cameras sit on an arc on the room's outer side, looking
    inward at the room center (and so toward the dividing wall). Keeping
    the far room well in front of every camera avoids the degenerate
    projections that splats near a camera's image plane produce.
    """
    cams = []
    arc = 1.1  # radians to either side of the outward axis
    for sign in (-1.0, 1.0):
        center = np.array([sign * 6.0, 0.0, 0.0])
        for i in range(n_per_room):
            if n_per_room > 1:
                ang = phase - arc + 2.0 * arc * i / (n_per_room - 1)
            else:
                ang = phase
            eye = center + 4.0 * np.array([
                sign * np.cos(ang), np.sin(ang), 0.35])
            cams.append(look_at_camera(eye, center, width=spec.image_size,
                                       height=spec.image_size,
                                       fov_deg=spec.fov_deg))
    return cams


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

def make_synthetic(spec: SyntheticSpec, seed: int = 0) -> SyntheticDataset:
    """Deterministic dataset: disjoint train/test cameras, rendered targets,
    and optional recorded exposure gains on the training targets."""
    rng = np.random.default_rng(seed)

    if spec.kind == "blobs":
        ground_truth = make_blob_grid(spec, rng)
        train_cams = orbit_cameras((0, 0, 0), 2.6, spec.n_train,
                                   image_size=spec.image_size,
                                   fov_deg=spec.fov_deg)
        # test cameras interleave between train azimuths (disjoint poses)
        test_cams = orbit_cameras((0, 0, 0), 2.6, spec.n_test,
                                  image_size=spec.image_size,
                                  fov_deg=spec.fov_deg,
                                  phase=np.pi / spec.n_train,
                                  elevation=0.5)
        cfg = FieldRenderConfig(n_samples=spec.n_samples)

        def render(cam):
            return render_image(ground_truth, cam, config=cfg)
    else:
        ground_truth = make_two_room_scene(spec, rng)
        train_cams = two_room_cameras(spec, spec.n_train // 2)
        test_cams = two_room_cameras(spec, max(1, spec.n_test // 2),
                                     phase=np.pi / max(spec.n_train // 2, 1))
        options = RasterizeOptions()

        def render(cam):
            return rasterize(ground_truth, cam, options).color

    clean_train = [_quantize(render(c).data) for c in train_cams]
    test_images = [_quantize(render(c).data) for c in test_cams]

    gains = np.ones((len(train_cams), 3))
    biases = np.zeros((len(train_cams), 3))
    if spec.exposure_range is not None:
        lo, hi = spec.exposure_range
        # log-uniform scalar gain per image, shared across channels
        g = np.exp(rng.uniform(np.log(lo), np.log(hi), size=len(train_cams)))
        gains = np.repeat(g[:, None], 3, axis=1)
    train_images = [
        _quantize(np.clip(img.data * gains[i] + biases[i], 0.0, 1.0))
        for i, img in enumerate(clean_train)
    ]

    return SyntheticDataset(
        spec=spec, seed=seed,
        train_cameras=train_cams, test_cameras=test_cams,
        train_images=train_images, test_images=test_images,
        clean_train_images=clean_train,
        exposure_gains=gains, exposure_biases=biases,
        ground_truth=ground_truth,
    )


# ---------------------------------------------------------------------------
# Directory serialization
# ---------------------------------------------------------------------------

def _camera_to_json(cam: PinholeCamera) -> dict:
    return dict(width=cam.width, height=cam.height,
                fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
                rotation=cam.rotation.ravel().tolist(),
                translation=cam.translation.tolist())


def _camera_from_json(d: dict) -> PinholeCamera:
    return PinholeCamera(width=d["width"], height=d["height"],
                         fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                         rotation=np.array(d["rotation"]).reshape(3, 3),
                         translation=np.array(d["translation"]))


def _write_image(path_png: Path, path_bin: Path, img: ImageBuffer) -> None:
    Image.fromarray(img.to_srgb_u8()).save(path_png)
    planar = np.ascontiguousarray(
        img.data.transpose(2, 0, 1), dtype="<f4")
    path_bin.write_bytes(planar.tobytes())


def _read_image(path_bin: Path, height: int, width: int) -> ImageBuffer:
    planar = np.frombuffer(path_bin.read_bytes(), dtype="<f4")
    data = planar.reshape(3, height, width).transpose(1, 2, 0)
    return ImageBuffer(data.astype(np.float64))


def save_dataset(dataset: SyntheticDataset, directory) -> None:
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "images_f32").mkdir(parents=True, exist_ok=True)

    names = []
    all_images = list(dataset.train_images) + list(dataset.test_images)
    for i, img in enumerate(all_images):
        name = f"{i:04d}"
        _write_image(root / "images" / f"{name}.png",
                     root / "images_f32" / f"{name}.bin", img)
        names.append(name)

    spec = dataset.spec
    meta = dict(
        spec=dict(kind=spec.kind, image_size=spec.image_size,
                  n_train=spec.n_train, n_test=spec.n_test,
                  fov_deg=spec.fov_deg, n_blobs=spec.n_blobs,
                  grid_resolution=spec.grid_resolution,
                  density_scale=spec.density_scale,
                  n_per_room=spec.n_per_room,
                  exposure_range=list(spec.exposure_range)
                  if spec.exposure_range else None,
                  n_samples=spec.n_samples),
        seed=dataset.seed,
        train=[dict(image=names[i], camera=_camera_to_json(c))
               for i, c in enumerate(dataset.train_cameras)],
        test=[dict(image=names[len(dataset.train_cameras) + i],
                   camera=_camera_to_json(c))
              for i, c in enumerate(dataset.test_cameras)],
        exposure_gains=dataset.exposure_gains.tolist(),
        exposure_biases=dataset.exposure_biases.tolist(),
    )
    (root / "cameras.json").write_text(json.dumps(meta, indent=1))


def load_dataset(directory) -> SyntheticDataset:
    """Reload a saved dataset; targets come from the lossless f32 buffers.

    ``ground_truth`` and the clean (unperturbed) train targets are not
    stored on disk, so both are None after loading.
    """
    root = Path(directory)
    meta = json.loads((root / "cameras.json").read_text())
    s = meta["spec"]
    spec = SyntheticSpec(
        kind=s["kind"], image_size=s["image_size"], n_train=s["n_train"],
        n_test=s["n_test"], fov_deg=s["fov_deg"], n_blobs=s["n_blobs"],
        grid_resolution=s["grid_resolution"],
        density_scale=s.get("density_scale", 1.0),
        n_per_room=s["n_per_room"],
        exposure_range=tuple(s["exposure_range"]) if s["exposure_range"]
        else None, n_samples=s["n_samples"])

    def load_split(entries):
        cams, imgs = [], []
        for e in entries:
            cam = _camera_from_json(e["camera"])
            cams.append(cam)
            imgs.append(_read_image(root / "images_f32" / (e["image"] + ".bin"),
                                    cam.height, cam.width))
        return cams, imgs

    train_cams, train_imgs = load_split(meta["train"])
    test_cams, test_imgs = load_split(meta["test"])
    return SyntheticDataset(
        spec=spec, seed=meta["seed"],
        train_cameras=train_cams, test_cameras=test_cams,
        train_images=train_imgs, test_images=test_imgs,
        clean_train_images=None,
        exposure_gains=np.array(meta["exposure_gains"]),
        exposure_biases=np.array(meta["exposure_biases"]),
        ground_truth=None,
    )
