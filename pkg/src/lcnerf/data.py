"""Datasets: CelebAMask-HQ ingestion with label merging, the synthetic
ellipsoid scenes used for desk-scale training, and camera pose sampling.

The synthetic scene is a handful of disjoint colored ellipsoids near the
origin, sized to sit inside the rendered depth shell. It has closed-form
ray intersections, so images, masks, and poses are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .config import CameraConfig
from .rendering import Camera, generate_rays

# CelebAMask-HQ source classes, in file order.
CELEBA_SOURCE_NAMES = [
    "background", "skin", "l_brow", "r_brow", "l_eye", "r_eye", "eye_g",
    "l_ear", "r_ear", "ear_r", "nose", "mouth", "u_lip", "l_lip", "neck",
    "neck_l", "cloth", "hair", "hat",
]


@dataclass
class LabelSchema:
    """Ordered merged region names plus the source-id -> merged-id table."""

    names: list[str]
    source_to_merged: list[int]
    palette: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        if any(not 0 <= m < len(self.names) for m in self.source_to_merged):
            raise ValueError("merge table points outside the merged class list")
        if sorted(set(self.source_to_merged)) != list(range(len(self.names))):
            raise ValueError("merge table must cover every merged class")
        if not self.palette:
            self.palette = default_palette(len(self.names))

    @property
    def regions(self) -> int:
        return len(self.names)

    @classmethod
    def celeba(cls) -> "LabelSchema":
        """Merge the 19 source classes to 13: left/right pairs collapse,
        earrings join ears, necklaces join neck, the two lips merge."""
        names = ["background", "skin", "brows", "eyes", "glasses", "ears",
                 "nose", "mouth", "lips", "hair", "hat", "neck", "cloth"]
        table = {
            "background": "background", "skin": "skin",
            "l_brow": "brows", "r_brow": "brows",
            "l_eye": "eyes", "r_eye": "eyes", "eye_g": "glasses",
            "l_ear": "ears", "r_ear": "ears", "ear_r": "ears",
            "nose": "nose", "mouth": "mouth",
            "u_lip": "lips", "l_lip": "lips",
            "neck": "neck", "neck_l": "neck",
            "cloth": "cloth", "hair": "hair", "hat": "hat",
        }
        mapping = [names.index(table[src]) for src in CELEBA_SOURCE_NAMES]
        return cls(names=names, source_to_merged=mapping)

    @classmethod
    def toy(cls, regions: int) -> "LabelSchema":
        names = ["background"] + [f"region{i}" for i in range(1, regions)]
        return cls(names=names, source_to_merged=list(range(regions)))


def default_palette(regions: int) -> list[tuple[int, int, int]]:
    """Distinct, stable colors; background is black."""
    base = [
        (0, 0, 0), (204, 102, 102), (102, 204, 102), (102, 102, 204),
        (204, 204, 102), (204, 102, 204), (102, 204, 204), (230, 153, 77),
        (153, 77, 230), (77, 230, 153), (230, 77, 77), (128, 128, 128),
        (230, 230, 230), (77, 77, 230), (153, 153, 77),
    ]
    while len(base) < regions:
        base.append(((67 * len(base)) % 256, (129 * len(base)) % 256,
                     (193 * len(base)) % 256))
    return base[:regions]


def merge_labels(raw: Tensor, schema: LabelSchema) -> Tensor:
    """Relabel a source-id mask through the schema's merge table."""
    table = torch.as_tensor(schema.source_to_merged, dtype=torch.long,
                            device=raw.device)
    bad = (raw < 0) | (raw >= len(table))
    if bad.any():
        y, x = [int(v) for v in bad.nonzero()[0]]
        raise ValueError(
            f"label id {int(raw[y, x])} at pixel ({y}, {x}) is outside "
            f"[0, {len(table)})"
        )
    return table[raw.long()]


@dataclass
class SegmentedSample:
    """One dataset record: image in [0,1], integer labels, optional pose."""

    image: Tensor            # (H, W, 3) float32
    labels: Tensor           # (H, W) long, values in [0, regions)
    pose: tuple[float, float] | None = None  # (azimuth, elevation) radians

    def __post_init__(self):
        if self.image.shape[:2] != self.labels.shape:
            raise ValueError(
                f"image {tuple(self.image.shape[:2])} and labels "
                f"{tuple(self.labels.shape)} disagree on size"
            )


def save_mask_png(path, labels: Tensor, palette: list[tuple[int, int, int]]) -> None:
    from PIL import Image

    arr = labels.detach().cpu().numpy().astype(np.uint8)
    img = Image.fromarray(arr, mode="P")
    flat = []
    for rgb in palette:
        flat.extend(rgb)
    img.putpalette(flat)
    img.save(path, format="PNG")


def load_mask_png(path) -> Tensor:
    from PIL import Image

    with Image.open(path) as img:
        if img.mode != "P":
            img = img.convert("P")
        return torch.from_numpy(np.asarray(img, dtype=np.int64))


def mask_png_bytes(labels: Tensor, palette) -> bytes:
    import io

    buf = io.BytesIO()
    save_mask_png(buf, labels, palette)
    return buf.getvalue()


def load_celeba(root, index: int, resolution: int,
                schema: LabelSchema | None = None) -> SegmentedSample:
    """Load `images/{index}.jpg` + `masks/{index}.png`, resize, merge labels."""
    from PIL import Image

    schema = schema or LabelSchema.celeba()
    root = Path(root)
    image_path = root / "images" / f"{index}.jpg"
    mask_path = root / "masks" / f"{index}.png"
    for p in (image_path, mask_path):
        if not p.exists():
            raise FileNotFoundError(f"dataset file missing: {p}")
    with Image.open(image_path) as img:
        img = img.convert("RGB").resize((resolution, resolution), Image.BOX)
        image = torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0)
    with Image.open(mask_path) as m:
        if m.mode != "P":
            m = m.convert("P")
        m = m.resize((resolution, resolution), Image.NEAREST)
        raw = torch.from_numpy(np.asarray(m, dtype=np.int64))
    return SegmentedSample(image=image, labels=merge_labels(raw, schema))


@dataclass
class ToyScene:
    """Disjoint colored ellipsoids; region i+1 is ellipsoid i, 0 is background."""

    centers: Tensor     # (n, 3)
    semi_axes: Tensor   # (n, 3)
    colors: Tensor      # (n, 3) in [0,1]
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def regions(self) -> int:
        return self.centers.shape[0] + 1

    def sdf(self, points: Tensor) -> Tensor:
        """Approximate per-ellipsoid signed distance, (n, P)."""
        scaled = (points[None, :, :] - self.centers[:, None, :]) / self.semi_axes[:, None, :]
        radial = scaled.norm(dim=-1)
        return (radial - 1.0) * self.semi_axes.min(dim=-1).values[:, None]

    def trace(self, camera: Camera) -> SegmentedSample:
        """Exact ray-traced image and label mask from ``camera``."""
        rays = generate_rays(camera, dtype=torch.float64)
        n = self.centers.shape[0]
        best_t = torch.full((rays.origins.shape[0],), math.inf, dtype=torch.float64)
        best_region = torch.zeros(rays.origins.shape[0], dtype=torch.long)
        for i in range(n):
            # Quadratic for the unit sphere in the ellipsoid's scaled frame.
            o = (rays.origins - self.centers[i]) / self.semi_axes[i]
            d = rays.directions / self.semi_axes[i]
            a = (d * d).sum(-1)
            b = 2.0 * (o * d).sum(-1)
            c = (o * o).sum(-1) - 1.0
            disc = b * b - 4.0 * a * c
            hit = disc >= 0
            sqrt_disc = torch.sqrt(disc.clamp_min(0.0))
            t0 = (-b - sqrt_disc) / (2.0 * a)
            t1 = (-b + sqrt_disc) / (2.0 * a)
            t = torch.where(t0 > 1e-6, t0, t1)
            hit = hit & (t > 1e-6) & (t < best_t)
            best_t = torch.where(hit, t, best_t)
            best_region = torch.where(hit, torch.tensor(i + 1), best_region)
        h, w = camera.resolution
        labels = best_region.reshape(h, w)
        palette = torch.cat([torch.tensor([self.background], dtype=torch.float64),
                             self.colors.double()])
        image = palette[best_region].reshape(h, w, 3).float()
        return SegmentedSample(image=image, labels=labels,
                               pose=(camera.azimuth, camera.elevation))


def generate_toy_scene(seed: int, regions: int = 3,
                       camera: CameraConfig | None = None) -> ToyScene:
    """Build a reproducible scene of ``regions - 1`` disjoint ellipsoids.

    Ellipsoids are placed inside the visible shell of the configured
    camera and rejection-sampled until frontal pixel shares are healthy.
    """
    if not 2 <= regions <= 5:
        raise ValueError(f"toy scenes support 2..5 regions, got {regions}")
    camera = camera or CameraConfig()
    rng = torch.Generator().manual_seed(seed)
    n = regions - 1
    # Visible half-extent at the look-at plane.
    extent = min(math.tan(camera.fov / 2.0) * camera.radius,
                 (camera.far - camera.near) / 2.0)
    saturated = torch.tensor([
        [0.85, 0.2, 0.2], [0.2, 0.35, 0.85], [0.95, 0.75, 0.1], [0.15, 0.7, 0.3],
    ])
    for attempt in range(200):
        spread = 0.55 * extent
        centers = (torch.rand((n, 3), generator=rng) * 2 - 1) * spread
        semi_axes = extent * (0.28 + 0.22 * torch.rand((n, 3), generator=rng))
        if n > 1:
            gaps = []
            for i in range(n):
                for j in range(i + 1, n):
                    dist = (centers[i] - centers[j]).norm()
                    gaps.append(dist - semi_axes[i].max() - semi_axes[j].max())
            if min(gaps) < 0.05 * extent:
                continue
        shuffle = torch.randperm(saturated.shape[0], generator=rng)[:n]
        scene = ToyScene(centers=centers, semi_axes=semi_axes,
                         colors=saturated[shuffle])
        shares = class_pixel_shares(scene, camera)
        if all(s >= 0.02 for s in shares[1:]) and shares[0] >= 0.1:
            return scene
    raise RuntimeError(f"no valid toy scene found for seed {seed}")


def class_pixel_shares(scene: ToyScene, camera: CameraConfig,
                       resolution: int = 64) -> list[float]:
    frontal = Camera(azimuth=0.0, elevation=0.0, radius=camera.radius,
                     fov=camera.fov, resolution=(resolution, resolution))
    labels = scene.trace(frontal).labels
    total = labels.numel()
    return [float((labels == k).sum()) / total for k in range(scene.regions)]


def sample_pose(rng: torch.Generator, kind: str,
                camera: CameraConfig | None = None) -> tuple[float, float]:
    """Draw (azimuth, elevation).

    CelebA mode uses a truncated Gaussian about frontal; toy mode is
    uniform over the configured ranges.
    """
    camera = camera or CameraConfig()
    if kind == "celeba" or camera.pose_prior == "gaussian":
        stds = (camera.azimuth_std, camera.elevation_std)
        out = []
        for std in stds:
            value = torch.randn((), generator=rng).item() * std
            while abs(value) > 2.0 * std:
                value = torch.randn((), generator=rng).item() * std
            out.append(value)
        return out[0], out[1]
    if kind == "toy":
        az = (torch.rand((), generator=rng).item() * 2 - 1) * camera.azimuth_range
        el = (torch.rand((), generator=rng).item() * 2 - 1) * camera.elevation_range
        return az, el
    raise ValueError(f"unknown dataset kind {kind!r}")


class ToyDataset:
    """Pre-rendered views of one toy scene; cached as PNGs + pose files."""

    def __init__(self, scene: ToyScene, samples: list[SegmentedSample],
                 schema: LabelSchema):
        self.scene = scene
        self.samples = samples
        self.schema = schema

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> SegmentedSample:
        return self.samples[index]


def build_toy_dataset(seed: int, regions: int, size: int, resolution: int,
                      camera: CameraConfig | None = None,
                      cache_root=None) -> ToyDataset:
    """Render (or load from cache) ``size`` views of the seed's scene."""
    camera = camera or CameraConfig()
    schema = LabelSchema.toy(regions)
    scene = generate_toy_scene(seed, regions, camera)
    cache = Path(cache_root) / f"toy/{seed}" if cache_root else None

    if cache is not None and (cache / f"{size - 1}_pose.txt").exists():
        samples = [_load_toy_sample(cache, i) for i in range(size)]
        return ToyDataset(scene, samples, schema)

    rng = torch.Generator().manual_seed(seed + 1)
    samples = []
    for _ in range(size):
        az, el = sample_pose(rng, "toy", camera)
        cam = Camera(azimuth=az, elevation=el, radius=camera.radius,
                     fov=camera.fov, resolution=(resolution, resolution))
        samples.append(scene.trace(cam))
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        for i, sample in enumerate(samples):
            _save_toy_sample(cache, i, sample, schema)
    return ToyDataset(scene, samples, schema)


def _save_toy_sample(cache: Path, index: int, sample: SegmentedSample,
                     schema: LabelSchema) -> None:
    from PIL import Image

    arr = (sample.image.clamp(0, 1).numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(cache / f"{index}_img.png")
    save_mask_png(cache / f"{index}_mask.png", sample.labels, schema.palette)
    az, el = sample.pose
    (cache / f"{index}_pose.txt").write_text(f"{az!r}\n{el!r}\n")


def _load_toy_sample(cache: Path, index: int) -> SegmentedSample:
    from PIL import Image

    with Image.open(cache / f"{index}_img.png") as img:
        image = torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0)
    labels = load_mask_png(cache / f"{index}_mask.png")
    az, el = [float(line) for line in
              (cache / f"{index}_pose.txt").read_text().splitlines() if line]
    return SegmentedSample(image=image, labels=labels, pose=(az, el))
