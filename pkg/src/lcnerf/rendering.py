"""Differentiable volume rendering over the fused field.

An orbit camera (look-at origin, y-up) shoots one ray per pixel through a
thin spherical shell around the subject. Density and color are integrated
with the standard over-compositing quadrature; the per-region blend mask
is integrated with the same weights, so the rendered soft mask channels
sum exactly to the rendered alpha.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .fusion import FusionModule, evaluate_field
from .generators import LatentBank, RegionGeneratorBank


@dataclass
class Camera:
    """Orbit camera: azimuth/elevation in radians around the origin."""

    azimuth: float = 0.0
    elevation: float = 0.0
    radius: float = 1.0
    fov: float = math.radians(12.0)
    resolution: tuple[int, int] = (32, 32)  # (height, width)

    def __post_init__(self):
        if not 0.0 < self.fov < math.pi:
            raise ValueError(f"fov must lie in (0, pi), got {self.fov}")
        h, w = self.resolution
        if h < 1 or w < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    def position(self, dtype=torch.float32) -> Tensor:
        az, el, r = self.azimuth, self.elevation, self.radius
        return torch.tensor(
            [r * math.sin(az) * math.cos(el), r * math.sin(el), r * math.cos(az) * math.cos(el)],
            dtype=dtype,
        )


@dataclass
class RayBatch:
    """Flattened pixel rays plus (optionally) their depth samples."""

    origins: Tensor      # (rays, 3)
    directions: Tensor   # (rays, 3) unit length
    near: float
    far: float
    depths: Tensor | None = None  # (rays, samples) ascending
    deltas: Tensor | None = None  # (rays, samples) nonnegative


def generate_rays(camera: Camera, near: float | None = None, far: float | None = None,
                  dtype=torch.float32) -> RayBatch:
    """One ray per pixel, row-major, through pixel centers."""
    if near is None:
        near = 0.88 * camera.radius
    if far is None:
        far = 1.12 * camera.radius
    if not 0 < near < far:
        raise ValueError(f"need 0 < near < far, got near={near} far={far}")
    h, w = camera.resolution
    position = camera.position(dtype)
    forward = F.normalize(-position, dim=0)
    up = torch.tensor([0.0, 1.0, 0.0], dtype=dtype)
    right = F.normalize(torch.linalg.cross(forward, up), dim=0)
    true_up = torch.linalg.cross(right, forward)

    focal = (h / 2.0) / math.tan(camera.fov / 2.0)
    ii = torch.arange(w, dtype=dtype) + 0.5 - w / 2.0
    jj = torch.arange(h, dtype=dtype) + 0.5 - h / 2.0
    x = (ii / focal).reshape(1, w).expand(h, w)
    y = (-jj / focal).reshape(h, 1).expand(h, w)
    dirs = (x[..., None] * right + y[..., None] * true_up + forward).reshape(-1, 3)
    dirs = F.normalize(dirs, dim=-1)
    origins = position.expand_as(dirs)
    return RayBatch(origins=origins, directions=dirs, near=near, far=far)


def sample_depths(rays: RayBatch, count: int, stratified: bool = False,
                  rng: torch.Generator | None = None) -> RayBatch:
    """Place ``count`` depth samples per ray.

    Deterministic mode puts samples at bin midpoints; stratified mode
    jitters each sample uniformly within its bin.
    """
    if count < 1:
        raise ValueError(f"need at least one sample per ray, got {count}")
    n_rays = rays.origins.shape[0]
    dtype = rays.origins.dtype
    edges = torch.linspace(rays.near, rays.far, count + 1, dtype=dtype)
    lower, upper = edges[:-1], edges[1:]
    if stratified:
        t = torch.rand((n_rays, count), generator=rng, dtype=dtype)
    else:
        t = torch.full((n_rays, count), 0.5, dtype=dtype)
    depths = lower + (upper - lower) * t
    # Successive spacings; the last sample is charged one full bin width.
    bin_width = torch.full((n_rays, 1), (rays.far - rays.near) / count, dtype=dtype)
    deltas = torch.cat([torch.diff(depths, dim=-1), bin_width], dim=-1)
    return dataclasses.replace(rays, depths=depths, deltas=deltas)


@dataclass
class CompositeResult:
    color: Tensor   # (rays, 3)
    mask: Tensor    # (rays, regions)
    alpha: Tensor   # (rays,)
    depth: Tensor | None  # (rays,) expected termination depth


def composite(density: Tensor, color: Tensor, mask: Tensor, deltas: Tensor,
              depths: Tensor | None = None) -> CompositeResult:
    """Integrate density, color and region mask along each ray.

    Args:
        density: (rays, samples) nonnegative.
        color: (rays, samples, 3).
        mask: (rays, samples, regions) rows summing to one.
        deltas: (rays, samples) sample spacings.
        depths: optional (rays, samples) for the expected-depth output.

    The same quadrature weights integrate color and mask, so the mask
    channels of a ray sum to its alpha by construction.
    """
    if (density < 0).any():
        raise ValueError("density must be nonnegative")
    tau = density * deltas
    accumulated = F.pad(torch.cumsum(tau, dim=-1)[..., :-1], (1, 0))
    transmittance = torch.exp(-accumulated)
    weights = transmittance * (1.0 - torch.exp(-tau))
    out_color = (weights[..., None] * color).sum(dim=-2)
    out_mask = (weights[..., None] * mask).sum(dim=-2)
    alpha = weights.sum(dim=-1)
    depth = (weights * depths).sum(dim=-1) if depths is not None else None
    return CompositeResult(color=out_color, mask=out_mask, alpha=alpha, depth=depth)


@dataclass
class RenderResult:
    """Per-pixel outputs of a render; mask channels sum to alpha."""

    image: Tensor       # (H, W, 3) in [0, 1]
    mask_probs: Tensor  # (H, W, regions)
    alpha: Tensor       # (H, W)
    depth: Tensor       # (H, W)

    def image_over(self, background=(1.0, 1.0, 1.0)) -> Tensor:
        bg = torch.as_tensor(background, dtype=self.image.dtype)
        return self.image + (1.0 - self.alpha)[..., None] * bg

    def mask_with_background(self) -> Tensor:
        """Blend weights with the missed-ray mass folded into region 0."""
        probs = self.mask_probs.clone()
        probs[..., 0] = probs[..., 0] + (1.0 - self.alpha)
        return probs

    def labels(self) -> Tensor:
        return self.mask_with_background().argmax(dim=-1)


def render(generators: RegionGeneratorBank, fusion: FusionModule, latents: LatentBank,
           camera: Camera, samples_per_ray: int = 18, stratified: bool = False,
           rng: torch.Generator | None = None, near: float | None = None,
           far: float | None = None) -> RenderResult:
    """Render the fused field from ``camera``. Fully differentiable."""
    dtype = next(generators.parameters()).dtype
    rays = generate_rays(camera, near=near, far=far, dtype=dtype)
    rays = sample_depths(rays, samples_per_ray, stratified=stratified, rng=rng)
    h, w = camera.resolution
    n_rays = h * w

    points = rays.origins[:, None, :] + rays.depths[..., None] * rays.directions[:, None, :]
    flat_points = points.reshape(-1, 3)
    flat_dirs = rays.directions[:, None, :].expand(n_rays, samples_per_ray, 3).reshape(-1, 3)
    sample = evaluate_field(generators, fusion, latents, flat_points, flat_dirs)

    density = sample.density.reshape(n_rays, samples_per_ray)
    color = sample.color.reshape(n_rays, samples_per_ray, 3)
    mask = sample.mask.reshape(n_rays, samples_per_ray, -1)
    out = composite(density, color, mask, rays.deltas, rays.depths)
    return RenderResult(
        image=out.color.reshape(h, w, 3),
        mask_probs=out.mask.reshape(h, w, -1),
        alpha=out.alpha.reshape(h, w),
        depth=out.depth.reshape(h, w),
    )


def image_to_uint8(image: Tensor) -> np.ndarray:
    arr = image.detach().clamp(0.0, 1.0).mul(255.0).round().to(torch.uint8)
    return arr.cpu().numpy()


def save_image_png(path, image: Tensor) -> None:
    from PIL import Image

    Image.fromarray(image_to_uint8(image), mode="RGB").save(path, format="PNG")
