"""Per-region sine generators and the shared noise-to-style mapping networks.

Each region owns a geometry network (point -> confidence + geometry features)
and a texture network (geometry features + view direction -> texture features).
Both are stacks of affine layers with sine activations whose frequency and
phase are modulated by a per-region style vector, so swapping one region's
style rows can never touch another region's field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import ModelConfig


def validate_finite(name: str, value: Tensor) -> None:
    if not torch.isfinite(value).all():
        raise ValueError(f"{name} contains non-finite entries")


@dataclass
class LatentBank:
    """Per-region style rows, the unit of control for generation and editing.

    ``w_g`` drives geometry (shape, region membership), ``w_t`` drives
    texture. Both are (regions, style_dim).
    """

    w_g: Tensor
    w_t: Tensor

    def __post_init__(self):
        if self.w_g.dim() != 2 or self.w_g.shape != self.w_t.shape:
            raise ValueError(
                f"latent rows must share a (regions, style_dim) shape, "
                f"got {tuple(self.w_g.shape)} and {tuple(self.w_t.shape)}"
            )
        validate_finite("w_g", self.w_g)
        validate_finite("w_t", self.w_t)

    @property
    def regions(self) -> int:
        return self.w_g.shape[0]

    @property
    def style_dim(self) -> int:
        return self.w_g.shape[1]

    def clone(self) -> "LatentBank":
        return LatentBank(self.w_g.clone(), self.w_t.clone())

    def detach(self) -> "LatentBank":
        return LatentBank(self.w_g.detach(), self.w_t.detach())

    def to(self, *args, **kwargs) -> "LatentBank":
        return LatentBank(self.w_g.to(*args, **kwargs), self.w_t.to(*args, **kwargs))

    def with_rows(self, region_ids, rows: Tensor, which: str) -> "LatentBank":
        """Return a copy with the given geometry and/or texture rows replaced."""
        if which not in ("geometry", "texture", "both"):
            raise ValueError(f"unknown row selector {which!r}")
        w_g, w_t = self.w_g.clone(), self.w_t.clone()
        ids = list(region_ids)
        for r in ids:
            if not 0 <= r < self.regions:
                raise IndexError(f"region {r} out of range for {self.regions} regions")
        index = torch.as_tensor(ids, dtype=torch.long, device=w_g.device)
        if which in ("geometry", "both"):
            w_g[index] = rows[0] if which == "both" else rows
        if which in ("texture", "both"):
            w_t[index] = rows[1] if which == "both" else rows
        return LatentBank(w_g, w_t)


class ModulatedSineLayer(nn.Module):
    """Affine layer with sine activation, frequency/phase shifted by a style vector."""

    def __init__(self, in_dim: int, out_dim: int, style_dim: int,
                 omega: float = 1.0, is_first: bool = False):
        super().__init__()
        self.omega = omega
        self.linear = nn.Linear(in_dim, out_dim)
        self.freq = nn.Linear(style_dim, out_dim)
        self.phase = nn.Linear(style_dim, out_dim)
        with torch.no_grad():
            if is_first:
                self.linear.weight.uniform_(-1.0 / in_dim, 1.0 / in_dim)
            else:
                bound = math.sqrt(6.0 / in_dim) / omega
                self.linear.weight.uniform_(-bound, bound)
            # Frequency gain starts at 1 and phase at 0 so the layer begins as
            # plain SIREN; small style weights keep the modulation live.
            scale = 0.25 / math.sqrt(style_dim)
            self.freq.weight.uniform_(-scale, scale)
            self.freq.bias.fill_(1.0)
            self.phase.weight.uniform_(-scale, scale)
            self.phase.bias.zero_()

    def forward(self, x: Tensor, style: Tensor) -> Tensor:
        return torch.sin(self.omega * self.freq(style) * self.linear(x) + self.phase(style))


class GeometryGenerator(nn.Module):
    """One region's geometry field: 3D point + style -> (confidence, features).

    The confidence is a raw (pre-softmax) score read off the geometry
    features by a one-wide affine head.
    """

    depth = 6

    def __init__(self, style_dim: int, hidden_dim: int = 64, feature_dim: int = 64,
                 first_omega: float = 30.0):
        super().__init__()
        for n in range(self.depth):
            layer = ModulatedSineLayer(
                3 if n == 0 else hidden_dim, hidden_dim, style_dim,
                omega=first_omega if n == 0 else 1.0, is_first=n == 0,
            )
            setattr(self, f"layer{n}", layer)
        self.feature_head = nn.Linear(hidden_dim, feature_dim)
        self.confidence_head = nn.Linear(feature_dim, 1)

    def forward(self, points: Tensor, style: Tensor) -> tuple[Tensor, Tensor]:
        if points.shape[-1] != 3:
            raise ValueError(f"expected 3D points, got width {points.shape[-1]}")
        validate_finite("points", points)
        h = points
        for n in range(self.depth):
            h = getattr(self, f"layer{n}")(h, style)
        features = self.feature_head(h)
        confidence = self.confidence_head(features).squeeze(-1)
        return confidence, features


class TextureGenerator(nn.Module):
    """One region's texture field: geometry features + view direction + style -> features."""

    depth = 4

    def __init__(self, geo_feature_dim: int, style_dim: int,
                 hidden_dim: int = 64, feature_dim: int = 64):
        super().__init__()
        self.geo_feature_dim = geo_feature_dim
        for n in range(self.depth):
            layer = ModulatedSineLayer(
                geo_feature_dim + 3 if n == 0 else hidden_dim, hidden_dim, style_dim,
            )
            setattr(self, f"layer{n}", layer)
        self.feature_head = nn.Linear(hidden_dim, feature_dim)

    def forward(self, geo_features: Tensor, view_dirs: Tensor, style: Tensor) -> Tensor:
        if geo_features.shape[-1] != self.geo_feature_dim:
            raise ValueError(
                f"geometry feature width {geo_features.shape[-1]} does not match "
                f"configured {self.geo_feature_dim}"
            )
        norm_err = (view_dirs.norm(dim=-1) - 1.0).abs().max()
        if norm_err > 1e-5:
            raise ValueError(f"view directions must be unit length (max error {norm_err:.2e})")
        h = torch.cat([geo_features, view_dirs], dim=-1)
        for n in range(self.depth):
            h = getattr(self, f"layer{n}")(h, style)
        return self.feature_head(h)


def _kaiming_leaky_init(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.kaiming_normal_(module.weight, a=0.2, mode="fan_in",
                                nonlinearity="leaky_relu")


class MappingNetwork(nn.Module):
    """Noise to style. Shared across regions and applied row-wise, so two
    noise banks that differ in one row map to style banks that differ in
    exactly that row."""

    def __init__(self, noise_dim: int, style_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(noise_dim, style_dim), nn.LeakyReLU(0.2),
            nn.Linear(style_dim, style_dim), nn.LeakyReLU(0.2),
            nn.Linear(style_dim, style_dim),
        )
        self.net.apply(_kaiming_leaky_init)
        with torch.no_grad():
            self.net[-1].weight *= 0.25

    def forward(self, noise: Tensor) -> Tensor:
        validate_finite("noise", noise)
        return self.net(F.normalize(noise, dim=-1))


class RegionGeneratorBank(nn.Module):
    """The per-region generator pairs plus the two mapping networks."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.geo = nn.ModuleList(
            GeometryGenerator(config.style_dim, config.geo_hidden_dim,
                              config.geo_feature_dim, config.first_omega)
            for _ in range(config.regions)
        )
        self.tex = nn.ModuleList(
            TextureGenerator(config.geo_feature_dim, config.style_dim,
                             config.tex_hidden_dim, config.tex_feature_dim)
            for _ in range(config.regions)
        )
        mapping = nn.Module()
        mapping.g = MappingNetwork(config.noise_dim, config.style_dim)
        mapping.t = MappingNetwork(config.noise_dim, config.style_dim)
        self.map = mapping

    @property
    def regions(self) -> int:
        return self.config.regions

    def map_latents(self, z_g: Tensor, z_t: Tensor) -> LatentBank:
        expected = (self.regions, self.config.noise_dim)
        for name, z in (("z_g", z_g), ("z_t", z_t)):
            if tuple(z.shape) != expected:
                raise ValueError(f"{name} must have shape {expected}, got {tuple(z.shape)}")
        return LatentBank(self.map.g(z_g), self.map.t(z_t))

    def sample_latents(self, rng: torch.Generator) -> LatentBank:
        p = next(self.parameters())
        shape = (self.regions, self.config.noise_dim)
        z_g = torch.randn(shape, generator=rng, dtype=p.dtype, device=p.device)
        z_t = torch.randn(shape, generator=rng, dtype=p.dtype, device=p.device)
        return self.map_latents(z_g, z_t)

    def mean_latents(self, rng: torch.Generator, draws: int = 256) -> LatentBank:
        """Average style over many noise draws; a neutral starting bank."""
        p = next(self.parameters())
        shape = (draws, self.config.noise_dim)
        with torch.no_grad():
            w_g = self.map.g(torch.randn(shape, generator=rng, dtype=p.dtype)).mean(0)
            w_t = self.map.t(torch.randn(shape, generator=rng, dtype=p.dtype)).mean(0)
        return LatentBank(w_g.expand(self.regions, -1).clone(),
                          w_t.expand(self.regions, -1).clone())

    def _check_region(self, region: int) -> None:
        if not 0 <= region < self.regions:
            raise IndexError(f"region {region} out of range for {self.regions} regions")

    def geometry_forward(self, points: Tensor, region: int, style_row: Tensor):
        self._check_region(region)
        return self.geo[region](points, style_row)

    def texture_forward(self, geo_features: Tensor, view_dirs: Tensor,
                        region: int, style_row: Tensor) -> Tensor:
        self._check_region(region)
        return self.tex[region](geo_features, view_dirs, style_row)
