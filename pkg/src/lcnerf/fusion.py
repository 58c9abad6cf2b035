"""Spatial-aware fusion of the per-region fields.

Region confidences are softmaxed into a blend mask; geometry and texture
features are blended with the same mask; a single affine head turns the
fused geometry features into a signed distance, which a scaled sigmoid
turns into density. Color comes from an affine head over fused texture
features, squashed to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .generators import LatentBank, RegionGeneratorBank, validate_finite


def fuse_confidences(confidences: Tensor) -> Tensor:
    """Softmax raw region confidences into a blend mask along the last axis."""
    validate_finite("confidences", confidences)
    return torch.softmax(confidences, dim=-1)


def fuse_features(mask: Tensor, features) -> Tensor:
    """Blend per-region features with mask weights.

    ``mask`` is (..., regions); ``features`` is a sequence of per-region
    (..., width) tensors or a stacked (regions, ..., width) tensor.
    """
    if isinstance(features, (list, tuple)):
        widths = {f.shape[-1] for f in features}
        if len(widths) != 1:
            raise ValueError(f"feature widths differ across regions: {sorted(widths)}")
        features = torch.stack(tuple(features), dim=0)
    if features.shape[0] != mask.shape[-1]:
        raise ValueError(
            f"mask has {mask.shape[-1]} regions but feature stack has {features.shape[0]}"
        )
    return torch.einsum("...k,k...f->...f", mask, features)


def sdf_to_density(sdf: Tensor, beta) -> Tensor:
    """Scaled sigmoid of the negated signed distance: inside -> high density."""
    beta_value = float(beta) if not torch.is_tensor(beta) else float(beta.detach())
    if not beta_value > 0:
        raise ValueError(f"beta must be positive, got {beta_value}")
    return torch.sigmoid(-sdf / beta) / beta


class FusionModule(nn.Module):
    """Heads shared by all regions: fused features -> SDF, density, color."""

    def __init__(self, geo_feature_dim: int, tex_feature_dim: int,
                 beta_init: float = 0.1):
        super().__init__()
        if beta_init <= 0:
            raise ValueError(f"beta_init must be positive, got {beta_init}")
        self.sdf_head = nn.Linear(geo_feature_dim, 1)
        self.color_head = nn.Linear(tex_feature_dim, 3)
        # Density sharpness is learned through its log so it stays positive.
        self.rho = nn.Parameter(torch.tensor(math.log(beta_init)))

    @property
    def beta(self) -> Tensor:
        return self.rho.exp()

    def predict_sdf(self, geo_features: Tensor) -> Tensor:
        return self.sdf_head(geo_features).squeeze(-1)

    def predict_color(self, tex_features: Tensor) -> Tensor:
        return torch.sigmoid(self.color_head(tex_features))

    def density(self, sdf: Tensor) -> Tensor:
        return sdf_to_density(sdf, self.beta)


@dataclass
class FieldSample:
    """Everything the fused field knows at a batch of points."""

    confidences: Tensor   # (..., regions) raw scores
    mask: Tensor          # (..., regions) softmax blend weights
    geo_features: Tensor  # (..., geo_feature_dim) fused
    tex_features: Tensor  # (..., tex_feature_dim) fused, None if texture skipped
    sdf: Tensor           # (...,)
    density: Tensor       # (...,)
    color: Tensor         # (..., 3), None if texture skipped


def evaluate_field(generators: RegionGeneratorBank, fusion: FusionModule,
                   latents: LatentBank, points: Tensor, view_dirs: Tensor | None,
                   with_texture: bool = True) -> FieldSample:
    """Run every region's generators at ``points`` and fuse the results.

    The geometry half depends only on ``latents.w_g``; texture rows enter
    after the blend mask, SDF and density are already fixed.
    """
    if latents.regions != generators.regions:
        raise ValueError(
            f"latent bank has {latents.regions} regions, generators have {generators.regions}"
        )
    confidences, geo_stack = [], []
    for i in range(generators.regions):
        s_i, f_i = generators.geometry_forward(points, i, latents.w_g[i])
        confidences.append(s_i)
        geo_stack.append(f_i)
    confidences = torch.stack(confidences, dim=-1)
    mask = fuse_confidences(confidences)
    geo_features = fuse_features(mask, geo_stack)
    sdf = fusion.predict_sdf(geo_features)
    density = fusion.density(sdf)

    tex_features = color = None
    if with_texture:
        if view_dirs is None:
            raise ValueError("view directions are required when texture is evaluated")
        tex_stack = [
            generators.texture_forward(geo_stack[i], view_dirs, i, latents.w_t[i])
            for i in range(generators.regions)
        ]
        tex_features = fuse_features(mask, tex_stack)
        color = fusion.predict_color(tex_features)

    return FieldSample(confidences=confidences, mask=mask, geo_features=geo_features,
                       tex_features=tex_features, sdf=sdf, density=density, color=color)


def sdf_with_gradient(generators: RegionGeneratorBank, fusion: FusionModule,
                      latents: LatentBank, points: Tensor) -> tuple[Tensor, Tensor]:
    """Signed distance and its spatial gradient at ``points`` (for eikonal terms)."""
    points = points.detach().requires_grad_(True)
    sample = evaluate_field(generators, fusion, latents, points, None, with_texture=False)
    grad = torch.autograd.grad(sample.sdf.sum(), points, create_graph=True)[0]
    return sample.sdf, grad
