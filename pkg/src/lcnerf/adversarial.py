"""Discriminators and training losses.

Two critics: an image discriminator with a pose-regression head, and an
image+mask discriminator over the concatenated RGB and one-hot mask
channels. Loss terms follow the non-saturating softplus convention, with
R1 gradient penalties on real samples only, smooth-L1 pose regression,
and eikonal / minimal-surface regularizers on the SDF.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import LossWeights


class TrainingDiverged(RuntimeError):
    """A loss term came out non-finite; carries the term name."""

    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term!r} is non-finite ({value})")
        self.term = term


def _conv_trunk(in_channels: int, resolution: int, base_channels: int,
                max_channels: int) -> tuple[nn.Sequential, int]:
    if resolution < 4 or resolution & (resolution - 1):
        raise ValueError(f"discriminator resolution must be a power of two >= 4, got {resolution}")
    layers: list[nn.Module] = []
    channels = base_channels
    size = resolution
    prev = in_channels
    while size > 4:
        layers += [nn.Conv2d(prev, channels, 3, stride=2, padding=1),
                   nn.LeakyReLU(0.2)]
        prev = channels
        channels = min(channels * 2, max_channels)
        size //= 2
    layers += [nn.Conv2d(prev, channels, 4), nn.LeakyReLU(0.2), nn.Flatten()]
    return nn.Sequential(*layers), channels


class ImagePoseDiscriminator(nn.Module):
    """Realness score plus (azimuth, elevation) estimate from an RGB image."""

    def __init__(self, resolution: int, base_channels: int = 32, max_channels: int = 256):
        super().__init__()
        self.resolution = resolution
        self.trunk, width = _conv_trunk(3, resolution, base_channels, max_channels)
        self.score_head = nn.Linear(width, 1)
        self.pose_head = nn.Linear(width, 2)

    def forward(self, images: Tensor) -> tuple[Tensor, Tensor]:
        if images.shape[-3:] != (3, self.resolution, self.resolution):
            raise ValueError(
                f"expected (B, 3, {self.resolution}, {self.resolution}) images, "
                f"got {tuple(images.shape)}"
            )
        h = self.trunk(images)
        return self.score_head(h).squeeze(-1), self.pose_head(h)


class ImageMaskDiscriminator(nn.Module):
    """Realness score for an (image, one-hot mask) pair."""

    def __init__(self, regions: int, resolution: int, base_channels: int = 32,
                 max_channels: int = 256):
        super().__init__()
        self.regions = regions
        self.resolution = resolution
        self.trunk, width = _conv_trunk(3 + regions, resolution, base_channels, max_channels)
        self.score_head = nn.Linear(width, 1)

    def forward(self, pairs: Tensor) -> Tensor:
        expected = (3 + self.regions, self.resolution, self.resolution)
        if pairs.shape[-3:] != expected:
            raise ValueError(f"expected (B, {expected[0]}, {expected[1]}, {expected[2]}) "
                             f"inputs, got {tuple(pairs.shape)}")
        return self.score_head(self.trunk(pairs)).squeeze(-1)


def gan_softplus(scores: Tensor) -> Tensor:
    """Mean softplus of the scores; the non-saturating GAN objective."""
    return F.softplus(scores).mean()


def pose_loss(pose_true: Tensor, pose_pred: Tensor) -> Tensor:
    """Smooth-L1 over (azimuth, elevation), summed per pair, averaged over batch."""
    return F.smooth_l1_loss(pose_pred, pose_true, reduction="none").sum(-1).mean()


def r1_penalty(score_fn, real_input: Tensor) -> Tensor:
    """Mean squared input-gradient norm of the score at real samples."""
    real_input = real_input.detach().requires_grad_(True)
    scores = score_fn(real_input)
    grad = torch.autograd.grad(scores.sum(), real_input, create_graph=True)[0]
    return grad.reshape(grad.shape[0], -1).square().sum(-1).mean()


def eikonal_loss(sdf_gradients: Tensor) -> Tensor:
    """Mean squared deviation of the SDF spatial-gradient norm from one."""
    return (sdf_gradients.norm(dim=-1) - 1.0).square().mean()


def minimal_surface_loss(sdf_values: Tensor) -> Tensor:
    """Penalize near-zero SDF away from intended surfaces: mean exp(-100|d|)."""
    return torch.exp(-100.0 * sdf_values.abs()).mean()


def _check_terms(terms: dict[str, Tensor]) -> None:
    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise TrainingDiverged(name, float(value))


def image_disc_loss(disc: ImagePoseDiscriminator, fake_images: Tensor,
                    real_images: Tensor, fake_poses: Tensor,
                    weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """Full image-discriminator loss; fakes must already be detached."""
    fake_score, fake_pose = disc(fake_images)
    real_score, _ = disc(real_images)
    terms = {
        "d_image_fake": gan_softplus(fake_score),
        "d_image_real": gan_softplus(-real_score),
        "d_image_r1": r1_penalty(lambda x: disc(x)[0], real_images),
        "d_image_pose": pose_loss(fake_poses, fake_pose),
    }
    _check_terms(terms)
    total = (terms["d_image_fake"] + terms["d_image_real"]
             + weights.image_r1 * terms["d_image_r1"]
             + weights.pose * terms["d_image_pose"])
    return total, {k: float(v.detach()) for k, v in terms.items()}


def image_mask_disc_loss(disc: ImageMaskDiscriminator, fake_pairs: Tensor,
                         real_pairs: Tensor,
                         weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    terms = {
        "d_pair_fake": gan_softplus(disc(fake_pairs)),
        "d_pair_real": gan_softplus(-disc(real_pairs)),
        "d_pair_r1": r1_penalty(disc, real_pairs),
    }
    _check_terms(terms)
    total = (terms["d_pair_fake"] + terms["d_pair_real"]
             + weights.image_mask_r1 * terms["d_pair_r1"])
    return total, {k: float(v.detach()) for k, v in terms.items()}


def generator_loss(disc_image: ImagePoseDiscriminator,
                   disc_pair: ImageMaskDiscriminator, fake_images: Tensor,
                   fake_pairs: Tensor, fake_poses: Tensor, sdf_values: Tensor,
                   sdf_gradients: Tensor,
                   weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """Full generator loss; every input except poses carries generator grads."""
    fake_score, fake_pose = disc_image(fake_images)
    terms = {
        "g_image": gan_softplus(-fake_score),
        "g_pair": gan_softplus(-disc_pair(fake_pairs)),
        "g_pose": pose_loss(fake_poses, fake_pose),
        "g_eikonal": eikonal_loss(sdf_gradients),
        "g_surface": minimal_surface_loss(sdf_values),
    }
    _check_terms(terms)
    total = (terms["g_image"]
             + weights.image_mask_gan * terms["g_pair"]
             + weights.pose * terms["g_pose"]
             + weights.eikonal * terms["g_eikonal"]
             + weights.minimal_surface * terms["g_surface"])
    return total, {k: float(v.detach()) for k, v in terms.items()}
