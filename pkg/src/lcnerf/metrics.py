"""Editing-quality metrics over images and label masks."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor


def pixel_difference(image: Tensor, edited: Tensor, non_edit_mask: Tensor) -> float:
    """Mean absolute pixel difference restricted to the non-edit region.

    ``image``/``edited`` are (H, W, 3) in [0, 1]; ``non_edit_mask`` is a
    boolean (H, W) selector of pixels that the edit should have left
    alone. Channels are averaged before masking.
    """
    if image.shape != edited.shape:
        raise ValueError(f"image shapes differ: {tuple(image.shape)} vs {tuple(edited.shape)}")
    if non_edit_mask.shape != image.shape[:-1]:
        raise ValueError(
            f"mask shape {tuple(non_edit_mask.shape)} does not match image "
            f"{tuple(image.shape[:-1])}"
        )
    mask = non_edit_mask.bool()
    selected = int(mask.sum())
    if selected == 0:
        raise ValueError("non-edit mask selects no pixels")
    per_pixel = (image.detach() - edited.detach()).abs().mean(-1)
    return float(per_pixel[mask].mean())


def mask_consistency(expected: Tensor, actual: Tensor) -> float:
    """Fraction of pixels whose class ids disagree between two label maps."""
    if expected.shape != actual.shape:
        raise ValueError(
            f"label shapes differ: {tuple(expected.shape)} vs {tuple(actual.shape)}"
        )
    disagreements = expected.long() != actual.long()
    return int(disagreements.sum()) / disagreements.numel()


def mask_iou(expected: Tensor, actual: Tensor, classes: int) -> float:
    """Mean intersection-over-union across class ids.

    Classes absent from both maps are skipped rather than counted as
    perfect matches.
    """
    if expected.shape != actual.shape:
        raise ValueError(
            f"label shapes differ: {tuple(expected.shape)} vs {tuple(actual.shape)}"
        )
    expected = expected.long()
    actual = actual.long()
    scores = []
    for label in range(classes):
        a = expected == label
        b = actual == label
        union = int((a | b).sum())
        if union == 0:
            continue
        scores.append(int((a & b).sum()) / union)
    if not scores:
        raise ValueError("no class occupies either mask")
    return sum(scores) / len(scores)


def dilate_mask(mask: Tensor, pixels: int = 3) -> Tensor:
    """Grow a boolean (H, W) mask by ``pixels`` using a box structuring element."""
    if pixels < 0:
        raise ValueError(f"dilation must be non-negative, got {pixels}")
    if pixels == 0:
        return mask.bool().clone()
    wide = mask.bool().float()[None, None]
    size = 2 * pixels + 1
    grown = F.max_pool2d(wide, kernel_size=size, stride=1, padding=pixels)
    return grown[0, 0] > 0.5
