"""Alternating adversarial training at desk scale.

Each step: one image-discriminator update, one image+mask-discriminator
update, one generator update, in that order. All randomness flows through
a single explicit generator whose state is checkpointed, so a resumed run
replays the exact remaining step sequence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from . import checkpoint as ckpt
from .adversarial import (ImageMaskDiscriminator, ImagePoseDiscriminator,
                          generator_loss, image_disc_loss,
                          image_mask_disc_loss)
from .config import TrainConfig
from .data import LabelSchema, ToyDataset, build_toy_dataset, load_celeba, sample_pose
from .fusion import FusionModule, sdf_with_gradient
from .generators import LatentBank, RegionGeneratorBank
from .rendering import Camera, render


@dataclass
class TrainState:
    config: TrainConfig
    generators: RegionGeneratorBank
    fusion: FusionModule
    disc_image: ImagePoseDiscriminator
    disc_pair: ImageMaskDiscriminator
    opt_g: torch.optim.Adam
    opt_di: torch.optim.Adam
    opt_dim: torch.optim.Adam
    rng: torch.Generator
    step: int = 0

    def generator_parameters(self):
        yield from self.generators.parameters()
        yield from self.fusion.parameters()


def build_state(config: TrainConfig) -> TrainState:
    torch.manual_seed(config.seed)
    model = config.model
    generators = RegionGeneratorBank(model)
    fusion = FusionModule(model.geo_feature_dim, model.tex_feature_dim,
                          beta_init=model.density_beta_init)
    disc_image = ImagePoseDiscriminator(config.resolution,
                                        config.disc_base_channels,
                                        config.disc_max_channels)
    disc_pair = ImageMaskDiscriminator(model.regions, config.resolution,
                                       config.disc_base_channels,
                                       config.disc_max_channels)
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(
        list(generators.parameters()) + list(fusion.parameters()),
        lr=config.lr_generator, betas=betas)
    opt_di = torch.optim.Adam(disc_image.parameters(), lr=config.lr_image_disc,
                              betas=betas)
    opt_dim = torch.optim.Adam(disc_pair.parameters(),
                               lr=config.lr_image_mask_disc, betas=betas)
    rng = torch.Generator()
    rng.manual_seed(config.seed + 1)
    return TrainState(config=config, generators=generators, fusion=fusion,
                      disc_image=disc_image, disc_pair=disc_pair, opt_g=opt_g,
                      opt_di=opt_di, opt_dim=opt_dim, rng=rng)


def training_camera(config: TrainConfig, azimuth: float, elevation: float) -> Camera:
    cam = config.camera
    return Camera(azimuth=azimuth, elevation=elevation, radius=cam.radius,
                  fov=cam.fov, resolution=(config.resolution, config.resolution))


def render_fake(state: TrainState, bank: LatentBank, pose: tuple[float, float],
                stratified: bool = True):
    """Render one fake as the discriminators see it: image composited over
    white, mask channels with the missed-ray mass folded into background."""
    config = state.config
    cam = training_camera(config, *pose)
    result = render(state.generators, state.fusion, bank, cam,
                    samples_per_ray=config.samples_per_ray,
                    stratified=stratified, rng=state.rng,
                    near=config.camera.near, far=config.camera.far)
    return result.image_over(), result.mask_with_background(), result


def _render_fake_batch(state: TrainState, batch_size: int):
    images, masks, banks, poses = [], [], [], []
    for _ in range(batch_size):
        bank = state.generators.sample_latents(state.rng)
        pose = sample_pose(state.rng, state.config.data.dataset,
                           state.config.camera)
        image, mask, _ = render_fake(state, bank, pose)
        images.append(image.permute(2, 0, 1))
        masks.append(mask.permute(2, 0, 1))
        banks.append(bank)
        poses.append(pose)
    return (torch.stack(images), torch.stack(masks), banks,
            torch.tensor(poses, dtype=torch.float32))


def _eikonal_points(state: TrainState, count: int) -> Tensor:
    """Half near-surface shell samples along view rays, half uniform box points."""
    config = state.config
    half = count // 2
    box = torch.rand((count - half, 3), generator=state.rng) * 2.0 - 1.0
    az, el = sample_pose(state.rng, config.data.dataset, config.camera)
    cam = training_camera(config, az, el)
    position = cam.position()
    spread = torch.rand((half, 1), generator=state.rng)
    depth = config.camera.near + (config.camera.far - config.camera.near) * spread
    to_origin = F.normalize(-position, dim=0)
    jitter = (torch.rand((half, 3), generator=state.rng) * 2 - 1) * 0.5 * math.tan(cam.fov)
    dirs = F.normalize(to_origin + jitter, dim=-1)
    shell = position + depth * dirs
    return torch.cat([shell, box])


def _grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().square().sum())
    return math.sqrt(total)


def train_step(state: TrainState, batch: dict[str, Tensor]) -> dict:
    """One full D_I / D_IM / G round; returns the step's metric row."""
    config = state.config
    weights = config.loss
    regions = config.model.regions
    real_images = batch["image"].permute(0, 3, 1, 2)
    real_masks = F.one_hot(batch["labels"], regions).permute(0, 3, 1, 2).float()
    if real_images.shape[-1] != config.resolution:
        raise ValueError(
            f"batch resolution {real_images.shape[-1]} does not match "
            f"configured {config.resolution}"
        )
    batch_size = real_images.shape[0]

    # Discriminator updates see detached fakes.
    with torch.no_grad():
        fake_images, fake_masks, _, fake_poses = _render_fake_batch(state, batch_size)

    loss_di, terms_di = image_disc_loss(state.disc_image, fake_images,
                                        real_images, fake_poses, weights)
    state.opt_di.zero_grad()
    loss_di.backward()
    di_grad = _grad_norm(state.disc_image.parameters())
    state.opt_di.step()

    fake_pairs = torch.cat([fake_images, fake_masks], dim=1)
    real_pairs = torch.cat([real_images, real_masks], dim=1)
    loss_dim, terms_dim = image_mask_disc_loss(state.disc_pair, fake_pairs,
                                               real_pairs, weights)
    state.opt_dim.zero_grad()
    loss_dim.backward()
    dim_grad = _grad_norm(state.disc_pair.parameters())
    state.opt_dim.step()

    # Generator update renders a fresh batch with gradients attached.
    g_images, g_masks, g_banks, g_poses = _render_fake_batch(state, batch_size)
    g_pairs = torch.cat([g_images, g_masks], dim=1)
    points = _eikonal_points(state, config.eikonal_points)
    sdf_values, sdf_gradients = [], []
    for bank in g_banks:
        d, grad = sdf_with_gradient(state.generators, state.fusion, bank, points)
        sdf_values.append(d)
        sdf_gradients.append(grad)
    loss_g, terms_g = generator_loss(state.disc_image, state.disc_pair,
                                     g_images, g_pairs, g_poses,
                                     torch.cat(sdf_values),
                                     torch.cat(sdf_gradients), weights)
    state.opt_g.zero_grad()
    loss_g.backward()
    g_grad = _grad_norm(state.generator_parameters())
    state.opt_g.step()

    state.step += 1
    metrics = {
        "step": state.step,
        "loss_d_image": float(loss_di.detach()),
        "loss_d_pair": float(loss_dim.detach()),
        "loss_g": float(loss_g.detach()),
        **terms_di, **terms_dim, **terms_g,
        "beta": float(state.fusion.beta.detach()),
        "grad_norm_g": g_grad,
        "grad_norm_d_image": di_grad,
        "grad_norm_d_pair": dim_grad,
        "lr_g": config.lr_generator,
        "lr_d_image": config.lr_image_disc,
        "lr_d_pair": config.lr_image_mask_disc,
    }
    return metrics


def load_dataset(config: TrainConfig, cache_root=None):
    data = config.data
    if data.dataset == "toy":
        return build_toy_dataset(data.toy_seed, config.model.regions,
                                 data.toy_size, config.resolution,
                                 config.camera,
                                 cache_root=cache_root or (data.root or None))
    if data.dataset == "celeba":
        if not data.root:
            raise ValueError("data.root must point at the CelebAMask-HQ layout")
        schema = LabelSchema.celeba()
        samples = [load_celeba(data.root, i, config.resolution, schema)
                   for i in range(data.toy_size)]
        scene = None
        return ToyDataset(scene, samples, schema)
    raise ValueError(f"unknown dataset {data.dataset!r}")


def draw_batch(dataset, batch_size: int, rng: torch.Generator,
               kind: str, camera) -> dict[str, Tensor]:
    indices = torch.randint(len(dataset), (batch_size,), generator=rng)
    images, labels = [], []
    for i in indices.tolist():
        sample = dataset[i]
        images.append(sample.image)
        labels.append(sample.labels)
    return {"image": torch.stack(images), "labels": torch.stack(labels)}


def save_checkpoint(state: TrainState, path) -> None:
    entries: dict[str, np.ndarray] = {}
    entries.update(ckpt.module_entries("", state.generators))
    entries.update(ckpt.module_entries("fuse.", state.fusion))
    entries.update(ckpt.module_entries("disc_image.", state.disc_image))
    entries.update(ckpt.module_entries("disc_pair.", state.disc_pair))
    entries.update(ckpt.optimizer_entries("opt.g.", state.opt_g))
    entries.update(ckpt.optimizer_entries("opt.di.", state.opt_di))
    entries.update(ckpt.optimizer_entries("opt.dim.", state.opt_dim))
    entries["rng.state"] = ckpt.encode_bytes(state.rng.get_state().numpy().tobytes())
    entries["meta.step"] = np.asarray([state.step], dtype=np.float32)
    entries["meta.config"] = ckpt.encode_text(state.config.to_ini())
    ckpt.write_container(path, dict(sorted(entries.items())))


def load_checkpoint(path) -> TrainState:
    entries = ckpt.read_container(path)
    config = TrainConfig.from_ini(ckpt.decode_text(entries["meta.config"]))
    state = build_state(config)
    ckpt.load_module("", state.generators, entries)
    ckpt.load_module("fuse.", state.fusion, entries)
    ckpt.load_module("disc_image.", state.disc_image, entries)
    ckpt.load_module("disc_pair.", state.disc_pair, entries)
    ckpt.load_optimizer("opt.g.", state.opt_g, entries)
    ckpt.load_optimizer("opt.di.", state.opt_di, entries)
    ckpt.load_optimizer("opt.dim.", state.opt_dim, entries)
    rng_state = torch.from_numpy(
        np.frombuffer(ckpt.decode_bytes(entries["rng.state"]), dtype=np.uint8).copy())
    state.rng.set_state(rng_state)
    state.step = int(entries["meta.step"][0])
    return state


def train(config: TrainConfig, out_dir, resume=None,
          progress=None) -> Path:
    """Run training to ``total_steps``; returns the final checkpoint path.

    Writes ``config.ini`` (the effective config), ``metrics.jsonl`` (one
    JSON object per step), and periodic + final checkpoints under
    ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state = load_checkpoint(resume)
        config = state.config
    else:
        state = build_state(config)
    config.save(out_dir / "config.ini")
    dataset = load_dataset(config, cache_root=out_dir / "data")

    metrics_path = out_dir / "metrics.jsonl"
    mode = "a" if resume is not None else "w"
    final_path = out_dir / "checkpoint_final.lcnf"
    with open(metrics_path, mode) as metrics_file:
        while state.step < config.total_steps:
            batch = draw_batch(dataset, config.batch_size, state.rng,
                               config.data.dataset, config.camera)
            metrics = train_step(state, batch)
            if state.step % config.log_every == 0 or state.step == config.total_steps:
                metrics_file.write(json.dumps(metrics, sort_keys=True) + "\n")
                metrics_file.flush()
            if progress is not None:
                progress(metrics)
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"checkpoint_{state.step:06d}.lcnf")
    save_checkpoint(state, final_path)
    return final_path
