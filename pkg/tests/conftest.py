import pytest
import torch

from lcnerf import FusionModule, ModelConfig, RegionGeneratorBank, TrainConfig

torch.set_num_threads(1)


def tiny_config(regions=3, noise_dim=8, style_dim=8, hidden=8, features=6):
    return ModelConfig(
        regions=regions, noise_dim=noise_dim, style_dim=style_dim,
        geo_hidden_dim=hidden, geo_feature_dim=features,
        tex_hidden_dim=hidden, tex_feature_dim=features,
    )


def tiny_train_config(**overrides) -> TrainConfig:
    """Training config shrunk until a step runs in well under a second."""
    config = TrainConfig()
    config.model.regions = 3
    config.model.noise_dim = 8
    config.model.style_dim = 8
    config.model.geo_hidden_dim = 8
    config.model.geo_feature_dim = 6
    config.model.tex_hidden_dim = 8
    config.model.tex_feature_dim = 6
    config.resolution = 8
    config.samples_per_ray = 4
    config.eikonal_points = 8
    config.batch_size = 2
    config.disc_base_channels = 4
    config.disc_max_channels = 8
    config.data.toy_size = 4
    config.total_steps = 2
    config.checkpoint_every = 0
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


def tiny_model(seed=0, dtype=torch.float32, **kwargs):
    """A small generator bank + fusion head pair with seeded parameters."""
    config = tiny_config(**kwargs)
    torch.manual_seed(seed)
    generators = RegionGeneratorBank(config)
    fusion = FusionModule(config.geo_feature_dim, config.tex_feature_dim)
    if dtype is not torch.float32:
        generators = generators.to(dtype)
        fusion = fusion.to(dtype)
    return generators, fusion, config


def central_difference(fn, tensor, step=1e-4):
    """Gradient of the scalar ``fn()`` w.r.t. ``tensor`` by central differences.

    ``tensor`` is perturbed in place and restored; ``fn`` must re-evaluate
    the full computation each call.
    """
    grad = torch.zeros_like(tensor)
    flat = tensor.reshape(-1)
    grad_flat = grad.reshape(-1)
    def value():
        out = fn()
        return float(out.detach() if torch.is_tensor(out) else out)

    for i in range(flat.numel()):
        original = flat[i].item()
        with torch.no_grad():
            flat[i] = original + step
        hi = value()
        with torch.no_grad():
            flat[i] = original - step
        lo = value()
        with torch.no_grad():
            flat[i] = original
        grad_flat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic: torch.Tensor, reference: torch.Tensor) -> float:
    scale = max(reference.norm().item(), 1e-8)
    return (analytic - reference).norm().item() / scale


@pytest.fixture
def rng():
    gen = torch.Generator()
    gen.manual_seed(1234)
    return gen
