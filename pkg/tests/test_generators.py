import math

import pytest
import torch

from lcnerf import (GeometryGenerator, LatentBank, MappingNetwork,
                    RegionGeneratorBank, TextureGenerator)

from conftest import central_difference, relative_error, tiny_config, tiny_model


def zeroed(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


class TestLatentBank:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            LatentBank(torch.zeros(3, 8), torch.zeros(3, 7))
        with pytest.raises(ValueError):
            LatentBank(torch.zeros(8), torch.zeros(8))

    def test_non_finite_rejected(self):
        bad = torch.zeros(3, 8)
        bad[1, 2] = float("nan")
        with pytest.raises(ValueError):
            LatentBank(bad, torch.zeros(3, 8))

    def test_with_rows_replaces_only_named_rows(self):
        bank = LatentBank(torch.randn(4, 8), torch.randn(4, 8))
        rows = torch.ones(2, 8)
        out = bank.with_rows([1, 3], rows, "geometry")
        assert torch.equal(out.w_g[[1, 3]], rows)
        assert torch.equal(out.w_g[[0, 2]], bank.w_g[[0, 2]])
        assert torch.equal(out.w_t, bank.w_t)

    def test_with_rows_bad_region_rejected(self):
        bank = LatentBank(torch.zeros(3, 8), torch.zeros(3, 8))
        with pytest.raises(IndexError):
            bank.with_rows([3], torch.zeros(1, 8), "texture")


class TestGeometryGenerator:
    def test_zero_network_outputs_head_bias(self):
        gen = zeroed(GeometryGenerator(style_dim=8, hidden_dim=8, feature_dim=4))
        with torch.no_grad():
            gen.feature_head.bias.copy_(torch.tensor([0.5, -1.0, 2.0, 0.0]))
            gen.confidence_head.bias.fill_(0.25)
        s, f = gen(torch.randn(7, 3), torch.randn(8))
        assert torch.equal(f, gen.feature_head.bias.expand(7, 4))
        assert torch.equal(s, torch.full((7,), 0.25))

    def test_confidence_gradient_matches_finite_differences(self):
        torch.manual_seed(3)
        gen = GeometryGenerator(style_dim=6, hidden_dim=8, feature_dim=4).double()
        style = torch.randn(6, dtype=torch.float64)
        x = torch.randn(5, 3, dtype=torch.float64) * 0.3
        x.requires_grad_(True)
        s, _ = gen(x, style)
        analytic = torch.autograd.grad(s.sum(), x)[0]
        fd = central_difference(lambda: gen(x, style)[0].sum(), x)
        assert relative_error(analytic, fd) <= 1e-3

    def test_modulation_is_live(self):
        torch.manual_seed(0)
        gen = GeometryGenerator(style_dim=8, hidden_dim=8, feature_dim=4)
        x = torch.randn(4, 3) * 0.3
        s_a, f_a = gen(x, torch.randn(8))
        s_b, f_b = gen(x, torch.randn(8))
        assert not torch.allclose(s_a, s_b)
        assert not torch.allclose(f_a, f_b)

    def test_non_finite_points_rejected(self):
        gen = GeometryGenerator(style_dim=4, hidden_dim=8, feature_dim=4)
        bad = torch.zeros(2, 3)
        bad[0, 0] = float("inf")
        with pytest.raises(ValueError):
            gen(bad, torch.zeros(4))

    def test_six_sine_layers(self):
        gen = GeometryGenerator(style_dim=4)
        assert gen.depth == 6
        assert all(hasattr(gen, f"layer{n}") for n in range(6))


class TestTextureGenerator:
    def test_zero_network_ignores_view_direction(self):
        gen = zeroed(TextureGenerator(geo_feature_dim=4, style_dim=8,
                                      hidden_dim=8, feature_dim=5))
        with torch.no_grad():
            gen.feature_head.bias.uniform_(-1, 1)
        f_g = torch.randn(6, 4)
        v = torch.nn.functional.normalize(torch.randn(6, 3), dim=-1)
        out_a = gen(f_g, v, torch.randn(8))
        out_b = gen(f_g, -v, torch.randn(8))
        assert torch.equal(out_a, gen.feature_head.bias.expand(6, 5))
        assert torch.equal(out_a, out_b)

    def test_view_dependence_is_live(self):
        torch.manual_seed(1)
        gen = TextureGenerator(geo_feature_dim=4, style_dim=8, hidden_dim=8, feature_dim=5)
        f_g = torch.randn(6, 4)
        v = torch.nn.functional.normalize(torch.randn(6, 3), dim=-1)
        style = torch.randn(8)
        assert not torch.allclose(gen(f_g, v, style), gen(f_g, -v, style))

    def test_style_gradient_matches_finite_differences(self):
        torch.manual_seed(5)
        gen = TextureGenerator(geo_feature_dim=4, style_dim=6, hidden_dim=8,
                               feature_dim=4).double()
        f_g = torch.randn(5, 4, dtype=torch.float64)
        v = torch.nn.functional.normalize(torch.randn(5, 3, dtype=torch.float64), dim=-1)
        style = torch.randn(6, dtype=torch.float64).requires_grad_(True)
        analytic = torch.autograd.grad(gen(f_g, v, style).sum(), style)[0]
        fd = central_difference(lambda: gen(f_g, v, style).sum(), style)
        assert relative_error(analytic, fd) <= 1e-3

    def test_feature_width_mismatch_rejected(self):
        gen = TextureGenerator(geo_feature_dim=4, style_dim=8)
        v = torch.tensor([[0.0, 0.0, 1.0]])
        with pytest.raises(ValueError):
            gen(torch.zeros(1, 5), v, torch.zeros(8))

    def test_non_unit_view_dirs_rejected(self):
        gen = TextureGenerator(geo_feature_dim=4, style_dim=8)
        with pytest.raises(ValueError):
            gen(torch.zeros(1, 4), torch.tensor([[0.0, 0.0, 2.0]]), torch.zeros(8))


class TestMappingNetwork:
    def test_zero_noise_maps_to_origin_style(self):
        torch.manual_seed(2)
        net = MappingNetwork(noise_dim=8, style_dim=6)
        w = net(torch.zeros(5, 8))
        assert torch.equal(w[0], w[1]) and torch.equal(w[1], w[4])
        # Zero noise stays zero under normalization, so only biases act.
        direct = net.net(torch.zeros(8))
        assert torch.allclose(w[0], direct, atol=1e-6)

    def test_scale_invariance_of_noise(self):
        torch.manual_seed(2)
        net = MappingNetwork(noise_dim=8, style_dim=6)
        z = torch.randn(3, 8)
        assert torch.allclose(net(z), net(2.0 * z), atol=1e-6)


class TestRegionGeneratorBank:
    def test_map_latents_shape_checked(self, rng):
        generators, _, config = tiny_model()
        good = torch.randn(config.regions, config.noise_dim, generator=rng)
        with pytest.raises(ValueError):
            generators.map_latents(good, good[:-1])
        with pytest.raises(ValueError):
            generators.map_latents(good[:, :-1], good[:, :-1])

    def test_fixed_seed_draw_is_repeatable(self):
        generators, _, _ = tiny_model()
        a = generators.sample_latents(torch.Generator().manual_seed(7))
        b = generators.sample_latents(torch.Generator().manual_seed(7))
        assert torch.equal(a.w_g, b.w_g)
        assert torch.equal(a.w_t, b.w_t)

    def test_rowwise_mapping_independence(self, rng):
        generators, _, config = tiny_model()
        z_g = torch.randn(config.regions, config.noise_dim, generator=rng)
        z_t = torch.randn(config.regions, config.noise_dim, generator=rng)
        z_g_prime = z_g.clone()
        z_g_prime[1] = torch.randn(config.noise_dim, generator=rng)
        a = generators.map_latents(z_g, z_t)
        b = generators.map_latents(z_g_prime, z_t)
        for row in range(config.regions):
            same = torch.equal(a.w_g[row], b.w_g[row])
            assert same == (row != 1)
        assert torch.equal(a.w_t, b.w_t)

    def test_region_independence_bit_exact(self, rng):
        """Perturbing one region's geometry row moves no other region's outputs."""
        generators, _, config = tiny_model()
        x = torch.randn(16, 3, generator=rng) * 0.3
        bank = generators.sample_latents(rng)
        for trial in range(10):
            target = trial % config.regions
            perturbed = bank.w_g.clone()
            perturbed[target] += torch.randn(config.style_dim, generator=rng)
            for region in range(config.regions):
                s_a, f_a = generators.geometry_forward(x, region, bank.w_g[region])
                s_b, f_b = generators.geometry_forward(x, region, perturbed[region])
                if region == target:
                    assert not torch.equal(s_a, s_b)
                else:
                    assert torch.equal(s_a, s_b) and torch.equal(f_a, f_b)

    def test_region_index_out_of_range(self, rng):
        generators, _, config = tiny_model()
        with pytest.raises(IndexError):
            generators.geometry_forward(torch.zeros(1, 3), config.regions,
                                        torch.zeros(config.style_dim))

    def test_checkpoint_key_layout(self):
        generators, _, _ = tiny_model()
        keys = set(generators.state_dict())
        assert "geo.0.layer0.linear.weight" in keys
        assert "geo.2.layer5.phase.bias" in keys
        assert "tex.1.layer3.freq.weight" in keys
        assert "map.g.net.0.weight" in keys
        assert "map.t.net.4.bias" in keys


def test_first_layer_uses_high_frequency():
    gen = GeometryGenerator(style_dim=4, hidden_dim=8, feature_dim=4, first_omega=30.0)
    assert gen.layer0.omega == 30.0
    assert gen.layer1.omega == 1.0
    bound = math.sqrt(6.0 / 8) / 1.0
    assert gen.layer1.linear.weight.abs().max() <= bound
    assert gen.layer0.linear.weight.abs().max() <= 1.0 / 3
