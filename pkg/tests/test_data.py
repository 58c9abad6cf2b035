import math

import numpy as np
import pytest
import torch
from PIL import Image

from lcnerf import (CameraConfig, Camera, LabelSchema, SegmentedSample,
                    build_toy_dataset, generate_toy_scene, load_celeba,
                    load_mask_png, merge_labels, sample_pose, save_mask_png)
from lcnerf.data import CELEBA_SOURCE_NAMES, generate_rays


class TestLabelSchema:
    def test_celeba_schema_has_thirteen_classes(self):
        schema = LabelSchema.celeba()
        assert schema.regions == 13
        assert schema.names[0] == "background"
        assert len(schema.source_to_merged) == len(CELEBA_SOURCE_NAMES) == 19

    def test_left_right_pairs_collapse(self):
        schema = LabelSchema.celeba()
        src = {name: i for i, name in enumerate(CELEBA_SOURCE_NAMES)}
        table = schema.source_to_merged
        assert table[src["l_eye"]] == table[src["r_eye"]]
        assert table[src["l_brow"]] == table[src["r_brow"]]
        assert table[src["l_ear"]] == table[src["r_ear"]] == table[src["ear_r"]]
        assert table[src["u_lip"]] == table[src["l_lip"]]
        assert table[src["neck"]] == table[src["neck_l"]]

    def test_incomplete_schema_rejected(self):
        with pytest.raises(ValueError):
            LabelSchema(names=["a", "b", "c"], source_to_merged=[0, 0, 0])


class TestMergeLabels:
    def test_all_background_stays_background(self):
        schema = LabelSchema.celeba()
        out = merge_labels(torch.zeros(8, 8, dtype=torch.long), schema)
        assert (out == 0).all()

    def test_histogram_matches_pushforward(self, rng):
        schema = LabelSchema.celeba()
        raw = torch.randint(0, 19, (32, 32), generator=rng)
        merged = merge_labels(raw, schema)
        for merged_id in range(schema.regions):
            sources = [s for s, m in enumerate(schema.source_to_merged)
                       if m == merged_id]
            expected = sum(int((raw == s).sum()) for s in sources)
            assert int((merged == merged_id).sum()) == expected

    def test_out_of_range_reports_pixel(self):
        schema = LabelSchema.celeba()
        raw = torch.zeros(4, 4, dtype=torch.long)
        raw[2, 3] = 19
        with pytest.raises(ValueError, match=r"\(2, 3\)"):
            merge_labels(raw, schema)

    def test_idempotent_under_identity_extension(self, rng):
        schema = LabelSchema.celeba()
        raw = torch.randint(0, 19, (16, 16), generator=rng)
        merged = merge_labels(raw, schema)
        identity = LabelSchema(names=schema.names,
                               source_to_merged=list(range(schema.regions)))
        assert torch.equal(merge_labels(merged, identity), merged)


class TestMaskPng:
    def test_round_trip_preserves_labels(self, tmp_path, rng):
        schema = LabelSchema.toy(3)
        labels = torch.randint(0, 3, (24, 24), generator=rng)
        path = tmp_path / "mask.png"
        save_mask_png(path, labels, schema.palette)
        assert torch.equal(load_mask_png(path), labels)

    def test_palette_written(self, tmp_path):
        schema = LabelSchema.celeba()
        path = tmp_path / "mask.png"
        save_mask_png(path, torch.zeros(4, 4, dtype=torch.long), schema.palette)
        with Image.open(path) as img:
            assert img.mode == "P"
            palette = img.getpalette()[: 3 * schema.regions]
        flat = [c for rgb in schema.palette for c in rgb]
        assert palette == flat


class TestCelebaLoader:
    def _write_fake_layout(self, root, index=0, size=32):
        (root / "images").mkdir(parents=True)
        (root / "masks").mkdir()
        rng = np.random.default_rng(0)
        img = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
        Image.fromarray(img, "RGB").save(root / "images" / f"{index}.jpg")
        mask = rng.integers(0, 19, (size, size)).astype(np.uint8)
        pal_img = Image.fromarray(mask, "P")
        pal_img.save(root / "masks" / f"{index}.png")

    def test_loads_and_merges(self, tmp_path):
        self._write_fake_layout(tmp_path)
        sample = load_celeba(tmp_path, 0, 16)
        assert sample.image.shape == (16, 16, 3)
        assert sample.labels.shape == (16, 16)
        assert sample.labels.max() < 13
        assert sample.pose is None

    def test_loading_twice_is_identical(self, tmp_path):
        self._write_fake_layout(tmp_path)
        a = load_celeba(tmp_path, 0, 16)
        b = load_celeba(tmp_path, 0, 16)
        assert torch.equal(a.image, b.image)
        assert torch.equal(a.labels, b.labels)

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="7.jpg"):
            load_celeba(tmp_path, 7, 16)


class TestToyScene:
    def test_seed_repeatability(self):
        a = generate_toy_scene(3, regions=3)
        b = generate_toy_scene(3, regions=3)
        assert torch.equal(a.centers, b.centers)
        assert torch.equal(a.semi_axes, b.semi_axes)
        assert torch.equal(a.colors, b.colors)

    def test_region_count_bounds(self):
        with pytest.raises(ValueError):
            generate_toy_scene(0, regions=1)
        with pytest.raises(ValueError):
            generate_toy_scene(0, regions=6)

    def test_traced_labels_match_sdf_argmin_at_hits(self):
        """At every hit pixel the labeled ellipsoid is the SDF argmin."""
        scene = generate_toy_scene(1, regions=4)
        camera_cfg = CameraConfig()
        cam = Camera(azimuth=0.2, elevation=-0.1, resolution=(24, 24),
                     radius=camera_cfg.radius, fov=camera_cfg.fov)
        sample = scene.trace(cam)
        rays = generate_rays(cam, dtype=torch.float64)
        labels = sample.labels.reshape(-1)
        hits = (labels > 0).nonzero().squeeze(-1)
        assert hits.numel() > 0
        # March each hit ray to its first surface crossing, then compare.
        for ray_index in hits[:: max(1, hits.numel() // 50)].tolist():
            origin = rays.origins[ray_index]
            direction = rays.directions[ray_index]
            for t in torch.linspace(camera_cfg.near, camera_cfg.far, 400):
                point = (origin + t * direction).reshape(1, 3)
                d = scene.sdf(point).squeeze(-1)
                if (d < 0).any():
                    assert int(d.argmin()) + 1 == int(labels[ray_index])
                    break
            else:
                raise AssertionError("marched ray never entered the labeled ellipsoid")

    def test_frontal_pixel_shares_healthy(self):
        scene = generate_toy_scene(0, regions=3)
        from lcnerf.data import class_pixel_shares

        shares = class_pixel_shares(scene, CameraConfig())
        assert all(s >= 0.02 for s in shares[1:])
        assert abs(sum(shares) - 1.0) <= 1e-9

    def test_disjoint_ellipsoids(self):
        for seed in range(5):
            scene = generate_toy_scene(seed, regions=4)
            n = scene.centers.shape[0]
            for i in range(n):
                for j in range(i + 1, n):
                    gap = (scene.centers[i] - scene.centers[j]).norm()
                    assert gap > scene.semi_axes[i].max() + scene.semi_axes[j].max()


class TestToyDataset:
    def test_build_and_cache_round_trip(self, tmp_path):
        first = build_toy_dataset(0, regions=3, size=4, resolution=16,
                                  cache_root=tmp_path)
        again = build_toy_dataset(0, regions=3, size=4, resolution=16,
                                  cache_root=tmp_path)
        assert len(first) == len(again) == 4
        for a, b in zip(first.samples, again.samples):
            assert torch.equal(a.labels, b.labels)
            assert a.pose == b.pose
            assert (a.image - b.image).abs().max() <= 1.0 / 255.0

    def test_cache_files_exist(self, tmp_path):
        build_toy_dataset(5, regions=3, size=2, resolution=16, cache_root=tmp_path)
        base = tmp_path / "toy" / "5"
        for i in range(2):
            assert (base / f"{i}_img.png").exists()
            assert (base / f"{i}_mask.png").exists()
            assert (base / f"{i}_pose.txt").exists()

    def test_pose_file_format(self, tmp_path):
        build_toy_dataset(5, regions=3, size=1, resolution=16, cache_root=tmp_path)
        lines = (tmp_path / "toy" / "5" / "0_pose.txt").read_text().splitlines()
        values = [float(line) for line in lines if line]
        assert len(values) == 2


class TestSamplePose:
    def test_toy_draws_within_ranges(self):
        rng = torch.Generator().manual_seed(0)
        camera = CameraConfig()
        for _ in range(500):
            az, el = sample_pose(rng, "toy", camera)
            assert abs(az) <= camera.azimuth_range
            assert abs(el) <= camera.elevation_range

    def test_celeba_truncated_at_two_sigma(self):
        rng = torch.Generator().manual_seed(0)
        camera = CameraConfig()
        for _ in range(500):
            az, el = sample_pose(rng, "celeba", camera)
            assert abs(az) <= 2 * camera.azimuth_std
            assert abs(el) <= 2 * camera.elevation_std

    def test_mean_near_frontal(self):
        rng = torch.Generator().manual_seed(1)
        n = 20_000
        draws = torch.tensor([sample_pose(rng, "celeba", CameraConfig())
                              for _ in range(n)])
        bound = 3 * 0.3 / math.sqrt(n)
        assert draws[:, 0].mean().abs().item() <= bound * 2
        assert draws[:, 1].mean().abs().item() <= bound * 2

    def test_fixed_state_fixed_pose(self):
        a = sample_pose(torch.Generator().manual_seed(3), "toy", CameraConfig())
        b = sample_pose(torch.Generator().manual_seed(3), "toy", CameraConfig())
        assert a == b

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            sample_pose(torch.Generator(), "imagenet", CameraConfig())
