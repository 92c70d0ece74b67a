import hashlib

import numpy as np
import pytest

from depthdet.calibration import reprojection_rms, solve_projection_dlt
from depthdet.clustering import DEFAULT_TAU, cluster_grid
from depthdet.exceptions import ConfigError, PlacementError
from depthdet.synth import (
    BACKGROUND,
    SCENE_FILES,
    SceneSpec,
    Xoshiro256StarStar,
    generate_scene,
    read_scene,
    suite_specs,
    two_blob_cloud,
    write_scene,
)

# sha256 over (name, bytes) of the four files written for SceneSpec(seed=42)
SEED_42_DIGEST = "fa8199b6efcf975c9c09cddf71f0787ed89325d9ae0b91c6394706fc29b38fc0"


def _xoshiro_reference(seed, count):
    """Scalar xoshiro256** on lane 0, seeded like the vectorized generator."""
    mask = (1 << 64) - 1
    sm = seed & mask
    lanes = []
    for _ in range(Xoshiro256StarStar.LANES):
        state = []
        for _ in range(4):
            sm = (sm + 0x9E3779B97F4A7C15) & mask
            z = sm
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
            state.append(z ^ (z >> 31))
        lanes.append(state)
    s = lanes[0]
    rotl = lambda x, k: ((x << k) | (x >> (64 - k))) & mask  # noqa: E731
    out = []
    for _ in range(count):
        out.append((rotl((s[1] * 5) & mask, 7) * 9) & mask)
        t = (s[1] << 17) & mask
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
    return out


def test_generator_matches_scalar_reference():
    rng = Xoshiro256StarStar(2024)
    stream = rng.next_u64(Xoshiro256StarStar.LANES * 5)
    lane0 = stream[:: Xoshiro256StarStar.LANES].tolist()
    assert lane0 == _xoshiro_reference(2024, 5)


def test_generator_buffering_is_transparent():
    a = Xoshiro256StarStar(7).next_u64(1000)
    b = Xoshiro256StarStar(7)
    parts = np.concatenate([b.next_u64(3), b.next_u64(400), b.next_u64(597)])
    np.testing.assert_array_equal(a, parts)


def test_generator_distributions():
    rng = Xoshiro256StarStar(1)
    u = rng.random(20000)
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01
    z = rng.normal(20001)
    assert len(z) == 20001
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1.0) < 0.03


def test_one_object_scene():
    scene = generate_scene(SceneSpec(seed=1, n_objects=1))
    assert len(cluster_grid(scene.cloud)) == 1
    assert len(scene.gt) == 1


def test_eight_object_scene():
    scene = generate_scene(SceneSpec(seed=12, n_objects=8))
    assert len(cluster_grid(scene.cloud)) == 8


@pytest.mark.parametrize("noise", [0.0, DEFAULT_TAU / 12, DEFAULT_TAU / 6])
def test_separation_guarantee(noise):
    for spec in suite_specs(range(100, 106), noise_sigma=noise):
        scene = generate_scene(spec)
        assert len(cluster_grid(scene.cloud)) == spec.n_objects


def test_same_seed_is_identical():
    a, b = generate_scene(SceneSpec(seed=5)), generate_scene(SceneSpec(seed=5))
    assert a.cloud == b.cloud and a.image == b.image and a.gt == b.gt
    assert a.correspondences == b.correspondences and a.projection == b.projection
    assert generate_scene(SceneSpec(seed=6)).cloud != a.cloud


def test_scene_invariants():
    for spec in suite_specs(range(1, 7)):
        scene = generate_scene(spec)
        assert all(g.bbox.inside(spec.img_w, spec.img_h) for g in scene.gt)
        assert len(scene.correspondences) == 12
        assert reprojection_rms(scene.projection, scene.correspondences) < 1e-8
        assert set(g.label for g in scene.gt) <= set(spec.palette)
        depth = scene.cloud.points[:, 2]
        assert depth.min() >= 1.0 and depth.max() <= 4.0


def test_ground_truth_boxes_do_not_overlap():
    scene = generate_scene(SceneSpec(seed=3, n_objects=8))
    boxes = [g.bbox for g in scene.gt]
    for i, a in enumerate(boxes):
        for b in boxes[i + 1 :]:
            assert a.x_max <= b.x_min or b.x_max <= a.x_min or a.y_max <= b.y_min or b.y_max <= a.y_min


def test_rendering_is_flat_colored():
    spec = SceneSpec(seed=9, n_objects=3)
    scene = generate_scene(spec)
    px = scene.image.pixels
    assert px[0, 0].tolist() == list(BACKGROUND)
    for g in scene.gt:
        b = g.bbox
        centre = px[(b.y_min + b.y_max) // 2, (b.x_min + b.x_max) // 2]
        assert centre.tolist() == list(spec.palette[g.label])


def test_floor_adds_points_but_no_ground_truth():
    plain = generate_scene(SceneSpec(seed=4, n_objects=3))
    floored = generate_scene(SceneSpec(seed=4, n_objects=3, floor=True))
    assert len(floored.cloud) > len(plain.cloud)
    assert floored.gt == plain.gt


def test_placement_error():
    with pytest.raises(PlacementError):
        generate_scene(SceneSpec(seed=1, n_objects=60))


@pytest.mark.parametrize(
    "bad",
    [dict(n_objects=0), dict(size_range=(0.0, 0.1)), dict(palette={}), dict(kinds=("cone",)),
     dict(noise_sigma=-1.0), dict(spacing=0.05)],
)
def test_spec_validation(bad):
    with pytest.raises(ConfigError):
        SceneSpec(**bad)


def test_write_read_round_trip(tmp_path):
    scene = generate_scene(SceneSpec(seed=8, n_objects=4), frame="f8")
    write_scene(scene, tmp_path / "s")
    back = read_scene(tmp_path / "s")
    assert back.cloud == scene.cloud
    assert back.image == scene.image
    assert back.gt == scene.gt and back.frame == "f8"
    assert back.correspondences == scene.correspondences
    assert back.projection.allclose(scene.projection, atol=1e-9)
    assert reprojection_rms(solve_projection_dlt(back.correspondences), scene.correspondences) < 1e-8


def test_write_refuses_to_overwrite(tmp_path):
    a = generate_scene(SceneSpec(seed=1, n_objects=1))
    b = generate_scene(SceneSpec(seed=2, n_objects=1))
    write_scene(a, tmp_path)
    with pytest.raises(FileExistsError):
        write_scene(b, tmp_path)
    write_scene(b, tmp_path, force=True)
    assert read_scene(tmp_path).cloud == b.cloud


def test_write_empty_path():
    with pytest.raises(OSError):
        write_scene(generate_scene(SceneSpec(seed=1, n_objects=1)), "")


def test_pinned_digest(tmp_path):
    write_scene(generate_scene(SceneSpec(seed=42), frame="scene_0042"), tmp_path)
    h = hashlib.sha256()
    for name in SCENE_FILES:
        h.update(name.encode())
        h.update((tmp_path / name).read_bytes())
    assert h.hexdigest() == SEED_42_DIGEST


def test_suite_object_counts_cycle():
    assert [s.n_objects for s in suite_specs(range(1, 31))][:8] == [3, 4, 5, 6, 7, 8, 3, 4]
    assert {s.n_objects for s in suite_specs(range(5), objects=2)} == {2}


def test_two_blob_cloud():
    cloud = two_blob_cloud(20_000, seed=3)
    assert len(cloud) == 20_000
    assert [len(c) for c in cluster_grid(cloud)] == [10_000, 10_000]
