import numpy as np
import pytest

from mtal.errors import ConfigurationError
from mtal.synthgen import (
    Dataset,
    WorldSpec,
    default_attribute_world,
    default_landmark_world,
    generate,
    generate_attribute_world,
    generate_landmark_world,
    landmark_labels_from_latents,
    attribute_labels_from_latents,
    rotation_matrix,
    split,
)


class TestLandmarkGeometry:
    def test_frontal_face_hides_nothing(self):
        spec = default_landmark_world()
        _, vis, _, _ = landmark_labels_from_latents(spec, gender=0, yaw=0.0)
        np.testing.assert_array_equal(vis, np.ones(spec.m))

    def test_left_side_hidden_at_plus_90(self):
        # independent geometric oracle: rotate each stored normal by the yaw
        # matrix and check the camera-facing component directly
        spec = default_landmark_world()
        _, vis, _, _ = landmark_labels_from_latents(spec, gender=0, yaw=90.0)
        rot = rotation_matrix(0.0, 0.0, 90.0)
        left_side = spec.template[:, 0] < 0
        for i in range(spec.m):
            camera_facing = (rot @ spec.normals[i])[2]
            assert (camera_facing > 0) == bool(vis[i])
        assert not vis[left_side].any()

    def test_visibility_switches_at_normal_tilt(self):
        spec = default_landmark_world()
        # left eye normal is tilted 30 degrees: hidden for yaw > 60
        _, vis_59, _, _ = landmark_labels_from_latents(spec, gender=0, yaw=59.9)
        _, vis_61, _, _ = landmark_labels_from_latents(spec, gender=0, yaw=60.1)
        assert vis_59[0] == 1.0 and vis_61[0] == 0.0

    def test_landmarks_inside_unit_square(self):
        spec = default_landmark_world()
        ds = generate_landmark_world(spec, 500, seed=3)
        assert (ds.labels.landmarks >= 0.0).all() and (ds.labels.landmarks <= 1.0).all()

    def test_gender_offsets_move_landmarks(self):
        spec = default_landmark_world()
        c0, _, _, _ = landmark_labels_from_latents(spec, gender=0, yaw=10.0)
        c1, _, _, _ = landmark_labels_from_latents(spec, gender=1, yaw=10.0)
        assert not np.array_equal(c0, c1)

    def test_discrete_pose_one_hot(self):
        spec = default_landmark_world()
        ds = generate_landmark_world(spec, 200, seed=4)
        pose = ds.labels.pose
        assert pose.shape[1] == 13
        np.testing.assert_array_equal(pose.sum(axis=1), np.ones(200))
        assert set(np.unique(pose)) == {0.0, 1.0}

    def test_continuous_pose_mode(self):
        spec = default_landmark_world(discrete_pose=False)
        ds = generate_landmark_world(spec, 100, seed=5)
        assert ds.labels.pose.shape == (100, 3)
        assert (np.abs(ds.labels.pose[:, 2]) <= 90.0).all()
        np.testing.assert_array_equal(ds.labels.pose[:, :2], np.zeros((100, 2)))


class TestMonteCarlo:
    def test_gender_rate_matches_prior(self):
        spec = default_landmark_world(gender_prior=0.4)
        ds = generate_landmark_world(spec, 100_000, seed=6)
        assert abs(ds.labels.gender.mean() - 0.4) < 0.01

    def test_attribute_correlation_designed(self):
        spec = default_attribute_world()
        ds = generate_attribute_world(spec, 100_000, seed=7)
        a = ds.labels.attributes
        (i, j, target), *_ = spec.designed_correlations
        observed = np.corrcoef(a[:, i], a[:, j])[0, 1]
        assert abs(observed - target) < 0.05

    def test_exclusive_group_exactly_one(self):
        spec = default_attribute_world()
        ds = generate_attribute_world(spec, 5000, seed=8)
        group = ds.labels.attributes[:, list(spec.exclusive_groups[0])]
        np.testing.assert_array_equal(group.sum(axis=1), np.ones(5000))


class TestDeterminism:
    def test_repeated_seed_bit_identical(self):
        spec = default_landmark_world()
        a = generate_landmark_world(spec, 50, seed=9)
        b = generate_landmark_world(spec, 50, seed=9)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels.landmarks, b.labels.landmarks)

    def test_per_index_streams_independent_of_count(self):
        # sample i of an n-sample run equals sample i of a longer run
        spec = default_landmark_world()
        short = generate_landmark_world(spec, 10, seed=10)
        long = generate_landmark_world(spec, 30, seed=10)
        assert np.array_equal(short.features, long.features[:10])

    def test_labels_rederivable_from_latents(self):
        spec = default_landmark_world()
        ds = generate_landmark_world(spec, 100, seed=11)
        for i in range(len(ds)):
            g, yaw, pitch, roll = ds.latents[i]
            coords, vis, pose, gender = landmark_labels_from_latents(
                spec, int(g), yaw, pitch, roll)
            assert np.array_equal(coords, ds.labels.landmarks[i])
            assert np.array_equal(vis, ds.labels.visibility[i])
            assert np.array_equal(pose, ds.labels.pose[i])
            assert np.array_equal(gender, ds.labels.gender[i])

    def test_attribute_labels_rederivable(self):
        spec = default_attribute_world()
        ds = generate_attribute_world(spec, 100, seed=12)
        for i in range(len(ds)):
            z = ds.latents[i, :spec.latent_factors]
            rederived = attribute_labels_from_latents(spec, z)
            assert np.array_equal(rederived, ds.labels.attributes[i])


class TestSplit:
    def test_half_split_counts(self):
        ds = generate_landmark_world(default_landmark_world(), 1000, seed=13)
        train, test = split(ds, 0.5, seed=1)
        assert len(train) == 500 and len(test) == 500

    def test_union_is_original_multiset(self):
        ds = generate_landmark_world(default_landmark_world(), 120, seed=14)
        train, test = split(ds, 0.75, seed=2)
        combined = np.vstack([train.features, test.features])
        assert combined.shape == ds.features.shape
        original = {tuple(row) for row in ds.features}
        recombined = {tuple(row) for row in combined}
        assert original == recombined

    def test_split_deterministic(self):
        ds = generate_landmark_world(default_landmark_world(), 100, seed=15)
        a1, b1 = split(ds, 0.6, seed=3)
        a2, b2 = split(ds, 0.6, seed=3)
        assert np.array_equal(a1.features, a2.features)
        assert np.array_equal(b1.features, b2.features)

    def test_fraction_bounds(self):
        ds = generate_landmark_world(default_landmark_world(), 10, seed=16)
        with pytest.raises(ConfigurationError):
            split(ds, 0.0, seed=0)
        with pytest.raises(ConfigurationError):
            split(ds, 1.0, seed=0)


class TestValidationAndErrors:
    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_landmark_world(default_landmark_world(), 0, seed=0)

    def test_zero_loading_row_rejected(self):
        spec = default_attribute_world()
        spec.loadings = spec.loadings.copy()
        spec.loadings[3] = 0.0
        with pytest.raises(ConfigurationError):
            spec.validate()

    def test_mixed_sign_coupling_required(self):
        spec = default_attribute_world()
        spec.loadings = np.abs(spec.loadings)
        with pytest.raises(ConfigurationError):
            spec.validate()

    def test_unknown_world_option(self):
        with pytest.raises(ConfigurationError):
            default_landmark_world(banana=3)

    def test_spec_hash_sensitive_to_options(self):
        a = default_landmark_world()
        b = default_landmark_world(feature_noise=0.5)
        assert a.spec_hash() != b.spec_hash()


class TestFileFormat:
    def test_round_trip_landmark(self, tmp_path):
        ds = generate_landmark_world(default_landmark_world(), 40, seed=17)
        path = tmp_path / "data.tsv"
        ds.save(path)
        back = Dataset.load(path)
        assert np.array_equal(back.features, ds.features)
        for f in ("landmarks", "visibility", "pose", "gender"):
            assert np.array_equal(getattr(back.labels, f), getattr(ds.labels, f))
        assert back.spec_hash == ds.spec_hash
        assert back.mode == "landmark" and back.m == 5 and back.discrete_pose

    def test_round_trip_attribute(self, tmp_path):
        ds = generate_attribute_world(default_attribute_world(), 25, seed=18)
        path = tmp_path / "attr.tsv"
        ds.save(path)
        back = Dataset.load(path)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.labels.attributes, ds.labels.attributes)

    def test_save_is_deterministic_text(self, tmp_path):
        ds = generate_landmark_world(default_landmark_world(), 10, seed=19)
        assert ds.to_text() == ds.to_text()

    def test_sample_accessor(self):
        ds = generate_landmark_world(default_landmark_world(), 5, seed=20)
        s = ds.sample(2)
        assert np.array_equal(s.features, ds.features[2])
        assert np.array_equal(s.labels.landmarks, ds.labels.landmarks[2])
