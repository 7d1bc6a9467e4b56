"""
Tests for the DendSOM layer: tiling, training steps and the rewind clock
"""

import numpy as np
import pytest

from dendsom import DendSomModel, TilingSpec, extract_receptive_fields, tile_count
from som_core import DecaySchedule, SomGrid, find_bmu, update_weights


def sharp_schedule(**kwargs):
    """Radius small enough that only the BMU moves noticeably"""
    params = {"alpha0": 0.95, "sigma0": 0.05, "lambda_": 1000.0, "alpha_crit": 0.005}
    params.update(kwargs)
    return DecaySchedule(**params)


def random_stream(n, side=6, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(n, side, side)), rng.integers(0, 4, size=n)


class TestTiling:
    """Test receptive field geometry"""

    @pytest.mark.parametrize(
        "n,p,s,expected", [(28, 10, 3, 7), (32, 4, 2, 15), (28, 8, 4, 6), (28, 28, 5, 1)]
    )
    def test_tile_count(self, n, p, s, expected):
        """Test tile counts of the published architectures"""
        assert tile_count(n, p, s) == expected

    def test_patch_larger_than_image(self):
        """Test p > n is rejected"""
        with pytest.raises(ValueError, match="exceeds"):
            tile_count(4, 5, 1)

    def test_tiling_properties(self):
        """Test map count and patch length of the MNIST architecture"""
        tiling = TilingSpec(28, 28, 10, 10, 3, 3)
        assert tiling.n_maps == 49
        assert tiling.patch_dim == 100

    def test_whole_image_tiling(self):
        """Test a single tile returns the flattened image"""
        image = np.arange(9.0).reshape(3, 3)
        patches = extract_receptive_fields(image, TilingSpec.whole_image(3, 3))
        assert patches.shape == (1, 9)
        np.testing.assert_array_equal(patches[0], np.arange(9.0))

    def test_patch_order(self):
        """Test 4x4 image with 2x2 patches at stride 2"""
        image = np.arange(16.0).reshape(4, 4)
        patches = extract_receptive_fields(image, TilingSpec(4, 4, 2, 2, 2, 2))
        assert patches.shape == (4, 4)
        assert patches[0].tolist() == [0, 1, 4, 5]
        assert patches[1].tolist() == [2, 3, 6, 7]
        assert patches[3].tolist() == [10, 11, 14, 15]

    def test_overlapping_stride(self):
        """Test stride 1 windows overlap"""
        image = np.arange(9.0).reshape(3, 3)
        patches = extract_receptive_fields(image, TilingSpec(3, 3, 2, 2, 1, 1))
        assert patches.tolist() == [[0, 1, 3, 4], [1, 2, 4, 5], [3, 4, 6, 7], [4, 5, 7, 8]]

    def test_shape_mismatch(self):
        """Test image of the wrong size is rejected"""
        with pytest.raises(ValueError, match="tiling expects"):
            extract_receptive_fields(np.zeros((5, 4)), TilingSpec(4, 4, 2, 2))


class TestTrainStep:
    """Test one presentation of a labeled sample"""

    def test_matching_unit_is_counted(self, frozen_schedule):
        """Test unit aligned with the image gets the hit"""
        weights = np.array([[[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]])
        model = DendSomModel(TilingSpec.whole_image(2, 2), 1, 3, 3, frozen_schedule, weights)
        model.train_step(np.array([[1.0, 0.0], [0.0, 0.0]]), label=2)
        assert model.hit_matrix(0).counts[2, 1] == 1
        assert model.hit_matrix(0).total == 1

    def test_label_out_of_range(self, random_model):
        """Test labels outside the label space are rejected"""
        with pytest.raises(ValueError, match="outside"):
            random_model.train_step(np.zeros((6, 6)), label=4)

    def test_clock_advances(self, random_model):
        """Test every step advances the shared clock by one"""
        images, labels = random_stream(3)
        for image, label in zip(images, labels):
            random_model.train_step(image, int(label))
        assert random_model.schedule.t == 3

    @pytest.mark.parametrize("rule", ["euclidean", "cosine"])
    def test_repeated_sample_keeps_bmu(self, rule):
        """Test a repeated sample hits the same units twice"""
        tiling = TilingSpec(6, 6, 3, 3, 1, 1)
        model = DendSomModel.create(tiling, 3, 3, 2, sharp_schedule(), seed=4, bmu_rule=rule)
        image = np.random.default_rng(9).uniform(0.0, 1.0, size=(6, 6))
        first = model.bmus(image)
        model.train_step(image, 1)
        second = model.bmus(image)
        model.train_step(image, 1)
        np.testing.assert_array_equal(first, second)
        maps = np.arange(model.n_maps)
        assert np.all(model.hits[maps, 1, first] == 2)

    @pytest.mark.parametrize("rule", ["euclidean", "cosine"])
    def test_stacked_update_matches_per_map_updates(self, schedule, rule):
        """Test the vectorized step equals updating each map on its own"""
        tiling = TilingSpec(6, 6, 3, 3, 1, 1)
        model = DendSomModel.create(tiling, 3, 3, 4, schedule, seed=1, bmu_rule=rule)
        grids = model.grids
        image = np.random.default_rng(2).uniform(0.0, 1.0, size=(6, 6))
        patches = extract_receptive_fields(image, tiling)

        expected = []
        for grid, patch in zip(grids, patches):
            bmu = find_bmu(patch, grid, rule)
            expected.append(update_weights(grid, patch, bmu, schedule.copy()).weights)
        model.train_step(image, 0)

        np.testing.assert_allclose(model.weights, np.stack(expected), rtol=1e-12, atol=0)

    def test_grids_are_copies(self, random_model):
        """Test editing an exported grid leaves the model untouched"""
        grid = random_model.grids[0]
        assert isinstance(grid, SomGrid)
        grid.weights[:] = 0.0
        assert random_model.weights[0].any()

    def test_hit_matrix_is_read_only(self, random_model):
        """Test hit matrix views cannot be written"""
        with pytest.raises(ValueError):
            random_model.hit_matrix(0).counts[0, 0] = 5


class TestRewind:
    """Test the clock rewind"""

    def test_iter_crit_default(self):
        """Test rewind period of the published schedule"""
        assert sharp_schedule().iter_crit == 5247

    def test_halves_clock(self, random_model):
        """Test r_exp=2 at t=5247 rewinds to 2623"""
        random_model.schedule = sharp_schedule(r_exp=2, t=5247)
        random_model.maybe_rewind_schedule(5247)
        assert random_model.schedule.t == 2623

    def test_r_exp_one_keeps_clock(self, random_model):
        """Test r_exp=1 leaves t unchanged"""
        random_model.schedule = sharp_schedule(r_exp=1, t=5247)
        random_model.maybe_rewind_schedule(2 * 5247)
        assert random_model.schedule.t == 5247

    def test_off_period_step(self, random_model):
        """Test steps that are not multiples of iter_crit do nothing"""
        random_model.schedule = sharp_schedule(r_exp=2, t=100)
        random_model.maybe_rewind_schedule(5246)
        assert random_model.schedule.t == 100

    def test_fit_rewinds_at_period(self, random_model):
        """Test fit rewinds when the step count reaches iter_crit"""
        random_model.schedule = DecaySchedule(
            alpha0=0.95, sigma0=1.5, lambda_=10.0, alpha_crit=0.5, r_exp=2
        )
        assert random_model.schedule.iter_crit == 6
        images, labels = random_stream(6)
        random_model.fit(images, labels)
        assert random_model.schedule.t == 3

    def test_fit_counts_from_start_step(self, random_model):
        """Test the rewind check continues across calls"""
        random_model.schedule = DecaySchedule(
            alpha0=0.95, sigma0=1.5, lambda_=10.0, alpha_crit=0.5, r_exp=2
        )
        images, labels = random_stream(3)
        random_model.fit(images, labels, start_step=3)
        assert random_model.schedule.t == 1


class TestFit:
    """Test single-pass training"""

    def test_hit_conservation(self, random_model):
        """Test every map counts exactly one hit per sample"""
        images, labels = random_stream(25)
        random_model.fit(images, labels)
        totals = random_model.hits.sum(axis=(1, 2))
        assert totals.tolist() == [25] * random_model.n_maps
        assert random_model.samples_seen == 25

    def test_label_rows_match_label_counts(self, random_model):
        """Test per-label row sums equal the label frequencies"""
        images, labels = random_stream(25)
        random_model.fit(images, labels)
        expected = np.bincount(labels, minlength=4)
        for j in range(random_model.n_maps):
            np.testing.assert_array_equal(random_model.hits[j].sum(axis=1), expected)

    def test_zero_iterations(self, random_model):
        """Test n_iter=0 leaves the model untouched"""
        before = random_model.weights.copy()
        images, labels = random_stream(5)
        random_model.fit(images, labels, n_iter=0)
        np.testing.assert_array_equal(random_model.weights, before)
        assert not random_model.is_trained

    def test_partial_stream(self, random_model):
        """Test n_iter uses the leading samples only"""
        images, labels = random_stream(10)
        random_model.fit(images, labels, n_iter=4)
        assert random_model.samples_seen == 4

    def test_empty_stream(self, random_model):
        """Test an empty stream is rejected"""
        with pytest.raises(ValueError, match="empty"):
            random_model.fit(np.zeros((0, 6, 6)), [])

    def test_n_iter_beyond_stream(self, random_model):
        """Test fit never makes a second pass"""
        images, labels = random_stream(3)
        with pytest.raises(ValueError, match="single pass"):
            random_model.fit(images, labels, n_iter=4)

    def test_determinism(self, schedule):
        """Test two seeded runs end bit-identical"""
        tiling = TilingSpec(6, 6, 3, 3, 1, 1)
        images, labels = random_stream(30, seed=8)
        models = [
            DendSomModel.create(tiling, 3, 3, 4, schedule.copy(), seed=21).fit(images, labels)
            for _ in range(2)
        ]
        np.testing.assert_array_equal(models[0].weights, models[1].weights)
        np.testing.assert_array_equal(models[0].hits, models[1].hits)

    def test_different_seeds_differ(self, schedule):
        """Test initialization depends on the seed"""
        tiling = TilingSpec(6, 6, 3, 3, 1, 1)
        a = DendSomModel.create(tiling, 3, 3, 4, schedule.copy(), seed=1)
        b = DendSomModel.create(tiling, 3, 3, 4, schedule.copy(), seed=2)
        assert not np.array_equal(a.weights, b.weights)

    def test_bmus_many_matches_single(self, random_model):
        """Test batched inference equals per-image inference"""
        images, labels = random_stream(7)
        random_model.fit(images, labels)
        batched = random_model.bmus_many(images)
        for image, row in zip(images, batched):
            np.testing.assert_array_equal(random_model.bmus(image), row)
