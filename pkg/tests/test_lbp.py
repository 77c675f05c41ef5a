import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import is_uniform_by_rotation, naive_lbp_features, naive_pixel_code, uniform_bins_bruteforce
from salfold.errors import BlockTooSmall, CorruptFeatureFile, FingerprintMismatch, OutOfBounds
from salfold.lbp import (
    LbpParams,
    extract_features,
    lbp_code,
    lbp_image,
    load_features,
    neighbor_offsets,
    save_features,
    uniform_map,
)


def _ring(center, neighbours):
    """3x3 patch with the 8 neighbours given counter-clockwise from east."""
    e, ne, n, nw, w, sw, s, se = neighbours
    return np.array([[nw, n, ne], [w, center, e], [sw, s, se]], dtype=float)


class TestCode:
    def test_constant_all_bits(self):
        patch = np.full((5, 5), 42.0)
        assert lbp_code(patch, 2, 2, 1) == 255
        assert lbp_code(patch, 2, 2, 2) == 255
        assert lbp_code(patch, 2, 2, 1, sampling="square") == 255

    def test_hand_example_square(self):
        patch = _ring(100, (150, 90, 90, 90, 90, 90, 90, 150))
        assert lbp_code(patch, 1, 1, 1, sampling="square") == 129

    def test_hand_example_circular(self):
        # diagonals interpolate: NE ~ 103.3 >= 100 sets bit 1, SE ~ 133.3 keeps bit 7
        patch = _ring(100, (150, 90, 90, 90, 90, 90, 90, 150))
        assert lbp_code(patch, 1, 1, 1) == 131

    def test_bright_centre(self):
        patch = _ring(200, (0,) * 8)
        assert lbp_code(patch, 1, 1, 1) == 0
        assert lbp_code(patch, 1, 1, 1, sampling="square") == 0

    def test_bit_order_counter_clockwise(self):
        for k in range(8):
            vals = [0] * 8
            vals[k] = 255
            patch = _ring(100, vals)
            assert lbp_code(patch, 1, 1, 1, sampling="square") == 1 << k

    def test_offsets(self):
        offs = neighbor_offsets(2, 8, "circular")
        assert offs[0] == (0.0, 2.0)
        assert offs[2] == (-2.0, 0.0)
        assert offs[4] == (0.0, -2.0)
        assert offs[1][0] == pytest.approx(-2 ** 0.5) and offs[1][1] == pytest.approx(2 ** 0.5)

    @pytest.mark.parametrize("levels", [2, 256])
    def test_matches_reference_pixel_code(self, rng, levels):
        # two grey levels make flat neighbourhoods and exact ties common
        img = rng.integers(0, levels, (12, 12)).astype(float)
        for sampling in ("circular", "square"):
            for r in (1, 2):
                for y in range(2, 10):
                    for x in range(2, 10):
                        assert lbp_code(img, x, y, r, sampling=sampling) == naive_pixel_code(img, x, y, r, sampling)

    def test_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            lbp_code(np.zeros((5, 5)), 0, 2, 1)
        with pytest.raises(OutOfBounds):
            lbp_code(np.zeros((5, 5)), 2, 3, 2)


class TestUniform:
    def test_examples(self):
        assert uniform_map(0) == 0
        assert uniform_map(255) == 57
        assert uniform_map(0b01010101) == 58

    def test_census(self):
        uniform = [c for c in range(256) if is_uniform_by_rotation(c)]
        assert len(uniform) == 58
        assert sorted(uniform_map(c) for c in uniform) == list(range(58))
        assert all(uniform_map(c) == 58 for c in range(256) if c not in uniform)

    def test_matches_bruteforce_table(self):
        ref = uniform_bins_bruteforce()
        assert all(uniform_map(c) == ref[c] for c in range(256))


class TestFeatures:
    @pytest.mark.parametrize("n, dims", [(3, 1062), (4, 1888)])
    def test_dimensions(self, n, dims):
        img = np.random.default_rng(0).uniform(0, 255, (64, 64))
        assert LbpParams(grid=n).dims == dims
        assert extract_features(img, LbpParams(grid=n)).shape == (dims,)

    def test_constant_one_hot(self):
        f = extract_features(np.full((48, 48), 3.0), LbpParams()).reshape(-1, 59)
        assert np.all(f[:, 57] == 1.0)
        assert f.sum() == 18

    def test_slice_normalization(self, rng):
        f = extract_features(rng.uniform(0, 255, (50, 61)), LbpParams(grid=4)).reshape(-1, 59)
        assert np.allclose(f.sum(axis=1), 1.0, atol=1e-9)
        assert f.min() >= 0

    def test_block_too_small(self):
        with pytest.raises(BlockTooSmall):
            extract_features(np.zeros((16, 16)), LbpParams(grid=4))
        extract_features(np.zeros((20, 20)), LbpParams(grid=4))

    def test_code_image_matches_scalar(self, rng):
        img = rng.integers(0, 256, (20, 23)).astype(float)
        for r in (1, 2, 1.5):
            codes = lbp_image(img, r)
            m = int(np.ceil(r))
            for y in range(m, 20 - m, 3):
                for x in range(m, 23 - m, 2):
                    assert codes[y - m, x - m] == lbp_code(img, x, y, r)

    @pytest.mark.parametrize("sampling", ["circular", "square"])
    def test_naive_equivalence(self, rng, sampling):
        for shape in ((48, 48), (33, 41)):
            img = rng.integers(0, 256, shape).astype(float)
            got = extract_features(img, LbpParams(grid=3, sampling=sampling))
            assert np.array_equal(got, naive_lbp_features(img, (1, 2), 3, sampling))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.3, 3.0))
    def test_monotone_map_square(self, seed, gamma):
        img = np.random.default_rng(seed).permutation(np.arange(24 * 24, dtype=float)).reshape(24, 24)
        mapped = 1000.0 * (img / img.max()) ** gamma + 7.0
        p = LbpParams(grid=3, sampling="square")
        for r in (1, 2):
            assert np.array_equal(lbp_image(img, r, sampling="square"), lbp_image(mapped, r, sampling="square"))
        assert np.array_equal(extract_features(img, p), extract_features(mapped, p))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(-300, 300))
    def test_affine_map_circular(self, seed, power, offset):
        img = np.random.default_rng(seed).integers(0, 256, (24, 24)).astype(float)
        mapped = img * 2.0**power + offset
        assert np.array_equal(extract_features(img), extract_features(mapped))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            LbpParams(neighbors=16)
        with pytest.raises(ValueError):
            LbpParams(radii=(0,))
        assert LbpParams(grid=3).fingerprint() != LbpParams(grid=4).fingerprint()


class TestFeatureFile:
    def test_roundtrip(self, tmp_path, rng):
        X = rng.uniform(size=(5, 12))
        save_features(tmp_path / "f.txt", X, [0, 1, 2, 1, 0], "fp-a")
        X2, labels, fp = load_features(tmp_path / "f.txt", "fp-a")
        assert np.array_equal(X, X2) and labels.tolist() == [0, 1, 2, 1, 0] and fp == "fp-a"

    def test_fingerprint_mismatch(self, tmp_path, rng):
        save_features(tmp_path / "f.txt", rng.uniform(size=(2, 3)), [0, 1], "fp-a")
        with pytest.raises(FingerprintMismatch):
            load_features(tmp_path / "f.txt", "fp-b")

    def test_truncated(self, tmp_path, rng):
        p = tmp_path / "f.txt"
        save_features(p, rng.uniform(size=(4, 3)), [0, 1, 0, 1], "fp")
        p.write_text("\n".join(p.read_text().splitlines()[:3]))
        with pytest.raises(CorruptFeatureFile):
            load_features(p)
