import struct

import numpy as np
import pytest

from hydra_sr.data import (
	MAGIC,
	HSICube,
	RGBImage,
	add_band_noise,
	drop_bands,
	export_sensitivity_csv,
	generate_synthetic_cube,
	hsi_to_rgb,
	load_cube,
	load_dataset,
	load_rgb,
	read_sensitivity_csv,
	save_cube,
	save_rgb,
	sensitivity_matrix,
	split_dataset,
)
from hydra_sr.errors import (
	BadMagicError,
	ConfigError,
	CubeFormatError,
	DataError,
	DimensionError,
	DimensionOverflowError,
	TruncatedPayloadError,
	UnsupportedVersionError,
)


def header(version=1, h=1, w=1, b=4, magic=MAGIC):
	return struct.pack("<4sIIII", magic, version, h, w, b)


class TestSynthetic:

	def test_same_seed_same_cube(self):
		a = generate_synthetic_cube(7, 16, 16, 31, 4)
		b = generate_synthetic_cube(7, 16, 16, 31, 4)
		assert a.equals(b)
		assert not a.equals(generate_synthetic_cube(8, 16, 16, 31, 4))

	def test_single_material_is_one_spectrum(self):
		cube = generate_synthetic_cube(3, 6, 5, 12, 1)
		pixels = cube.pixels()
		assert np.array_equal(pixels, np.broadcast_to(pixels[0], pixels.shape))

	@pytest.mark.parametrize("seed", range(10))
	def test_values_in_unit_range(self, seed):
		cube = generate_synthetic_cube(seed, 8, 8, 16, 3)
		assert cube.shape == (8, 8, 16)
		assert cube.values.min() >= 0.0 and cube.values.max() <= 1.0

	def test_values_are_float32_exact(self):
		cube = generate_synthetic_cube(0, 4, 4, 8, 2)
		assert np.array_equal(cube.values, cube.values.astype(np.float32).astype(np.float64))

	def test_rejects_zero_materials(self):
		with pytest.raises(ConfigError):
			generate_synthetic_cube(0, 4, 4, 8, 0)

	def test_band_noise_only_touches_listed_range(self):
		cube = generate_synthetic_cube(1, 6, 6, 10, 2)
		noisy = add_band_noise(cube, 0.05, [(2, 4)], seed=3)
		assert np.array_equal(noisy.values[:, :, :2], cube.values[:, :, :2])
		assert np.array_equal(noisy.values[:, :, 4:], cube.values[:, :, 4:])
		assert not np.array_equal(noisy.values[:, :, 2:4], cube.values[:, :, 2:4])
		assert noisy.values.min() >= 0.0 and noisy.values.max() <= 1.0

	def test_band_noise_range_checked(self):
		with pytest.raises(ConfigError):
			add_band_noise(generate_synthetic_cube(1, 2, 2, 6, 1), 0.1, [(4, 9)])

	def test_drop_bands(self):
		cube = generate_synthetic_cube(2, 3, 3, 8, 2)
		dropped = drop_bands(cube, [0, 7, 7])
		assert dropped.bands == 6
		assert np.array_equal(dropped.values, cube.values[:, :, 1:7])
		with pytest.raises(ConfigError):
			drop_bands(cube, range(5))
		with pytest.raises(ConfigError):
			drop_bands(cube, [8])


class TestRGB:

	def test_sensitivity_rows_are_stochastic(self):
		s = sensitivity_matrix(31)
		assert s.shape == (3, 31)
		assert np.allclose(s.sum(axis=1), 1.0)
		assert np.all(s >= 0)
		# red peaks at long wavelengths, blue at short
		assert s[0].argmax() > s[1].argmax() > s[2].argmax()

	def test_constant_cube_projects_to_constant(self):
		cube = HSICube(np.full((4, 5, 31), 0.3))
		assert np.allclose(hsi_to_rgb(cube, sensitivity_matrix(31)).values, 0.3)

	def test_band_indicator_picks_column(self):
		s = sensitivity_matrix(16)
		values = np.zeros((2, 2, 16))
		values[..., 9] = 1.0
		rgb = hsi_to_rgb(HSICube(values), s).values
		assert np.allclose(rgb, np.broadcast_to(s[:, 9], (2, 2, 3)))

	def test_matches_explicit_sum(self):
		cube = generate_synthetic_cube(5, 4, 3, 12, 3)
		s = sensitivity_matrix(12)
		rgb = hsi_to_rgb(cube, s).values
		for i in range(4):
			for j in range(3):
				for c in range(3):
					expected = sum(s[c, k] * cube.values[i, j, k] for k in range(12))
					assert abs(rgb[i, j, c] - expected) < 1e-12

	def test_projection_is_linear(self):
		s = sensitivity_matrix(10)
		a = generate_synthetic_cube(1, 3, 3, 10, 2)
		b = generate_synthetic_cube(2, 3, 3, 10, 2)
		mixed = hsi_to_rgb(HSICube(0.25 * a.values + 0.75 * b.values), s).values
		expected = 0.25 * hsi_to_rgb(a, s).values + 0.75 * hsi_to_rgb(b, s).values
		assert np.allclose(mixed, expected, atol=1e-12)

	def test_band_mismatch(self):
		with pytest.raises(DimensionError):
			hsi_to_rgb(HSICube(np.zeros((2, 2, 8))), sensitivity_matrix(9))

	def test_sensitivity_csv_round_trip(self, tmp_path):
		s = sensitivity_matrix(31)
		path = str(tmp_path / "sensitivity.csv")
		export_sensitivity_csv(s, path)
		assert np.array_equal(read_sensitivity_csv(path), s)

	def test_rgb_image_shape_checked(self):
		with pytest.raises(DimensionError):
			RGBImage(np.zeros((4, 4, 2)))


class TestCubeFile:

	@pytest.mark.parametrize("shape", [(1, 1, 4), (8, 8, 31), (3, 5, 7)])
	def test_round_trip_is_bit_exact(self, tmp_path, shape):
		cube = generate_synthetic_cube(0, *shape, 2)
		path = str(tmp_path / "cube.hsic")
		save_cube(cube, path)
		assert load_cube(path).equals(cube)

	def test_payload_is_band_fastest(self, tmp_path):
		values = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
		path = tmp_path / "cube.hsic"
		save_cube(HSICube(values), str(path))
		raw = path.read_bytes()
		assert raw[:20] == header(h=2, w=3, b=4)
		assert np.array_equal(np.frombuffer(raw[20:], dtype="<f4"), np.arange(24))

	def test_rgb_round_trip(self, tmp_path):
		image = RGBImage(np.random.default_rng(0).uniform(size=(4, 4, 3)).astype(np.float32))
		path = str(tmp_path / "image_rgb.hsic")
		save_rgb(image, path)
		assert np.array_equal(load_rgb(path).values, image.values)

	def test_rgb_saved_at_float32_precision(self, tmp_path):
		cube = generate_synthetic_cube(3, 4, 4, 8, 2)
		image = hsi_to_rgb(cube, sensitivity_matrix(8))
		path = str(tmp_path / "cube_rgb.hsic")
		save_rgb(image, path)
		back = load_rgb(path).values
		assert np.array_equal(back, image.values.astype(np.float32).astype(np.float64))
		assert np.abs(back - image.values).max() <= 6e-8

	@pytest.mark.parametrize("raw,error", [
		(b"HSIX" + header()[4:] + bytes(16), BadMagicError),
		(b"HS", BadMagicError),
		(header()[:12], TruncatedPayloadError),
		(header() + bytes(15), TruncatedPayloadError),
		(header() + bytes(17), TruncatedPayloadError),
		(header(version=2) + bytes(16), UnsupportedVersionError),
		(header(h=0), DimensionOverflowError),
		(header(h=1 << 16, w=1 << 16, b=4), DimensionOverflowError),
	])
	def test_malformed_files(self, tmp_path, raw, error):
		path = tmp_path / "bad.hsic"
		path.write_bytes(raw)
		with pytest.raises(error):
			load_cube(str(path))

	def test_format_errors_are_data_errors(self, tmp_path):
		path = tmp_path / "bad.hsic"
		path.write_bytes(b"nope")
		with pytest.raises(CubeFormatError) as info:
			load_cube(str(path))
		assert isinstance(info.value, DataError)
		assert info.value.exit_code == 3

	def test_missing_file(self, tmp_path):
		with pytest.raises(DataError):
			load_cube(str(tmp_path / "missing.hsic"))

	def test_rgb_requires_three_channels(self, tmp_path):
		path = str(tmp_path / "cube.hsic")
		save_cube(HSICube(np.zeros((2, 2, 4))), path)
		with pytest.raises(DimensionError):
			load_rgb(path)


class TestDataset:

	def write_pair(self, directory, name, seed):
		cube = generate_synthetic_cube(seed, 4, 4, 8, 2)
		save_cube(cube, str(directory / f"{name}.hsic"))
		save_rgb(hsi_to_rgb(cube, sensitivity_matrix(8)), str(directory / f"{name}_rgb.hsic"))

	def test_pairs_sorted_and_unpaired_skipped(self, tmp_path, caplog):
		self.write_pair(tmp_path, "cube_001", 1)
		self.write_pair(tmp_path, "cube_000", 0)
		save_cube(generate_synthetic_cube(2, 4, 4, 8, 2), str(tmp_path / "lonely.hsic"))
		samples = load_dataset(str(tmp_path))
		assert [s.name for s in samples] == ["cube_000", "cube_001"]
		assert samples[0].cube.equals(generate_synthetic_cube(0, 4, 4, 8, 2))
		assert "Skipping" in caplog.text

	def test_empty_directory(self, tmp_path):
		with pytest.raises(DataError):
			load_dataset(str(tmp_path))

	def test_split_sizes_and_determinism(self):
		items = list(range(10))
		train, val = split_dataset(items, seed=4)
		assert (len(train), len(val)) == (8, 2)
		assert sorted(train + val) == items
		assert split_dataset(items, seed=4) == (train, val)

	@pytest.mark.parametrize("fractions", [(0.5, 0.4), (1.0, 0.0), (0.7, 0.2, 0.1)])
	def test_split_rejects_bad_fractions(self, fractions):
		with pytest.raises(ConfigError):
			split_dataset(list(range(10)), fractions)
