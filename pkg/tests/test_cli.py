import json
import os
import shutil

import numpy as np
import pytest

from hydra_sr.checkpoint import build_models, load_checkpoint, save_checkpoint
from hydra_sr.cli import build_parser, main
from hydra_sr.config import file_sha256
from hydra_sr.data import HSICube, load_cube, load_dataset, save_cube
from hydra_sr.metrics import mrae, read_pgm, read_table

TINY_MODEL = (
	"latent = 2\n"
	"teacher_width = 4\n"
	"se_ratio = 2\n"
	"student_width = 4\n"
	"heads = 1\n"
	"blocks = 1, 1, 1, 1\n"
	"ffn_expansion = 1\n"
)


def gen_data(out, seed=7, n=4):
	return main(["gen-data", "-o", str(out), "--h", "8", "--w", "8", "--b", "8", "--n", str(n),
				 "--materials", "2", "--seed", str(seed), "-q"])


def train(data, run, stage, config, *extra):
	return main(["train", "-D", str(data), "-o", str(run), "--stage", str(stage), "--config", config,
				 "--epochs", "1", "--batch-size", "64" if stage == 1 else "2", "-q", *extra])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
	""" Generated data plus a run directory trained through all three stages.
	"""
	root = tmp_path_factory.mktemp("hydra")
	config = root / "tiny.cfg"
	config.write_text(TINY_MODEL)
	data, run = root / "data", root / "run"
	assert gen_data(data) == 0
	for stage in (1, 2, 3):
		assert train(data, run, stage, str(config)) == 0
	return root, data, run, str(config)


class TestParser:

	def test_subcommands(self):
		args = build_parser().parse_args(["train", "-D", "d", "-o", "r", "--stage", "2", "--lr", "0.01", "-v"])
		assert (args.command, args.data_dir, args.out_dir, args.stage) == ("train", "d", "r", 2)
		assert args.learning_rate == 0.01 and args.verbose

	def test_stage_choices(self):
		with pytest.raises(SystemExit):
			build_parser().parse_args(["train", "-D", "d", "-o", "r", "--stage", "4"])


class TestGenData:

	def test_files_and_determinism(self, tmp_path):
		assert gen_data(tmp_path / "a") == 0
		assert gen_data(tmp_path / "b") == 0
		names = sorted(os.listdir(tmp_path / "a"))
		assert "cube_003.hsic" in names and "cube_003_rgb.hsic" in names
		assert "sensitivity.csv" in names and "manifest_gen_data.json" in names
		for name in names:
			if name.endswith(".hsic") or name.endswith(".csv"):
				assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

	def test_seed_changes_cubes(self, tmp_path):
		gen_data(tmp_path / "a", seed=1, n=1)
		gen_data(tmp_path / "b", seed=2, n=1)
		assert (tmp_path / "a" / "cube_000.hsic").read_bytes() != (tmp_path / "b" / "cube_000.hsic").read_bytes()

	def test_cubes_in_unit_range(self, workspace):
		_, data, _, _ = workspace
		for sample in load_dataset(str(data)):
			assert sample.cube.shape == (8, 8, 8)
			assert 0.0 <= sample.cube.values.min() and sample.cube.values.max() <= 1.0

	def test_too_few_bands(self, tmp_path):
		assert main(["gen-data", "-o", str(tmp_path), "--b", "3", "-q"]) == 2

	def test_drop_bands(self, tmp_path):
		code = main(["gen-data", "-o", str(tmp_path), "--h", "4", "--w", "4", "--b", "10", "--n", "1",
					 "--drop-bands", "0,9", "--noise", "0.01", "--noise-bands", "1:3", "-q"])
		assert code == 0
		assert load_cube(str(tmp_path / "cube_000.hsic")).bands == 8


class TestTrain:

	def test_stage_outputs(self, workspace):
		_, _, run, _ = workspace
		for stage in (1, 2, 3):
			for name in (f"stage{stage}.hydt", f"stage{stage}.state", f"loss_stage{stage}.csv"):
				assert (run / name).exists()
		meta, sections = load_checkpoint(str(run / "stage1.hydt"))
		assert meta["stage"] == 1 and meta["model"]["bands"] == 8
		assert list(sections) == ["teacher"]
		assert set(load_checkpoint(str(run / "stage3.hydt"))[1]) == {"teacher", "student"}
		losses = read_table(str(run / "loss_stage2.csv"))
		assert list(losses.columns) == ["epoch", "stage", "loss"]
		assert losses["stage"].tolist() == [2]
		with open(run / "manifest_train.json") as f:
			inputs = json.load(f)["inputs"]
		assert {"stage2.hydt", "cube_000.hsic", "cube_000_rgb.hsic", "cube_003_rgb.hsic"} <= set(inputs)

	def test_stage2_requires_stage1(self, tmp_path, workspace, capsys):
		_, data, _, config = workspace
		assert train(data, tmp_path / "fresh", 2, config) == 2
		assert "stage 1 checkpoint required" in capsys.readouterr().err

	def test_zero_epochs_is_identity(self, tmp_path, workspace):
		_, data, run, config = workspace
		copy = tmp_path / "run"
		copy.mkdir()
		(copy / "stage2.hydt").write_bytes((run / "stage2.hydt").read_bytes())
		assert train(data, copy, 3, config, "--epochs", "0") == 0
		_, before = load_checkpoint(str(copy / "stage2.hydt"))
		_, after = load_checkpoint(str(copy / "stage3.hydt"))
		for section in ("teacher", "student"):
			for name, values in before[section].items():
				assert np.array_equal(after[section][name], values)

	def test_resume_matches_uninterrupted_run(self, tmp_path, workspace):
		_, data, _, config = workspace
		split, straight = tmp_path / "split", tmp_path / "straight"
		assert train(data, split, 1, config, "--epochs", "4", "--until-epoch", "2") == 0
		assert read_table(str(split / "loss_stage1.csv"))["epoch"].tolist() == [1, 2]
		partial = file_sha256(str(split / "stage1.hydt"))
		assert train(data, split, 1, config, "--epochs", "4", "--resume") == 0
		assert train(data, straight, 1, config, "--epochs", "4") == 0
		assert read_table(str(split / "loss_stage1.csv"))["epoch"].tolist() == [1, 2, 3, 4]
		for name in ("stage1.hydt", "stage1.state", "loss_stage1.csv"):
			assert (split / name).read_bytes() == (straight / name).read_bytes()
		with open(split / "manifest_train.json") as f:
			assert json.load(f)["inputs"]["stage1.hydt"] == partial

	def test_negative_until_epoch(self, tmp_path, workspace):
		_, data, _, config = workspace
		assert train(data, tmp_path / "run", 1, config, "--until-epoch", "-1") == 2

	def test_resume_without_state(self, tmp_path, workspace):
		_, data, _, config = workspace
		assert train(data, tmp_path / "empty", 1, config, "--resume") == 2

	def test_missing_data(self, tmp_path, workspace):
		_, _, _, config = workspace
		(tmp_path / "nodata").mkdir()
		assert train(tmp_path / "nodata", tmp_path / "run", 1, config) == 3


class TestEval:

	def test_metrics_and_artifacts(self, tmp_path, workspace):
		_, data, run, _ = workspace
		out = tmp_path / "eval"
		code = main(["eval", "-D", str(data), "-o", str(out), "--ckpt", str(run / "stage3.hydt"),
					 "--split", "all", "--pixels", "3", "-q"])
		assert code == 0
		table = read_table(str(out / "metrics.csv"))
		assert table["image"].tolist() == ["cube_000", "cube_001", "cube_002", "cube_003", "mean"]
		assert {"mrae", "rmse", "psnr", "teacher_mrae", "teacher_psnr"} <= set(table.columns)
		assert table.iloc[-1]["mrae"] == pytest.approx(table["mrae"].iloc[:-1].mean())
		assert read_pgm(str(out / "cube_000_heatmap.pgm")).shape == (8, 8)
		assert (out / "cube_000_heatmap.ppm").exists()
		spectra = read_table(str(out / "cube_000_spectra.csv"))
		assert len(spectra) == 3 * 8
		with open(out / "manifest_eval.json") as f:
			manifest = json.load(f)
		assert set(manifest["inference_ms"]) == {"cube_000", "cube_001", "cube_002", "cube_003"}
		assert manifest["flops"] > 0

	def test_metrics_use_clamped_reconstruction(self, tmp_path, workspace):
		_, data, run, _ = workspace
		meta, sections = load_checkpoint(str(run / "stage3.hydt"))
		teacher, student = build_models(meta, sections)
		teacher.decoder.output.weight.data[...] = 0.0
		teacher.decoder.output.bias.data[...] = 5.0
		ckpt = tmp_path / "overshoot.hydt"
		save_checkpoint(str(ckpt), {"teacher": teacher, "student": student}, meta)
		out = tmp_path / "eval"
		assert main(["eval", "-D", str(data), "-o", str(out), "--ckpt", str(ckpt), "--split", "all", "-q"]) == 0
		table = read_table(str(out / "metrics.csv")).set_index("image")
		for sample in load_dataset(str(data)):
			expected = mrae(sample.cube, np.ones(sample.cube.shape))
			assert table.loc[sample.name, "mrae"] == pytest.approx(expected)
			assert table.loc[sample.name, "teacher_mrae"] == pytest.approx(expected)
		assert read_table(str(out / "cube_000_spectra.csv"))["pred"].max() == 1.0

	def test_manifest_hashes_dataset_files(self, tmp_path, workspace):
		_, data, run, _ = workspace
		copy, out = tmp_path / "data", tmp_path / "eval"
		shutil.copytree(data, copy)
		args = ["eval", "-D", str(copy), "-o", str(out), "--ckpt", str(run / "stage3.hydt"), "--split", "all", "-q"]

		def input_hashes():
			assert main(args) == 0
			with open(out / "manifest_eval.json") as f:
				return json.load(f)["inputs"]

		before = input_hashes()
		assert {"stage3.hydt", "cube_000.hsic", "cube_000_rgb.hsic", "cube_003.hsic"} <= set(before)
		values = load_cube(str(copy / "cube_000.hsic")).values.copy()
		values[0, 0, 0] = 0.25 if values[0, 0, 0] != 0.25 else 0.5
		save_cube(HSICube(values), str(copy / "cube_000.hsic"))
		after = input_hashes()
		assert after["cube_000.hsic"] != before["cube_000.hsic"]
		assert after["cube_001.hsic"] == before["cube_001.hsic"]

	def test_teacher_only_checkpoint_rejected(self, tmp_path, workspace):
		_, data, run, _ = workspace
		code = main(["eval", "-D", str(data), "-o", str(tmp_path), "--ckpt", str(run / "stage1.hydt"), "-q"])
		assert code == 2

	def test_corrupt_checkpoint(self, tmp_path, workspace):
		_, data, _, _ = workspace
		bad = tmp_path / "bad.hydt"
		bad.write_bytes(b"HYDX0000")
		assert main(["eval", "-D", str(data), "-o", str(tmp_path), "--ckpt", str(bad), "-q"]) == 3


class TestReconstructAndPlot:

	def test_reconstruct_clamps(self, tmp_path, workspace):
		_, data, run, _ = workspace
		out = tmp_path / "cube.hsic"
		code = main(["reconstruct", "--rgb", str(data / "cube_000_rgb.hsic"), "--ckpt", str(run / "stage3.hydt"),
					 "-o", str(out), "-q"])
		assert code == 0
		cube = load_cube(str(out))
		assert cube.shape == (8, 8, 8)
		assert cube.values.min() >= 0.0 and cube.values.max() <= 1.0

	def test_plot(self, tmp_path, workspace):
		_, data, _, _ = workspace
		code = main(["plot", "--gt", str(data / "cube_000.hsic"), "--pred", str(data / "cube_001.hsic"),
					 "-o", str(tmp_path), "-q"])
		assert code == 0
		assert read_pgm(str(tmp_path / "heatmap.pgm")).shape == (8, 8)
		assert len(read_table(str(tmp_path / "spectra.csv"))) == 6 * 8

	def test_plot_shape_mismatch(self, tmp_path, workspace):
		_, data, _, _ = workspace
		other = tmp_path / "other"
		main(["gen-data", "-o", str(other), "--h", "8", "--w", "8", "--b", "9", "--n", "1", "-q"])
		code = main(["plot", "--gt", str(data / "cube_000.hsic"), "--pred", str(other / "cube_000.hsic"),
					 "-o", str(tmp_path), "-q"])
		assert code == 2
