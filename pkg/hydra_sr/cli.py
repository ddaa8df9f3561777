"""
hydra-sr command line.

	hydra-sr gen-data -o data --h 32 --w 32 --b 31 --n 8 --seed 7
	hydra-sr train -D data -o run --stage 1
	hydra-sr train -D data -o run --stage 2
	hydra-sr train -D data -o run --stage 3
	hydra-sr eval -D data -o run
	hydra-sr reconstruct --rgb data/cube_000_rgb.hsic --ckpt run/stage3.hydt -o cube.hsic
	hydra-sr plot --gt a.hsic --pred b.hsic -o plots
	hydra-sr ablate -D data -o ablation --latents 4,6,8 --variants

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import dataclasses
import logging
import os
import sys
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .ablation import latent_sweep, training_variants
from .checkpoint import (
	build_models,
	config_from_meta,
	load_checkpoint,
	load_train_state,
	model_meta,
	save_checkpoint,
	save_train_state,
)
from .config import RunConfig, input_hashes, load_run_config, write_manifest
from .data import (
	RGB_SUFFIX,
	Sample,
	add_band_noise,
	drop_bands,
	export_sensitivity_csv,
	generate_synthetic_cube,
	hsi_to_rgb,
	load_cube,
	load_dataset,
	load_rgb,
	save_cube,
	save_rgb,
	sensitivity_matrix,
	split_dataset,
)
from .errors import ConfigError, DataError, HydraError, PipelineOrderError
from .metrics import (
	evaluate,
	heatmap_to_color,
	heatmap_to_gray,
	hydra_flops,
	metrics_table,
	random_pixels,
	spectral_plot,
	write_pgm,
	write_ppm,
	write_table,
)
from .student import Student
from .teacher import Teacher
from .training import history_frame, reconstruct, stage2_targets, train_stage1, train_stage2, train_stage3

logger = logging.getLogger(__name__)

STAGE_SECTIONS = {1: ("teacher",), 2: ("teacher", "student"), 3: ("teacher", "student")}


def _int_list(value: str) -> Tuple[int, ...]:
	try:
		return tuple(int(v) for v in value.split(",") if v.strip())
	except ValueError:
		raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")


def _band_ranges(value: str) -> List[Tuple[int, int]]:
	""" "0:4,20:31" -> [(0, 4), (20, 31)]
	"""
	try:
		return [tuple(int(x) for x in part.split(":")) for part in value.split(",") if part.strip()]
	except ValueError:
		raise argparse.ArgumentTypeError(f"expected start:stop band ranges, got {value!r}")


def _ensure_dir(path: str) -> str:
	try:
		os.makedirs(path, exist_ok=True)
	except OSError as e:
		raise DataError(f"cannot create directory {path}: {e}") from e
	return path


def _stage_paths(out_dir: str, stage: int) -> Dict[str, str]:
	return {
		"checkpoint": os.path.join(out_dir, f"stage{stage}.hydt"),
		"state": os.path.join(out_dir, f"stage{stage}.state"),
		"loss": os.path.join(out_dir, f"loss_stage{stage}.csv"),
	}


def _split(config: RunConfig, samples: Sequence[Sample]) -> Tuple[List[Sample], List[Sample]]:
	if len(samples) < 2:
		return list(samples), list(samples)
	return split_dataset(samples, (config.train_fraction, 1.0 - config.train_fraction), config.seed)


def _sources(samples: Sequence[Sample]) -> List[str]:
	return [path for sample in samples for path in sample.sources]


def _check_bands(samples: Sequence[Sample], bands: int, source: str) -> None:
	found = sorted({s.cube.bands for s in samples})
	if found != [bands]:
		raise ConfigError(f"{source} expects {bands} bands, data has {found}")


##################################################

			##### SUBCOMMANDS #####

##################################################


def cmd_gen_data(args: argparse.Namespace, config: RunConfig) -> List[str]:
	if args.b < 4:
		raise ConfigError(f"band count must be >= 4, got {args.b}")
	if min(args.h, args.w, args.n) < 1:
		raise ConfigError("--h, --w and --n must be positive")
	out_dir = _ensure_dir(config.out_dir)
	outputs = []
	sensitivity = None
	for i in range(args.n):
		cube_seed = int(np.random.SeedSequence([config.seed, i]).generate_state(1)[0])
		cube = generate_synthetic_cube(cube_seed, args.h, args.w, args.b, args.materials)
		if args.noise > 0:
			cube = add_band_noise(cube, args.noise, args.noise_bands, seed=cube_seed)
		if args.drop_bands:
			cube = drop_bands(cube, args.drop_bands)
		if sensitivity is None:
			sensitivity = sensitivity_matrix(cube.bands)
		stem = os.path.join(out_dir, f"cube_{i:03d}")
		save_cube(cube, stem + ".hsic")
		save_rgb(hsi_to_rgb(cube, sensitivity), stem + RGB_SUFFIX)
		outputs += [stem + ".hsic", stem + RGB_SUFFIX]
	csv_path = os.path.join(out_dir, "sensitivity.csv")
	export_sensitivity_csv(sensitivity, csv_path)
	outputs.append(csv_path)
	logger.info(f"Wrote {args.n} cubes of {args.h}x{args.w}x{sensitivity.shape[1]} to {out_dir}")
	extra = {"generation": {"h": args.h, "w": args.w, "b": args.b, "n": args.n, "materials": args.materials,
							"noise": args.noise, "noise_bands": args.noise_bands, "drop_bands": args.drop_bands}}
	write_manifest(out_dir, config, outputs=outputs, extra=extra)
	return outputs


def cmd_train(args: argparse.Namespace, config: RunConfig) -> List[str]:
	stage = args.stage
	cfg = config.stages[stage]
	out_dir = _ensure_dir(config.out_dir)
	paths = _stage_paths(out_dir, stage)
	samples = load_dataset(config.data_dir)
	train, _ = _split(config, samples)

	state = None
	inputs = []
	if args.resume:
		if not (os.path.exists(paths["checkpoint"]) and os.path.exists(paths["state"])):
			raise PipelineOrderError(f"nothing to resume: {paths['checkpoint']} and {paths['state']} required")
		meta, sections = load_checkpoint(paths["checkpoint"])
		teacher, student = build_models(meta, sections)
		state = load_train_state(paths["state"])
		inputs = [paths["checkpoint"], paths["state"]]
		logger.info(f"Resuming stage {stage} at epoch {state.epoch}/{cfg.epochs}")
	elif stage == 1:
		model = config.model
		bands = samples[0].cube.bands
		if bands != model.bands:
			logger.info(f"Using the data's {bands} bands instead of the configured {model.bands}")
			model = dataclasses.replace(model, bands=bands).validate()
		teacher, student = Teacher(model, config.seed), None
	else:
		previous = _stage_paths(out_dir, stage - 1)["checkpoint"]
		if not os.path.exists(previous):
			raise PipelineOrderError(f"stage {stage - 1} checkpoint required (missing {previous})")
		meta, sections = load_checkpoint(previous)
		teacher, student = build_models(meta, sections)
		if teacher is None:
			raise ConfigError(f"{previous} has no teacher section")
		if student is None:
			student = Student(teacher.config, config.seed)
		inputs = [previous]

	_check_bands(samples, teacher.bands, "checkpoint")
	hashed = input_hashes(inputs + _sources(samples))
	until = args.until_epoch
	if until is not None and until < 0:
		raise ConfigError(f"--until-epoch must be >= 0, got {until}")
	if stage == 1:
		state = train_stage1(teacher, [s.cube for s in train], cfg, state, until_epoch=until)
	elif stage == 2:
		state = train_stage2(student, teacher, train, cfg, state, targets=stage2_targets(teacher, train),
							 until_epoch=until)
	else:
		state = train_stage3(student, teacher, train, cfg, state, until_epoch=until)

	sections = {"teacher": teacher}
	if stage > 1:
		sections["student"] = student
	save_checkpoint(paths["checkpoint"], sections, model_meta(teacher.config, stage, config.seed))
	save_train_state(paths["state"], state)
	write_table(history_frame({stage: state}), paths["loss"])
	outputs = [paths["checkpoint"], paths["state"], paths["loss"]]
	logger.info(f"Stage {stage} done after {state.epoch} epochs, wrote {paths['checkpoint']}")
	write_manifest(out_dir, config, hashed=hashed, outputs=outputs,
				   extra={"stage": stage, "final_loss": state.history[-1] if state.history else None})
	return outputs


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> List[str]:
	out_dir = _ensure_dir(config.out_dir)
	ckpt = args.ckpt or os.path.join(out_dir, "stage3.hydt")
	meta, sections = load_checkpoint(ckpt)
	teacher, student = build_models(meta, sections)
	if student is None:
		raise ConfigError(f"{ckpt} holds no student; evaluate a stage 2 or 3 checkpoint")
	bands = config_from_meta(meta).bands
	samples = load_dataset(config.data_dir)
	if args.split != "all":
		train, val = _split(config, samples)
		samples = train if args.split == "train" else val
	_check_bands(samples, bands, ckpt)

	rows, timings, outputs = [], {}, []
	for sample in samples:
		start = time.perf_counter()
		pred = reconstruct(sample.rgb, student, teacher).clamped()
		timings[sample.name] = 1000.0 * (time.perf_counter() - start)
		report = evaluate(sample.cube, pred, config.mrae_eps)
		row = report.to_row(sample.name)
		if teacher is not None:
			upper = evaluate(sample.cube, teacher.round_trip(sample.cube).clamped(), config.mrae_eps)
			row.update({"teacher_mrae": upper.mrae, "teacher_rmse": upper.rmse, "teacher_psnr": upper.psnr})
		rows.append(row)
		stem = os.path.join(out_dir, sample.name)
		write_pgm(stem + "_heatmap.pgm", heatmap_to_gray(report.heatmap, config.heatmap_max))
		write_ppm(stem + "_heatmap.ppm", heatmap_to_color(report.heatmap, config.heatmap_max))
		pixels = random_pixels(sample.cube.height, sample.cube.width, config.pixels, config.seed)
		spectral_plot(sample.cube, pred, pixels, stem + "_spectra.csv")
		outputs += [stem + "_heatmap.pgm", stem + "_heatmap.ppm", stem + "_spectra.csv"]

	table = metrics_table(rows)
	metrics_path = os.path.join(out_dir, "metrics.csv")
	write_table(table, metrics_path)
	outputs.append(metrics_path)
	mean = table.iloc[-1]
	logger.info(f"Eval over {len(rows)} images: MRAE {mean['mrae']:.4f} RMSE {mean['rmse']:.4f} PSNR {mean['psnr']:.2f} dB")
	h, w = samples[0].cube.height, samples[0].cube.width
	extra = {"inference_ms": timings, "checkpoint_stage": meta.get("stage")}
	if teacher is not None:
		extra["flops"] = hydra_flops(teacher.config, h, w).total
	write_manifest(out_dir, config, inputs=[ckpt] + _sources(samples), outputs=outputs, extra=extra)
	return outputs


def cmd_reconstruct(args: argparse.Namespace, config: RunConfig) -> List[str]:
	meta, sections = load_checkpoint(args.ckpt)
	teacher, student = build_models(meta, sections)
	if student is None:
		raise ConfigError(f"{args.ckpt} holds no student")
	image = load_rgb(args.rgb)
	cube = reconstruct(image, student, teacher).clamped()
	out_dir = _ensure_dir(os.path.dirname(os.path.abspath(args.out)))
	save_cube(cube, args.out)
	logger.info(f"Wrote {cube.height}x{cube.width}x{cube.bands} cube to {args.out}")
	config.out_dir = out_dir
	write_manifest(out_dir, config, inputs=[args.ckpt, args.rgb], outputs=[args.out])
	return [args.out]


def cmd_plot(args: argparse.Namespace, config: RunConfig) -> List[str]:
	gt, pred = load_cube(args.gt), load_cube(args.pred)
	out_dir = _ensure_dir(config.out_dir)
	report = evaluate(gt, pred, config.mrae_eps)
	paths = [os.path.join(out_dir, name) for name in ("heatmap.pgm", "heatmap.ppm", "spectra.csv")]
	write_pgm(paths[0], heatmap_to_gray(report.heatmap, config.heatmap_max))
	write_ppm(paths[1], heatmap_to_color(report.heatmap, config.heatmap_max))
	spectral_plot(gt, pred, random_pixels(gt.height, gt.width, config.pixels, config.seed), paths[2])
	logger.info(f"MRAE {report.mrae:.4f} RMSE {report.rmse:.4f} PSNR {report.psnr:.2f} dB")
	write_manifest(out_dir, config, inputs=[args.gt, args.pred], outputs=paths)
	return paths


def cmd_ablate(args: argparse.Namespace, config: RunConfig) -> List[str]:
	out_dir = _ensure_dir(config.out_dir)
	samples = load_dataset(config.data_dir)
	train, val = _split(config, samples)
	model = dataclasses.replace(config.model, bands=samples[0].cube.bands)
	outputs = []
	sweep = latent_sweep(train, val, model, args.latents, config.stages, config.seed, config.mrae_eps)
	outputs.append(os.path.join(out_dir, "ablation_latent.csv"))
	write_table(sweep, outputs[-1])
	if args.variants:
		variants = training_variants(train, val, model.validate(), config.stages, config.seed, eps=config.mrae_eps)
		outputs.append(os.path.join(out_dir, "ablation_variants.csv"))
		write_table(variants, outputs[-1])
	write_manifest(out_dir, config, inputs=_sources(samples), outputs=outputs, extra={"latents": list(args.latents)})
	return outputs


COMMANDS = {
	"gen-data": cmd_gen_data,
	"train": cmd_train,
	"eval": cmd_eval,
	"reconstruct": cmd_reconstruct,
	"plot": cmd_plot,
	"ablate": cmd_ablate,
}


##################################################

			##### ARGUMENTS #####

##################################################


def build_parser() -> argparse.ArgumentParser:
	common = argparse.ArgumentParser(add_help=False)
	common.add_argument("--config", help="key=value config file; flags override it")
	common.add_argument("--seed", type=int, help="Run seed (default 0)")
	common.add_argument("-v", "--verbose", action="store_true", help="Debug logging and tracebacks")
	common.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")

	model = argparse.ArgumentParser(add_help=False)
	model.add_argument("--bands", type=int, help="Band count B")
	model.add_argument("--latent", type=int, help="Latent size L")
	model.add_argument("--student-width", dest="student_width", type=int, help="Student base width C")
	model.add_argument("--heads", type=int, help="Attention heads at level 0")

	parser = argparse.ArgumentParser(prog="hydra-sr", description="RGB to hyperspectral reconstruction")
	parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
	sub = parser.add_subparsers(dest="command", required=True)

	gen = sub.add_parser("gen-data", parents=[common], help="Write synthetic cubes and RGB pairs")
	gen.add_argument("-o", "--out", dest="out_dir", required=True, help="Output directory")
	gen.add_argument("--h", type=int, default=32, help="Cube height")
	gen.add_argument("--w", type=int, default=32, help="Cube width")
	gen.add_argument("--b", type=int, default=31, help="Band count")
	gen.add_argument("--n", type=int, default=8, help="Number of cubes")
	gen.add_argument("--materials", type=int, default=4, help="Materials mixed per cube")
	gen.add_argument("--noise", type=float, default=0.0, help="Band noise sigma")
	gen.add_argument("--noise-bands", dest="noise_bands", type=_band_ranges, help="start:stop ranges for noise")
	gen.add_argument("--drop-bands", dest="drop_bands", type=_int_list, help="Band indices to remove")

	train = sub.add_parser("train", parents=[common, model], help="Run one training stage")
	train.add_argument("-D", "--data", dest="data_dir", required=True, help="Directory written by gen-data")
	train.add_argument("-o", "--out", dest="out_dir", required=True, help="Run directory")
	train.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
	train.add_argument("--epochs", type=int, help="Override the stage's epoch count")
	train.add_argument("--batch-size", dest="batch_size", type=int)
	train.add_argument("--lr", dest="learning_rate", type=float)
	train.add_argument("--resume", action="store_true", help="Continue from the stage's saved state")
	train.add_argument("--until-epoch", dest="until_epoch", type=int,
					   help="Stop after this epoch; the cosine schedule still spans --epochs")

	ev = sub.add_parser("eval", parents=[common], help="Metrics, heatmaps and spectra")
	ev.add_argument("-D", "--data", dest="data_dir", required=True)
	ev.add_argument("-o", "--out", dest="out_dir", required=True)
	ev.add_argument("--ckpt", help="Checkpoint (default <out>/stage3.hydt)")
	ev.add_argument("--split", choices=("val", "train", "all"), default="val")
	ev.add_argument("--pixels", type=int, help="Pixels per spectra CSV (default 6)")

	rec = sub.add_parser("reconstruct", parents=[common], help="Reconstruct a cube from an RGB file")
	rec.add_argument("--rgb", required=True, help="RGB image in HSIC format (B=3)")
	rec.add_argument("--ckpt", required=True)
	rec.add_argument("-o", "--out", required=True, help="Output cube path")

	plot = sub.add_parser("plot", parents=[common], help="Heatmap and spectra for two cubes")
	plot.add_argument("--gt", required=True)
	plot.add_argument("--pred", required=True)
	plot.add_argument("-o", "--out", dest="out_dir", required=True)
	plot.add_argument("--pixels", type=int)
	plot.add_argument("--heatmap-max", dest="heatmap_max", type=float)

	ab = sub.add_parser("ablate", parents=[common, model], help="Latent-size and training-variant ablations")
	ab.add_argument("-D", "--data", dest="data_dir", required=True)
	ab.add_argument("-o", "--out", dest="out_dir", required=True)
	ab.add_argument("--latents", type=_int_list, default=(4, 6, 8))
	ab.add_argument("--variants", action="store_true", help="Also compare stage13 / student_only / three_stage")
	return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
	keys = ("seed", "data_dir", "out_dir", "bands", "latent", "student_width", "heads", "pixels", "heatmap_max")
	overrides = {k: getattr(args, k, None) for k in keys}
	stage = getattr(args, "stage", None)
	if stage is not None:
		for flag in ("epochs", "batch_size", "learning_rate"):
			overrides[f"stage{stage}.{flag}"] = getattr(args, flag, None)
	return overrides


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
	level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
	logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
	args = build_parser().parse_args(argv)
	configure_logging(args.verbose, args.quiet)
	try:
		config = load_run_config(args.command, args.config, _overrides(args))
		COMMANDS[args.command](args, config)
	except HydraError as e:
		logger.error(str(e), exc_info=args.verbose)
		return e.exit_code
	except OSError as e:
		logger.error(f"I/O error on {e.filename}: {e.strerror}", exc_info=args.verbose)
		return DataError.exit_code
	return 0


if __name__ == "__main__":
	sys.exit(main())
