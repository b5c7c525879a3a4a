"""Command-line entry point.

Subcommands: gen-data, train, eval, denoise, ablate, report. Exit codes:
0 success, 2 usage error, 3 file-format error, 4 numeric abort. Every
command is deterministic given identical inputs and seeds; no command
mutates its input files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from rldenoise.ablation import run_ablation, write_comparison
from rldenoise.data import gen_dataset, load_dataset, load_pair, load_tensors, save_png, save_tensors
from rldenoise.exceptions import FormatError, NumericError
from rldenoise.trainer import TrainConfig, evaluate_greedy, load_checkpoint, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rldenoise",
                                     description="PPO-driven encoder-decoder denoising")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a paired phantom dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, required=True, help="number of samples")
    p.add_argument("--size", type=int, default=32, help="image extent (divisible by 4)")
    p.add_argument("--dose", type=float, default=300.0, help="photon count N0")
    p.add_argument("--sigma", type=float, default=0.03, help="Gaussian read-noise sigma")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run training from a config file")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--ablation", default=None, help="override the config's ablation id")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--png", action="store_true", help="also write PNG triptychs")

    p = sub.add_parser("denoise", help="single-pass denoise of one .ednt image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="input .ednt image")
    p.add_argument("--out", required=True, help="output .ednt image")
    p.add_argument("--png", default=None, help="optional PNG copy of the output")

    p = sub.add_parser("ablate", help="run the ablation matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--ids", required=True, help="comma-separated ids, e.g. A1,A3,A8")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="merge run directories into one comparison table")
    p.add_argument("--runs", required=True, help="directory containing run subdirectories")
    p.add_argument("--out", required=True, help="output CSV file")
    return parser


def _cmd_gen_data(args) -> int:
    samples = gen_dataset(args.out, count=args.count, size=args.size, dose=args.dose,
                          sigma=args.sigma, seed=args.seed)
    n_train = sum(1 for s in samples if s.split == "train")
    print(f"wrote {len(samples)} samples ({n_train} train, {len(samples) - n_train} test) "
          f"to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = TrainConfig.from_file(args.config)
    if args.ablation is not None:
        import dataclasses

        config = dataclasses.replace(config, ablation=args.ablation)
    artifacts = train(config, args.out, resume_from=args.resume)
    print(f"run complete: mean held-out PSNR "
          f"{artifacts.summary['mean_psnr']:.2f} dB "
          f"(noisy {artifacts.summary['mean_noisy_psnr']:.2f} dB); "
          f"artifacts in {artifacts.run_dir}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    import csv

    model, policy, meta, _ = load_checkpoint(args.ckpt)
    samples = load_dataset(args.data)
    pairs = [load_pair(s) for s in samples if s.split == args.split]
    if not pairs:
        raise FormatError(f"no {args.split} samples in {args.data}")
    config = TrainConfig(max_steps=meta["max_steps"], multi_pass=meta["multi_pass"],
                         seed=meta["seed"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, summary = evaluate_greedy(model, policy, config, pairs,
                                    png_dir=out_dir / "png" if args.png else None)
    with open(out_dir / "eval_per_image.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    with open(out_dir / "eval_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(sorted(summary))
        writer.writerow([repr(summary[k]) for k in sorted(summary)])
    print(f"evaluated {len(rows)} images: mean PSNR {summary['mean_psnr']:.2f} dB, "
          f"mean SSIM {summary['mean_ssim']:.4f}")
    return EXIT_OK


def _cmd_denoise(args) -> int:
    model, _, _, _ = load_checkpoint(args.ckpt)
    tensors = load_tensors(args.input)
    if "image" in tensors:
        image = tensors["image"]
    elif len(tensors) == 1:
        image = next(iter(tensors.values()))
    else:
        raise FormatError(f"{args.input} must contain an 'image' section or one tensor")
    if image.ndim != 2:
        raise FormatError(f"input image must be 2-d, got shape {image.shape}")
    denoised = model.denoise(image)
    save_tensors(args.out, {"image": denoised})
    if args.png:
        save_png(args.png, denoised)
    print(f"denoised {args.input} -> {args.out} (shape {denoised.shape})")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    config = TrainConfig.from_file(args.config)
    ids = [token.strip() for token in args.ids.split(",") if token.strip()]
    if not ids:
        raise ValueError("--ids must list at least one ablation id")
    rows, _ = run_ablation(config, ids, args.out)
    print(f"ablation complete; comparison table: {Path(args.out) / 'comparison.csv'}")
    for row in rows:
        p = row["wilcoxon_p"] or "--"
        print(f"  {row['config']:>5}: PSNR {float(row['psnr']):6.2f} dB  p={p}")
    return EXIT_OK


def _cmd_report(args) -> int:
    runs_dir = Path(args.runs)
    run_dirs = sorted(d for d in runs_dir.iterdir()
                      if (d / "run_manifest.json").exists())
    if not run_dirs:
        raise FormatError(f"no run directories under {runs_dir}")
    rows = write_comparison(run_dirs, args.out)
    print(f"merged {len(rows)} runs into {args.out}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "denoise": _cmd_denoise,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
