"""Command-line surface for the two-stage pipeline.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Failures print a
single machine-parseable line starting with ``ERROR:`` to stderr.
"""

import argparse
import csv
import sys
from pathlib import Path

from . import data as data_mod
from . import gradsuite
from . import metrics as metrics_mod
from . import plot
from . import scheduler as sched_mod
from . import trainer as trainer_mod

DEFAULT_IMAGE_SIZE = 32


def _parse_scheduler(spec_str, total_steps):
    """'uniform' | 'piecewise' | 'cosine' | 'fixed:R' -> ScheduleConfig."""
    if spec_str.startswith("fixed:"):
        return sched_mod.ScheduleConfig(scheme="fixed", total_steps=total_steps,
                                        fixed_ratio=float(spec_str.split(":", 1)[1]))
    return sched_mod.ScheduleConfig(scheme=spec_str, total_steps=total_steps)


def _load_images(path, size, labeled=False):
    ds = data_mod.load_dataset(path, (size, size), labeled=labeled)
    if len(ds) == 0:
        raise ValueError(f"no images found under {path}")
    return ds.load_all() + (ds,)


def cmd_pretrain_lsp(args):
    cfgs = trainer_mod.load_config(args.config)
    images, _, _ = _load_images(args.data, args.image_size)
    trainer_mod.write_manifest(args.out, "pretrain-lsp",
                               {"projector": cfgs["projector"], "train": cfgs["train"]},
                               cfgs["train"].seed)
    trainer_mod.pretrain_projector(images, cfgs["projector"], cfgs["train"],
                                   out_dir=args.out)
    print(f"wrote {args.out}/checkpoint.pt and {args.out}/log.csv")


def cmd_train(args):
    cfgs = trainer_mod.load_config(args.config)
    sched = _parse_scheduler(args.scheduler, cfgs["train"].total_steps)
    images, _, _ = _load_images(args.data, args.image_size)
    projector = trainer_mod.load_projector(args.lsp)
    trainer_mod.write_manifest(args.out, "train",
                               {"projector": projector.cfg, "mae": cfgs["mae"],
                                "schedule": sched, "train": cfgs["train"]},
                               cfgs["train"].seed)
    trainer_mod.train_masked(images, projector, cfgs["mae"], sched, cfgs["train"],
                             out_dir=args.out)
    print(f"wrote {args.out}/checkpoint.pt, {args.out}/log.csv and {args.out}/ratio.csv")


def cmd_finetune(args):
    cfgs = trainer_mod.load_config(args.config)
    images, labels, ds = _load_images(args.data, args.image_size, labeled=True)
    projector = trainer_mod.load_projector(args.lsp)
    mae_model, _ = trainer_mod.load_masked_autoencoder(args.lsmd)
    trainer_mod.write_manifest(args.out, "finetune",
                               {"mae": mae_model.cfg, "train": cfgs["train"]},
                               cfgs["train"].seed)
    trainer_mod.finetune_classifier(images, labels, projector, mae_model,
                                    cfgs["train"], num_classes=len(ds.classes),
                                    out_dir=args.out)
    print(f"wrote {args.out}/log.csv")


def cmd_reconstruct(args):
    projector = trainer_mod.load_projector(args.lsp)
    mae_model, _ = trainer_mod.load_masked_autoencoder(args.lsmd)
    from PIL import Image
    import numpy as np
    img = np.asarray(Image.open(getattr(args, "in")).convert("RGB"))
    x = data_mod.to_tensor(img)
    x_hat = trainer_mod.reconstruct(x, projector, mae_model, args.ratio, args.seed)
    data_mod.save_image(x_hat, args.out)
    print(f"wrote {args.out}")


def cmd_schedule(args):
    cfg = _parse_scheduler(args.scheme, args.steps)
    rows = sched_mod.schedule_table(cfg)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("step,ratio\n")
        for t, r in rows:
            out.write(f"{t},{r!r}\n")
    finally:
        if args.out:
            out.close()
            print(f"wrote {args.out}")


def cmd_report(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, loss_series, ratio_series = [], [], []
    for run in args.runs:
        run = Path(run)
        log = metrics_mod.MetricsLog.from_csv(run / "log.csv")
        s = metrics_mod.summary(log)
        rows.append({"run": run.name, "mit": s["mit"], "mlt": s["mlt"],
                     "mli": s["mli"], "mat@1": s["mat@1"], "mat@5": s["mat@5"]})
        steps = [r.step for r in log.records]
        loss_series.append((run.name, steps, log.smoothed_losses()))
        ratio_csv = run / "ratio.csv"
        if ratio_csv.exists():
            with open(ratio_csv, newline="") as fh:
                pts = [(int(r["step"]), float(r["ratio"])) for r in csv.DictReader(fh)]
            ratio_series.append((run.name, [p[0] for p in pts], [p[1] for p in pts]))
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["run", "mit", "mlt", "mli", "mat@1", "mat@5"])
        w.writeheader()
        w.writerows(rows)
    plot.svg_curves(out_dir / "loss.svg", loss_series, title="Smoothed loss",
                    xlabel="step", ylabel="loss (EMA)")
    if ratio_series:
        plot.svg_curves(out_dir / "ratio.svg", ratio_series, title="Mask ratio schedule",
                        xlabel="step", ylabel="ratio")
    print(f"wrote {out_dir}/summary.csv and SVG curves")


def cmd_gradcheck(args):
    reports = gradsuite.run_all(seed=args.seed)
    failed = False
    for r in reports:
        print(r)
        failed = failed or not r.passed
    if failed:
        raise RuntimeError("gradient suite failed")
    print(f"all {len(reports)} gradient checks passed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="latentmask",
        description="Latent-space masked autoencoding with progressive mask schedules.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--image-size", type=int, default=DEFAULT_IMAGE_SIZE,
                       help="images are resized to this square size")

    p = sub.add_parser("pretrain-lsp", help="pretrain and freeze the latent projector")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(fn=cmd_pretrain_lsp)

    p = sub.add_parser("train", help="train the masked autoencoder on frozen latents")
    p.add_argument("--config", required=True)
    p.add_argument("--lsp", required=True, help="projector checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--scheduler", default="cosine",
                   help="uniform | piecewise | cosine | fixed:R")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a classifier head for accuracy metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--lsp", required=True)
    p.add_argument("--lsmd", required=True)
    p.add_argument("--data", required=True, help="directory-per-class layout")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("reconstruct", help="round-trip one image through the pipeline")
    p.add_argument("--lsp", required=True)
    p.add_argument("--lsmd", required=True)
    p.add_argument("--in", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("schedule", help="export a (step, ratio) table as CSV")
    p.add_argument("--scheme", required=True, help="uniform | piecewise | cosine | fixed:R")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_schedule)

    p = sub.add_parser(
        "report",
        help="metrics summary CSV (columns: run, mit, mlt, mli, mat@1, mat@5) "
             "plus SVG loss/ratio curves")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default="report")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        args.fn(args)
    except (FileNotFoundError, ValueError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
