"""End-to-end desk run on synthetic data.

Generates a face-like corpus, simulates an annotation panel, builds the
engagement dataset, trains a scratch model and a transfer-initialized one,
and prints the side-by-side evaluation. Every pipeline stage goes through
the same CLI entry points a real run would use.

    python3 scripts/desk_demo.py --out-dir /tmp/desk_run

Pass --fer-csv to train the expression stage on a real CSV instead of the
synthetic stand-in.
"""

import argparse
import shlex
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from engagerec import data, synthetic
from engagerec.annotation import write_annotation_records
from engagerec.cli import main as cli_main
from engagerec.evaluation import read_report


def run(argv: list[str]) -> None:
    print(f"$ engagerec {shlex.join(argv)}")
    code = cli_main(argv)
    if code != 0:
        sys.exit(f"stage failed with exit code {code}")


def synthesize_fer_csv(path: Path, per_class: int, seed: int) -> None:
    """A stand-in expression CSV: separable synthetic classes, real CSV shape."""
    records = []
    splits = (("train", per_class), ("public_test", 2), ("private_test", 2))
    for offset, (split, count) in enumerate(splits):
        images, labels = synthetic.make_separable_classes(
            num_classes=7, per_class=count, seed=seed + offset
        )
        records += [
            data.LabeledImage(pixels=image, label=int(label), split=split)
            for image, label in zip(images, labels)
        ]
    data.write_fer_csv(records, path)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="desk_run")
    parser.add_argument("--subjects", type=int, default=20)
    parser.add_argument("--per-subject", type=int, default=12)
    parser.add_argument("--annotators", type=int, default=6)
    parser.add_argument("--noise", type=float, default=0.05)
    parser.add_argument("--arch", choices=("cnn", "vggnet"), default="cnn")
    parser.add_argument("--steps", type=int, default=80)
    parser.add_argument("--eval-every", type=int, default=20)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--fer-steps", type=int, default=40)
    parser.add_argument("--fer-csv", default=None, help="real expression CSV (optional)")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    root = Path(args.out_dir)
    root.mkdir(parents=True, exist_ok=True)

    print(f"== corpus: {args.subjects} subjects x {args.per_subject} images ==")
    corpus = synthetic.make_er_corpus(args.subjects, args.per_subject, seed=args.seed)
    raw_dir = root / "raw"
    raw_dir.mkdir(exist_ok=True)
    entries = []
    for item in corpus:
        png = raw_dir / f"{item.sample_id}.png"
        Image.fromarray(item.pixels, mode="L").save(png)
        entries.append(
            data.ErManifestEntry(
                image_path=str(png),
                subject_id=item.subject_id or "unknown",
                label=item.label,
                sample_id=item.sample_id,
            )
        )
    source_manifest = root / "source_manifest.jsonl"
    data.write_er_manifest(source_manifest, entries)

    print(f"== simulated panel: {args.annotators} annotators ==")
    records = synthetic.make_annotation_records(
        corpus, num_annotators=args.annotators, noise=args.noise, seed=args.seed
    )
    records_path = root / "records.jsonl"
    write_annotation_records(records, records_path)
    print(f"wrote {len(records)} records")

    dataset_dir = root / "er_dataset"
    run(["annotate-build", "--records", str(records_path),
         "--manifest", str(source_manifest), "--out-dir", str(dataset_dir)])

    prepared = root / "er_prepared"
    run(["prepare-er", "--manifest", str(dataset_dir / "manifest.jsonl"),
         "--out-dir", str(prepared), "--seed", str(args.seed)])
    er_npz = prepared / "er_splits.npz"

    print("== expression stage (transfer source) ==")
    if args.fer_csv is not None:
        fer_csv = Path(args.fer_csv)
    else:
        fer_csv = root / "fer_standin.csv"
        synthesize_fer_csv(fer_csv, per_class=8, seed=args.seed)
        print(f"no --fer-csv given, synthesized stand-in at {fer_csv}")
    fer_npz = root / "fer_splits.npz"
    run(["prepare-fer", "--csv", str(fer_csv), "--out", str(fer_npz)])
    fer_ckpt = root / "expression.ckpt"
    run(["train-fer", "--arch", args.arch, "--data", str(fer_npz),
         "--out", str(fer_ckpt), "--max-steps", str(args.fer_steps),
         "--eval-every", str(max(1, args.fer_steps // 4)),
         "--batch-size", str(args.batch_size), "--seed", str(args.seed)])

    print("== engagement stage: scratch vs transfer ==")
    shared = ["--data", str(er_npz), "--max-steps", str(args.steps),
              "--eval-every", str(args.eval_every),
              "--batch-size", str(args.batch_size), "--seed", str(args.seed)]
    scratch_ckpt = root / "scratch.ckpt"
    run(["train-er", "--scratch", "--arch", args.arch,
         "--out", str(scratch_ckpt)] + shared)
    transfer_ckpt = root / "transfer.ckpt"
    run(["train-er", "--init-from", str(fer_ckpt),
         "--out", str(transfer_ckpt)] + shared)

    reports = {}
    for model_id, ckpt in (("scratch", scratch_ckpt), ("transfer", transfer_ckpt)):
        report_path = root / f"{model_id}_report.json"
        run(["evaluate", "--dataset", "er", "--split", "test",
             "--data", str(er_npz), "--checkpoint", str(ckpt),
             "--model-id", model_id, "--report", str(report_path)])
        reports[model_id] = read_report(report_path)

    print()
    for model_id, report in reports.items():
        print(report.format_table())
        print()
    delta = reports["transfer"].metrics["accuracy"] - reports["scratch"].metrics["accuracy"]
    print(f"transfer - scratch accuracy delta: {delta:+.4f}")
    print(f"artifacts under {root}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
