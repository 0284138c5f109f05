"""Command line entry points for the full pipeline.

Subcommands cover dataset preparation, annotation collection, model training,
and evaluation. Every command prints its effective configuration before doing
work, uses seed 42 unless told otherwise, and resolves relative default paths
against the ENGAGEREC_DATA environment variable (falling back to the current
directory).

Exit codes: 0 success, 1 user error (bad flags, missing or invalid inputs),
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import annotation, data, synthetic
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import (
    EvalReport,
    evaluate_hog_svm,
    evaluate_model,
    read_report,
    write_report,
)
from .models.cnn import (
    build_small_cnn,
    build_vgg_variant,
    init_checkpoint,
    spec_from_checkpoint,
    transfer_init,
)
from .models.hog_svm import hog_features_batch, load_hog_svm, save_hog_svm, train_hog_svm
from .preprocessing import normalize_dataset
from .service import AnnotationStore, StoreConfig, serve
from .training import (
    TrainConfig,
    default_train_config,
    load_train_config,
    train,
    write_train_log,
)


def _data_root() -> Path:
    return Path(os.environ.get("ENGAGEREC_DATA", "."))


def _resolve(path: str | Path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else _data_root() / path


def _print_config(command: str, values: dict) -> None:
    printable = {key: str(value) for key, value in sorted(values.items())}
    print(f"[{command}] config: {json.dumps(printable)}")


def _arch_spec(name: str, num_classes: int):
    if name == "cnn":
        return build_small_cnn(num_classes)
    if name == "vggnet":
        return build_vgg_variant(num_classes)
    raise ValueError(f"unknown architecture {name!r}")


def _build_train_config(args: argparse.Namespace, model_kind: str) -> TrainConfig:
    config = default_train_config(model_kind, seed=args.seed)
    if getattr(args, "config", None):
        config = load_train_config(_resolve(args.config), base=config)
    overrides = {}
    for name in ("batch_size", "max_steps", "eval_every"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "lr", None) is not None:
        overrides["initial_lr"] = args.lr
    if overrides:
        import dataclasses

        config = dataclasses.replace(config, **overrides)
    return config


def _train_and_save(spec, init, train_pair, valid_pair, config, out_path: Path) -> None:
    train_images, train_labels = train_pair
    valid_images, valid_labels = valid_pair
    train_n, stats = normalize_dataset(train_images)
    valid_n, _ = normalize_dataset(valid_images, stats)
    run = train(
        spec,
        init,
        (train_n, np.asarray(train_labels, dtype=np.int64)),
        (valid_n, np.asarray(valid_labels, dtype=np.int64)),
        config,
        extra_tensors=stats.as_tensors(),
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(run.best_checkpoint, out_path)
    write_train_log(run, out_path.with_suffix(".log.jsonl"))
    print(
        f"best validation accuracy {run.best_metric:.4f} at step {run.best_step}; "
        f"checkpoint written to {out_path}"
    )


def cmd_prepare_fer(args: argparse.Namespace) -> int:
    csv_path = _resolve(args.csv)
    out_path = _resolve(args.out)
    _print_config("prepare-fer", {"csv": csv_path, "out": out_path, "seed": args.seed})
    records = data.parse_fer_csv(csv_path)
    splits = data.split_fer(records, seed=args.seed)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    data.save_fer_splits(splits, out_path)
    print(f"parsed {len(records)} rows; split sizes: {json.dumps(splits.sizes())}")
    return 0


def _standardized_pixels(image_path: str) -> tuple[np.ndarray, bool]:
    """48x48 grayscale pixels for one manifest entry.

    Already-standardized images pass through untouched; anything else goes
    through face detection and crop-resize. Returns (pixels, detected)."""
    from PIL import Image

    from . import preprocessing

    try:
        with Image.open(image_path) as img:
            if img.mode == "L" and img.size == (data.IMAGE_SIZE, data.IMAGE_SIZE):
                return np.asarray(img, dtype=np.uint8), True
    except FileNotFoundError:
        raise data.ManifestError(f"{image_path}: image file missing") from None
    except OSError:
        pass
    image = preprocessing.load_image(image_path)
    box = preprocessing.detect_largest_face(image)
    detected = box is not None
    if box is None:
        # no face found: fall back to the full frame so the sample survives
        height, width = image.shape[:2]
        box = preprocessing.FaceBox(x=0, y=0, width=width, height=height)
    return preprocessing.standardize_face(image, box), detected


def cmd_prepare_er(args: argparse.Namespace) -> int:
    manifest_path = _resolve(args.manifest)
    out_dir = _resolve(args.out_dir)
    _print_config(
        "prepare-er", {"manifest": manifest_path, "out_dir": out_dir, "seed": args.seed}
    )
    entries, _ = data.read_er_manifest_entries(manifest_path)
    if not entries:
        raise data.ManifestError(f"{manifest_path}: no entries")
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    from PIL import Image

    records: list[data.LabeledImage] = []
    misses = 0
    for entry in entries:
        pixels, detected = _standardized_pixels(entry.image_path)
        misses += 0 if detected else 1
        sample_id = entry.resolved_sample_id()
        Image.fromarray(pixels, mode="L").save(image_dir / f"{sample_id}.png")
        records.append(
            data.LabeledImage(
                pixels=pixels,
                label=entry.label,
                split=entry.split,
                subject_id=entry.subject_id,
                sample_id=sample_id,
            )
        )
    if all(r.split for r in records):
        assignment = {r.subject_id: r.split for r in records}
    else:
        counts: dict[str, int] = {}
        for record in records:
            counts[record.subject_id] = counts.get(record.subject_id, 0) + 1
        assignment = data.assign_subject_splits(counts, seed=args.seed)
    splits = data.split_er(records, assignment)
    by_id = {}
    for name in data.ER_SPLITS:
        for record in getattr(splits, name):
            by_id[record.sample_id] = record
    data.write_er_manifest(
        out_dir / "manifest.jsonl",
        [
            data.ErManifestEntry(
                image_path=str(image_dir / f"{r.sample_id}.png"),
                subject_id=r.subject_id or "unknown",
                label=r.label,
                split=r.split,
                sample_id=r.sample_id,
            )
            for r in (by_id[s] for s in sorted(by_id))
        ],
    )
    data.save_er_splits(splits, out_dir / "er_splits.npz")
    if misses:
        print(f"warning: no face found in {misses} image(s); used the full frame")
    print(f"split sizes: {json.dumps(splits.sizes())}")
    for name in data.ER_SPLITS:
        _, labels = data.to_arrays(getattr(splits, name))
        engaged = int((labels == 1).sum())
        print(f"  {name}: engaged={engaged} disengaged={len(labels) - engaged}")
    return 0


def _load_store_images(args: argparse.Namespace) -> dict[str, np.ndarray]:
    if args.manifest:
        records = data.load_er_manifest(_resolve(args.manifest))
        return {record.sample_id: record.pixels for record in records}
    corpus = synthetic.make_er_corpus(
        num_subjects=args.synthetic_subjects,
        per_subject=args.synthetic_per_subject,
        seed=args.seed,
    )
    return {image.sample_id: image.pixels for image in corpus}


def cmd_annotate_serve(args: argparse.Namespace) -> int:
    log_path = _resolve(args.log)
    _print_config(
        "annotate-serve",
        {
            "log": log_path,
            "manifest": args.manifest or "(synthetic)",
            "host": args.host,
            "port": args.port,
            "required": args.required,
            "seed": args.seed,
        },
    )
    roster = None
    if args.roster:
        roster = json.loads(Path(_resolve(args.roster)).read_text(encoding="utf-8"))
        if not isinstance(roster, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in roster.items()
        ):
            raise ValueError("roster file must map annotator ids to bearer tokens")
    store = AnnotationStore(
        StoreConfig(
            images=_load_store_images(args),
            log_path=log_path,
            annotators_per_sample=args.required,
            seed=args.seed,
            roster=roster,
        )
    )
    serve(store, host=args.host, port=args.port,
          static_dir=_resolve(args.static) if args.static else None)
    return 0


def cmd_annotate_build(args: argparse.Namespace) -> int:
    records_path = _resolve(args.records)
    out_dir = _resolve(args.out_dir)
    _print_config(
        "annotate-build",
        {"records": records_path, "manifest": args.manifest or "(synthetic)",
         "out_dir": out_dir, "seed": args.seed},
    )
    records = annotation.read_annotation_records(records_path)
    images = _load_store_images(args)

    def lookup(sample_id: str) -> tuple[np.ndarray, str]:
        subject = sample_id.split("_", 1)[0]
        return images[sample_id], subject

    if args.manifest:
        entries = data.load_er_manifest(_resolve(args.manifest))
        subjects = {entry.sample_id: entry.subject_id or "unknown" for entry in entries}

        def lookup(sample_id: str) -> tuple[np.ndarray, str]:  # noqa: F811
            return images[sample_id], subjects[sample_id]

    dataset, stats = annotation.build_dataset(records, lookup)
    out_dir.mkdir(parents=True, exist_ok=True)

    from PIL import Image

    image_dir = out_dir / "images"
    image_dir.mkdir(exist_ok=True)
    entries = []
    for item in dataset:
        file_name = f"images/{item.sample_id}.png"
        Image.fromarray(item.pixels, mode="L").save(out_dir / file_name)
        entries.append(
            data.ErManifestEntry(
                sample_id=item.sample_id,
                image_path=file_name,
                subject_id=item.subject_id or "unknown",
                label=item.label,
            )
        )
    data.write_er_manifest(out_dir / "manifest.jsonl", entries)
    (out_dir / "stats.json").write_text(
        json.dumps(stats.to_json(), indent=2) + "\n", encoding="utf-8"
    )
    print(f"dataset: {json.dumps(stats.to_json())}")
    for dimension in ("behavioral", "emotional"):
        try:
            counts = annotation.dimension_rating_counts(records, dimension)
            kappa = annotation.fleiss_kappa(counts)
            print(f"fleiss kappa ({dimension}): {kappa:.4f}")
        except ValueError as error:
            print(f"fleiss kappa ({dimension}): not computed ({error})")
    return 0


def cmd_train_fer(args: argparse.Namespace) -> int:
    data_path = _resolve(args.data)
    out_path = _resolve(args.out)
    config = _build_train_config(args, "cnn" if args.arch == "cnn" else "vggnet")
    _print_config(
        "train-fer",
        {"data": data_path, "arch": args.arch, "out": out_path, **config.to_json()},
    )
    splits = data.load_fer_splits(data_path)
    spec = _arch_spec(args.arch, num_classes=len(data.FER_LABEL_NAMES))
    init = init_checkpoint(spec, seed=config.seed)
    _train_and_save(
        spec,
        init,
        data.to_arrays(splits.train),
        data.to_arrays(splits.valid),
        config,
        out_path,
    )
    return 0


def cmd_train_er(args: argparse.Namespace) -> int:
    data_path = _resolve(args.data)
    out_path = _resolve(args.out)
    if bool(args.init_from) == bool(args.scratch):
        raise ValueError("exactly one of --init-from and --scratch is required")
    config = _build_train_config(args, "engagement" if args.init_from else args.arch)
    _print_config(
        "train-er",
        {
            "data": data_path,
            "out": out_path,
            "init_from": args.init_from or "(scratch)",
            "arch": args.arch,
            **config.to_json(),
        },
    )
    splits = data.load_er_splits(data_path)
    if args.init_from:
        source = load_checkpoint(_resolve(args.init_from))
        spec = spec_from_checkpoint(source).with_num_classes(len(data.ER_LABEL_NAMES))
        init = transfer_init(spec, source, seed=config.seed)
    else:
        spec = _arch_spec(args.arch, num_classes=len(data.ER_LABEL_NAMES))
        init = init_checkpoint(spec, seed=config.seed)
    _train_and_save(
        spec,
        init,
        data.to_arrays(splits.train),
        data.to_arrays(splits.valid),
        config,
        out_path,
    )
    return 0


def cmd_train_svm(args: argparse.Namespace) -> int:
    data_path = _resolve(args.data)
    out_path = _resolve(args.out)
    _print_config("train-svm", {"data": data_path, "out": out_path, "C": args.C})
    splits = data.load_er_splits(data_path)
    train_images, train_labels = data.to_arrays(splits.train)
    features = hog_features_batch(train_images)
    model = train_hog_svm(features, train_labels, C=args.C)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_hog_svm(model, out_path)
    valid_images, valid_labels = data.to_arrays(splits.valid)
    report = evaluate_hog_svm(
        model, valid_images, valid_labels, data.ER_LABEL_NAMES, split="valid"
    )
    print(f"valid accuracy {report.metrics['accuracy']:.4f}; model written to {out_path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    data_path = _resolve(args.data)
    _print_config(
        "evaluate",
        {
            "data": data_path,
            "dataset": args.dataset,
            "split": args.split,
            "checkpoint": args.checkpoint or "-",
            "svm": args.svm or "-",
        },
    )
    if bool(args.checkpoint) == bool(args.svm):
        raise ValueError("exactly one of --checkpoint and --svm is required")
    if args.dataset == "fer":
        splits = data.load_fer_splits(data_path)
        label_names = data.FER_LABEL_NAMES
        valid_splits = ("train", "valid", "public_test", "private_test")
    else:
        splits = data.load_er_splits(data_path)
        label_names = data.ER_LABEL_NAMES
        valid_splits = data.ER_SPLITS
    if args.split not in valid_splits:
        raise ValueError(f"split must be one of {valid_splits}, got {args.split!r}")
    images, labels = data.to_arrays(getattr(splits, args.split))
    if args.checkpoint:
        checkpoint = load_checkpoint(_resolve(args.checkpoint))
        spec = spec_from_checkpoint(checkpoint)
        report = evaluate_model(
            spec, checkpoint, images, labels, label_names,
            split=args.split, model_id=args.model_id,
        )
    else:
        model = load_hog_svm(_resolve(args.svm))
        report = evaluate_hog_svm(
            model, images, labels, label_names, split=args.split, model_id=args.model_id
        )
    print(report.format_table())
    if args.report:
        report_path = _resolve(args.report)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        write_report(report, report_path)
        print(f"report written to {report_path}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    report_path = _resolve(args.report)
    _print_config("report", {"report": report_path})
    print(read_report(report_path).format_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="engagerec",
        description="Engagement recognition pipeline: data, annotation, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-fer", help="parse the expression CSV and write splits")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", default="fer_splits.npz")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_prepare_fer)

    p = sub.add_parser(
        "prepare-er",
        help="standardize engagement images (face detect + crop) and split by subject",
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", default="er_prepared")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_prepare_er)

    p = sub.add_parser("annotate-serve", help="run the annotation collection service")
    p.add_argument("--log", default="annotation_records.jsonl")
    p.add_argument("--manifest", default=None, help="image manifest; omit for synthetic images")
    p.add_argument("--synthetic-subjects", type=int, default=20)
    p.add_argument("--synthetic-per-subject", type=int, default=12)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--required", type=int, default=annotation.MIN_ANNOTATORS)
    p.add_argument(
        "--roster", default=None,
        help="JSON file mapping annotator ids to bearer tokens; omit to disable auth",
    )
    p.add_argument("--static", default=None, help="directory with the web UI build")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_annotate_serve)

    p = sub.add_parser("annotate-build", help="aggregate annotation records into a dataset")
    p.add_argument("--records", required=True)
    p.add_argument("--manifest", default=None, help="image manifest; omit for synthetic images")
    p.add_argument("--synthetic-subjects", type=int, default=20)
    p.add_argument("--synthetic-per-subject", type=int, default=12)
    p.add_argument("--out-dir", default="er_dataset")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_annotate_build)

    def add_train_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", required=True)
        p.add_argument("--config", default=None, help="key = value training config file")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--max-steps", type=int, default=None)
        p.add_argument("--eval-every", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)

    p = sub.add_parser("train-fer", help="train an expression model")
    p.add_argument("--data", default="fer_splits.npz")
    p.add_argument("--arch", choices=("cnn", "vggnet"), default="vggnet")
    add_train_args(p)
    p.set_defaults(func=cmd_train_fer)

    p = sub.add_parser("train-er", help="train the engagement model")
    p.add_argument("--data", default="er_splits.npz")
    p.add_argument("--init-from", default=None, help="expression checkpoint to transfer from")
    p.add_argument("--scratch", action="store_true", help="train from random init")
    p.add_argument("--arch", choices=("cnn", "vggnet"), default="vggnet")
    add_train_args(p)
    p.set_defaults(func=cmd_train_er)

    p = sub.add_parser("train-svm", help="train the HOG + linear SVM baseline")
    p.add_argument("--data", default="er_splits.npz")
    p.add_argument("--out", required=True)
    p.add_argument("--C", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_train_svm)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint or SVM on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--dataset", choices=("fer", "er"), required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--svm", default=None)
    p.add_argument("--model-id", default="model")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="pretty-print a stored evaluation report")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    return parser


_USER_ERRORS = (
    FileNotFoundError,
    NotADirectoryError,
    PermissionError,
    IsADirectoryError,
    ValueError,
    json.JSONDecodeError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        # argparse exits 2 on usage problems; those are user errors here
        return 0 if not exit_.code else 1
    try:
        return args.func(args)
    except _USER_ERRORS as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as error:  # anything unexpected is an internal failure
        print(f"internal error: {type(error).__name__}: {error}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
