"""Command-line pipeline: extract, train, calibrate, eval, robustness, separability.

Each command prints one machine-readable JSON summary line to stdout on
success and writes files only at paths named by ``--out``. Exit codes: 0
success, 1 usage, 2 io or file-format failure, 3 validation failure, 4
numerical failure. Flag values override config-file values, which override
the built-in defaults.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .classifier import (
    TrainConfig,
    load_model,
    save_model,
    train,
    with_threshold,
)
from .errors import FileFormatError, ImageError, NumericalError, ValidationError
from .evaluation import (
    EvalReport,
    calibrate_threshold,
    emit_report,
    evaluate,
    fisher_ratio,
    pca_project2d,
    robustness_sweep,
    write_pca2d,
)
from .features import (
    FeatureSet,
    extract_features,
    read_feature_file,
    write_feature_file,
)
from .imaging import Degradation, policy_from_dict
from .manifest import load_manifest

DEFAULT_DEGRADATIONS = "blur:1,2,3,4,5;jpeg:90,80,70,60,50,40,30"

_CONFIG_KEYS = {
    "margin",
    "contrastive_weight",
    "learning_rate",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "batch_size",
    "seed",
    "augment",
}


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def parse_degradations(text: str) -> list[Degradation]:
    """Parse ``name:l1,l2,...`` groups separated by ``;`` into degradations."""
    out: list[Degradation] = []
    if not text.strip():
        return out
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        name, sep, levels = chunk.partition(":")
        if not sep or not levels.strip():
            raise ValidationError(f"bad degradation group {chunk!r}, want name:l1,l2")
        for token in levels.split(","):
            try:
                value = float(token)
            except ValueError:
                raise ValidationError(f"bad degradation level {token!r}") from None
            out.append(Degradation(name=name.strip(), level=value))
    return out


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"config file: unknown keys {sorted(unknown)}")
    return data


def _train_config(config: dict, seed: int | None) -> TrainConfig:
    kwargs = dict(config)
    if "augment" in kwargs:
        kwargs["augment"] = policy_from_dict(kwargs["augment"])
    if seed is not None:
        kwargs["seed"] = seed
    try:
        return TrainConfig(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad config value: {exc}") from exc


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _cmd_extract(args) -> None:
    manifest = load_manifest(args.manifest)
    config = _load_config(args.config)
    augment = policy_from_dict(config["augment"]) if "augment" in config else None
    splits = [args.split] if args.split else None
    fs = extract_features(manifest, args.backend, augment=augment, splits=splits)
    write_feature_file(fs, args.out)
    _emit(
        {
            "command": "extract",
            "backend": fs.backend_name,
            "dim": fs.dim,
            "records": len(fs.records),
            "out": str(args.out),
        }
    )


def _cmd_train(args) -> None:
    fs = read_feature_file(args.features)
    cfg = _train_config(_load_config(args.config), args.seed)
    model = train(fs, cfg)
    save_model(model, args.out)
    _emit(
        {
            "command": "train",
            "dim": model.dim,
            "records": len(fs.split("train")),
            "seed": cfg.seed,
            "threshold": model.threshold,
            "out": str(args.out),
        }
    )


def _cmd_calibrate(args) -> None:
    model = load_model(args.model)
    fs = read_feature_file(args.features)
    threshold = calibrate_threshold(model, fs, split=args.split)
    save_model(with_threshold(model, threshold), args.out)
    _emit({"command": "calibrate", "threshold": threshold, "out": str(args.out)})


def _cmd_eval(args) -> None:
    model = load_model(args.model)
    fs = read_feature_file(args.features)
    dataset = args.dataset if args.dataset else Path(args.features).stem
    report = evaluate(
        model, fs, threshold=args.threshold, dataset=dataset, split=args.split
    )
    if args.out:
        emit_report(report, args.out, format=args.format)
    _emit(
        {
            "command": "eval",
            "dataset": report.dataset,
            "macc": report.macc,
            "subsets": len(report.subsets),
            "threshold": report.threshold,
            "out": str(args.out) if args.out else None,
        }
    )


def _cmd_robustness(args) -> None:
    model = load_model(args.model)
    manifest = load_manifest(args.manifest)
    degradations = parse_degradations(args.degradations)
    points = robustness_sweep(
        model,
        manifest,
        args.backend,
        degradations,
        threshold=args.threshold,
        dataset=manifest.name,
    )
    baseline = points[0]
    report = EvalReport(
        dataset=manifest.name,
        threshold=model.threshold if args.threshold is None else args.threshold,
        subsets=list(baseline.subsets),
        macc=baseline.macc,
        robustness=points,
    )
    if args.out:
        emit_report(report, args.out, format=args.format)
    _emit(
        {
            "command": "robustness",
            "dataset": manifest.name,
            "points": len(points),
            "clean_macc": baseline.macc,
            "out": str(args.out) if args.out else None,
        }
    )


def _cmd_separability(args) -> None:
    fs = read_feature_file(args.features)
    ratio = fisher_ratio(fs, split=args.split)
    out = Path(args.out)
    pca_path = out.with_name(out.stem + "_pca2d.csv")
    scoped = fs if args.split is None else FeatureSet(
        dim=fs.dim, backend_name=fs.backend_name, records=fs.split(args.split)
    )
    write_pca2d(pca_project2d(scoped), pca_path)
    out.write_text(
        json.dumps({"fisher_ratio": ratio, "pca2d_path": str(pca_path)}, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )
    _emit(
        {
            "command": "separability",
            "fisher_ratio": ratio,
            "pca2d_path": str(pca_path),
            "out": str(out),
        }
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="percepdet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("extract", help="compute features for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--backend", default="nss", help="nss or file:PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None, choices=("train", "val", "test"))
    p.add_argument("--config", default=None, help="JSON config (augment block used)")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train", help="fit the detector head on a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("calibrate", help="pick the decision threshold on a split")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("eval", help="per-generator accuracy report")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--format", default="json", choices=("json", "csv"))
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--dataset", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("robustness", help="degradation sweep over the test split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--backend", default="nss")
    p.add_argument("--degradations", default=DEFAULT_DEGRADATIONS)
    p.add_argument("--out", default=None)
    p.add_argument("--format", default="json", choices=("json", "csv"))
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("separability", help="class-separability diagnostics")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None, choices=("train", "val", "test"))
    p.set_defaults(func=_cmd_separability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except (FileFormatError, ImageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


def entry() -> None:
    sys.exit(main(sys.argv[1:]))
