"""Command-line entry point.

Subcommands: train, eval, analyze, ablate-patches, variability, inspect.
Every training hyperparameter can come from a JSON config file; flags take
precedence, and the effective configuration is echoed as config.json into
each output directory. Exit codes: 0 success, 1 runtime failure, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .embeddings import load_dataset, read_header
from .errors import EngineError, FormatError, ParameterError
from .evaluator import (
    alignment_bins,
    build_report,
    class_concept_summary,
    emit_report,
    infer,
    write_activation_csv,
    write_alignment_csv,
)
from .hierarchy import load_manifest
from .model import MODES
from .trainer import TrainConfig, load_checkpoint, train
from .embeddings import similarity_high, similarity_low

# CLI flag name -> TrainConfig field
_FLAG_FIELDS = {
    "seed": "seed",
    "tau": "infer_tau",
    "epochs": "epochs",
    "lr": "lr",
    "beta": "beta",
    "alpha_h": "alpha_h",
    "alpha_l": "alpha_l",
    "patches": "patches",
    "mode": "mode",
}


def _add_config_flags(sub: argparse.ArgumentParser, with_patches: bool = True) -> None:
    sub.add_argument("--config", help="JSON file with TrainConfig fields")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--tau", type=float, help="inference threshold on posteriors")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--beta", type=float)
    sub.add_argument("--alpha-h", type=float, dest="alpha_h")
    sub.add_argument("--alpha-l", type=float, dest="alpha_l")
    if with_patches:
        sub.add_argument("--patches", type=int)
    sub.add_argument("--mode", choices=MODES)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conceptgate",
        description="Train and evaluate two-level gated concept-bottleneck "
                    "classifiers on precomputed embeddings.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("train", help="train a model and write a checkpoint")
    sub.add_argument("--data", required=True)
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--out", required=True)
    _add_config_flags(sub)
    sub.set_defaults(handler=_cmd_train)

    sub = commands.add_parser("eval", help="evaluate a checkpoint and write reports")
    sub.add_argument("--data", required=True)
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--tau", type=float)
    sub.set_defaults(handler=_cmd_eval)

    sub = commands.add_parser(
        "analyze", help="write alignment and activation CSVs from a checkpoint")
    sub.add_argument("--data", required=True)
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--tau", type=float)
    sub.set_defaults(handler=_cmd_analyze)

    sub = commands.add_parser(
        "ablate-patches",
        help="train and evaluate once per patch count; --data may use {P}")
    sub.add_argument("--data", required=True,
                     help="dataset path, with {P} standing in for the patch count")
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--patch-counts", "--patches", dest="patch_counts",
                     required=True, help="comma-separated patch counts, e.g. 4,16")
    _add_config_flags(sub, with_patches=False)
    sub.set_defaults(handler=_cmd_ablate)

    sub = commands.add_parser(
        "variability", help="train across seeds and summarize metric spread")
    sub.add_argument("--data", required=True)
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--seeds", required=True,
                     help="comma-separated seed list, e.g. 0,1,2")
    _add_config_flags(sub)
    sub.set_defaults(handler=_cmd_variability)

    sub = commands.add_parser("inspect", help="print a dataset's header fields")
    sub.add_argument("--data", required=True)
    sub.set_defaults(handler=_cmd_inspect)

    return parser


def _load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return doc


def _effective_config(args, dataset=None) -> TrainConfig:
    """Defaults, then the config file, then explicit flags; in that order."""
    data = {}
    if getattr(args, "config", None):
        data = _load_config_file(args.config)
    config = TrainConfig.from_dict(data)
    patches_given = "patches" in data
    for flag, field_name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, field_name, value)
            if field_name == "patches":
                patches_given = True
    if dataset is not None and not patches_given:
        config.patches = dataset.n_patches
    return config


def _echo_config(config: TrainConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.json"
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _cmd_train(args) -> int:
    dataset, concepts = load_dataset(args.data)
    hierarchy = load_manifest(args.manifest)
    config = _effective_config(args, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(config, out)
    params, history = train(dataset, concepts, hierarchy, config,
                            checkpoint_path=out / "checkpoint.cfck",
                            log=_progress_logger(config.epochs))
    (out / "history.json").write_text(
        json.dumps(history.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"checkpoint written to {out / 'checkpoint.cfck'}")
    return 0


def _progress_logger(epochs: int):
    stride = max(1, epochs // 10)
    counter = {"epoch": 0}

    def log(line: str) -> None:
        counter["epoch"] += 1
        if counter["epoch"] % stride == 0 or counter["epoch"] == epochs:
            print(f"[train] {line}")

    return log


def _load_for_eval(args):
    dataset, concepts = load_dataset(args.data)
    hierarchy = load_manifest(args.manifest)
    state = load_checkpoint(args.checkpoint)
    config = state.config
    if args.tau is not None:
        config = replace(config, infer_tau=args.tau)
    return dataset, concepts, hierarchy, state, config


def _cmd_eval(args) -> int:
    dataset, concepts, hierarchy, state, config = _load_for_eval(args)
    result = infer(dataset, concepts, state.params, hierarchy,
                   config.infer_tau, config.mode)
    report = build_report(dataset, concepts, hierarchy, result)
    out = Path(args.out)
    _echo_config(config, out)
    written = emit_report(report, out)
    for path in written:
        print(path)
    return 0


def _cmd_analyze(args) -> int:
    dataset, concepts, hierarchy, state, config = _load_for_eval(args)
    result = infer(dataset, concepts, state.params, hierarchy,
                   config.infer_tau, config.mode)
    out = Path(args.out)
    _echo_config(config, out)
    bins = {
        "high": alignment_bins(similarity_high(dataset, concepts), result.z_high),
        "low": alignment_bins(similarity_low(dataset, concepts), result.z_combined),
    }
    written = [write_alignment_csv(bins, out / "alignment_bins.csv")]
    per_example = result.z_combined.max(axis=1)
    low_counts, _ = class_concept_summary(per_example, dataset.labels,
                                          dataset.n_classes)
    high_counts, _ = class_concept_summary(result.z_high, dataset.labels,
                                           dataset.n_classes)
    written.append(write_activation_csv(low_counts, out / "per_class_activation.csv"))
    written.append(write_activation_csv(high_counts,
                                        out / "per_class_activation_high.csv"))
    for path in written:
        print(path)
    return 0


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ParameterError(f"{what} must be a comma-separated integer list: {exc}")
    if not values:
        raise ParameterError(f"{what} must name at least one value")
    return values


def _cmd_ablate(args) -> int:
    patch_counts = _parse_int_list(args.patch_counts, "--patch-counts")
    if len(patch_counts) > 1 and "{P}" not in args.data:
        raise ParameterError(
            "--data must contain the {P} placeholder when sweeping several "
            "patch counts"
        )
    hierarchy = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in patch_counts:
        data_path = args.data.replace("{P}", str(p))
        dataset, concepts = load_dataset(data_path)
        config = _effective_config(args, dataset)
        config.patches = p
        run_dir = out / f"p{p}"
        run_dir.mkdir(parents=True, exist_ok=True)
        _echo_config(config, run_dir)
        params, _ = train(dataset, concepts, hierarchy, config,
                          checkpoint_path=run_dir / "checkpoint.cfck",
                          log=_progress_logger(config.epochs))
        result = infer(dataset, concepts, params, hierarchy,
                       config.infer_tau, config.mode)
        report = build_report(dataset, concepts, hierarchy, result)
        emit_report(report, run_dir)
        rows.append((p, report))
        print(f"[ablate] P={p} accuracy_high={report.accuracy_high:.4f} "
              f"accuracy_low={report.accuracy_low:.4f}")

    summary = out / "ablation.csv"
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write("patches,accuracy_high,accuracy_low,sparsity_high,sparsity_low,"
                 "jaccard_example,jaccard_class\n")
        for p, report in rows:
            optional = [report.jaccard_example, report.jaccard_class]
            cells = [str(p)] + [f"{v:.6g}" for v in
                                (report.accuracy_high, report.accuracy_low,
                                 report.sparsity_high, report.sparsity_low)]
            cells += ["" if v is None else f"{v:.6g}" for v in optional]
            fh.write(",".join(cells) + "\n")
    print(summary)
    return 0


def _cmd_variability(args) -> int:
    seeds = _parse_int_list(args.seeds, "--seeds")
    dataset, concepts = load_dataset(args.data)
    hierarchy = load_manifest(args.manifest)
    config = _effective_config(args, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(config, out)

    metric_names = ("accuracy_high", "accuracy_low", "sparsity_high", "sparsity_low")
    per_seed = []
    for seed in seeds:
        run_config = replace(config, seed=seed)
        params, _ = train(dataset, concepts, hierarchy, run_config)
        result = infer(dataset, concepts, params, hierarchy,
                       run_config.infer_tau, run_config.mode)
        report = build_report(dataset, concepts, hierarchy, result)
        row = {"seed": seed}
        row.update({name: getattr(report, name) for name in metric_names})
        per_seed.append(row)
        print(f"[variability] seed={seed} accuracy_high={report.accuracy_high:.4f}")

    summary = {"seeds": seeds, "per_seed": per_seed, "mean": {}, "std": {}}
    for name in metric_names:
        values = np.array([row[name] for row in per_seed], dtype=np.float64)
        summary["mean"][name] = float(values.mean())
        # sample standard deviation (n-1 denominator)
        summary["std"][name] = float(values.std(ddof=1)) if len(values) > 1 else None

    (out / "variability.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    with open(out / "variability.csv", "w", encoding="utf-8") as fh:
        fh.write("seed," + ",".join(metric_names) + "\n")
        for row in per_seed:
            fh.write(",".join([str(row["seed"])] +
                              [f"{row[name]:.6g}" for name in metric_names]) + "\n")
        fh.write("mean," + ",".join(f"{summary['mean'][name]:.6g}"
                                    for name in metric_names) + "\n")
        if len(seeds) > 1:
            fh.write("std," + ",".join(f"{summary['std'][name]:.6g}"
                                       for name in metric_names) + "\n")
    print(out / "variability.json")
    return 0


def _cmd_inspect(args) -> int:
    header = read_header(args.data)
    actual = Path(args.data).stat().st_size
    print(f"path = {args.data}")
    print(f"version = {header.version}")
    print(f"examples (N) = {header.n_examples}")
    print(f"patches (P) = {header.n_patches}")
    print(f"embed_dim (K) = {header.embed_dim}")
    print(f"classes (C) = {header.n_classes}")
    print(f"high_concepts (H) = {header.n_high}")
    print(f"low_attributes (L_all) = {header.n_low}")
    print(f"example_ground_truth = {'yes' if header.has_example_gt else 'no'}")
    print(f"class_ground_truth = {'yes' if header.has_class_gt else 'no'}")
    status = "ok" if actual == header.expected_file_size else "MISMATCH"
    print(f"file_size = {actual} (expected {header.expected_file_size}, {status})")
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
