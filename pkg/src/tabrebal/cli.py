"""Command-line surface: preprocess, train, sample, grid, report, viz.

Every run writes a manifest (resolved configuration, master seed, input file
hashes, toolkit version) sufficient to replay it. Configuration precedence is
CLI flags over config file over built-in defaults. The only environment
variable honored is TABREBAL_OUT_DIR, the default output directory.

Exit codes: 0 success; each error class carries its own nonzero code (see
errors.py); unexpected failures exit 1.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import protocol, report, samplers
from .boosting import BoostConfig
from .data import (
    Dataset,
    encoded_column_names,
    load_encoded,
    load_raw,
    save_encoded,
)
from .errors import ConfigError, SchemaError, StrategyMismatch, ToolkitError
from .models import ModelSpec, TrainedGenerator, spec_from_method_name
from .projections import pca2, som_assign, som_fit, tsne2
from .protocol import GridConfig, MethodPlan
from .samplers import training_view
from .training import train as train_model

MODEL_FIELDS = (
    "hidden", "latent", "embedding", "tau", "epochs", "batch_size",
    "lr_autoencoder", "lr_adversarial", "n_critic", "clamp",
    "penalty_weight", "instance_noise", "patience",
)


def _default_out() -> str:
    return os.environ.get("TABREBAL_OUT_DIR", ".")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict,
                   inputs: dict[str, Path], master_seed: int | None = None) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "master_seed": master_seed,
        "inputs": {name: {"path": str(p), "sha256": _sha256(Path(p))}
                   for name, p in inputs.items()},
        "toolkit_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_dataset(data_dir: str) -> Dataset:
    root = Path(data_dir)
    return load_encoded(root / "encoded.csv", root / "metadata.json")


def _parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"not a comma-separated list of numbers: {text!r}") from None


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"not a comma-separated list of integers: {text!r}") from None


def _model_spec_kwargs(args) -> dict:
    out = {}
    for field_name in MODEL_FIELDS:
        value = getattr(args, field_name, None)
        if value is not None:
            out[field_name] = value
    return out


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--hidden", type=_parse_int_list, default=None,
                        help="hidden layer widths, e.g. 128,128")
    parser.add_argument("--latent", type=int, default=None)
    parser.add_argument("--embedding", type=int, default=None)
    parser.add_argument("--tau", type=float, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    parser.add_argument("--lr-autoencoder", dest="lr_autoencoder", type=float, default=None)
    parser.add_argument("--lr-adversarial", dest="lr_adversarial", type=float, default=None)
    parser.add_argument("--n-critic", dest="n_critic", type=int, default=None)
    parser.add_argument("--clamp", type=float, default=None)
    parser.add_argument("--penalty-weight", dest="penalty_weight", type=float, default=None)
    parser.add_argument("--instance-noise", dest="instance_noise", type=float, default=None)
    parser.add_argument("--patience", type=int, default=None)


# -- subcommands ------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    dataset = load_raw(args.csv, args.metadata, name=args.name)
    out_dir = Path(args.out)
    csv_path, meta_path = save_encoded(dataset, out_dir)
    write_manifest(out_dir, "preprocess", {"csv": args.csv, "metadata": args.metadata,
                                           "name": dataset.name},
                   {"csv": Path(args.csv), "metadata": Path(args.metadata)})
    print(f"wrote {csv_path} and {meta_path} "
          f"({dataset.n_rows} rows, {dataset.width} encoded columns)")
    return 0


def cmd_train(args) -> int:
    dataset = _load_dataset(args.data)
    spec = spec_from_method_name(
        args.method,
        **_model_spec_kwargs(args),
        **samplers.spec_flags_for_strategy(args.strategy),
        seed=args.seed,
    )
    view = training_view(dataset, args.strategy)
    trained = train_model(spec, view, None, seed=args.seed, strategy=args.strategy)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trained.save(out)
    print(f"trained {spec.name} ({args.strategy}) on {len(view.rows)} rows -> {out}")
    return 0


def cmd_sample(args) -> int:
    trained = TrainedGenerator.load(args.model)
    if trained.strategy is not None and trained.strategy != args.strategy:
        raise StrategyMismatch(
            f"model was trained for strategy {trained.strategy!r}, not {args.strategy!r}"
        )
    rng = np.random.default_rng(args.seed)
    rows = samplers.draw(trained, args.strategy, args.n, class_label=args.class_label,
                         rng=rng, draw_limit=args.draw_limit)
    meta = trained.meta if args.strategy != "rejection" else trained.meta[:-1]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(encoded_column_names(meta))
        for row in rows:
            writer.writerow([format(x, ".17g") for x in row])
    print(f"wrote {len(rows)} synthetic rows of class {args.class_label} -> {out}")
    return 0


def _grid_config_from(args, dataset: Dataset) -> GridConfig:
    file_cfg: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key, default)

    methods = pick(args.methods, "methods", "")
    plans: list[MethodPlan] = []
    if isinstance(methods, str):
        names = [m.strip() for m in methods.split(",") if m.strip()]
        sampling = pick(args.sampling, "sampling", None)
        strategies = [s.strip() for s in sampling.split(",")] if sampling else []
        from .resampling import CLASSIC_OVERSAMPLERS

        for name in names:
            if name in CLASSIC_OVERSAMPLERS:
                plans.append(MethodPlan(name))
            elif strategies:
                plans.extend(MethodPlan(name, sampling=s) for s in strategies)
            else:
                raise ConfigError(
                    f"generative method {name!r} needs --sampling "
                    "(minority, conditional, and/or rejection)"
                )
    else:
        plans = [MethodPlan(m["name"], sampling=m.get("sampling")) for m in methods]

    clf_cfg = file_cfg.get("classifier", {})
    if args.clf_estimators is not None:
        clf_cfg["n_estimators"] = args.clf_estimators
    if args.clf_depth is not None:
        clf_cfg["max_depth"] = args.clf_depth
    if args.clf_learning_rate is not None:
        clf_cfg["learning_rate"] = args.clf_learning_rate

    model_cfg = dict(file_cfg.get("model", {}))
    if "hidden" in model_cfg:
        model_cfg["hidden"] = tuple(model_cfg["hidden"])
    model_cfg.update(_model_spec_kwargs(args))
    model = ModelSpec(architecture="vae", **model_cfg)

    usr_grid = args.usr_grid if args.usr_grid is not None else tuple(file_cfg.get("usr_grid", ()))
    osr_grid = args.osr_grid if args.osr_grid is not None else tuple(file_cfg.get("osr_grid", ()))
    if not usr_grid:
        from .data import compute_ir

        usr_grid = protocol.default_usr_grid(compute_ir(dataset.labels))
    if not osr_grid:
        osr_grid = usr_grid
    return GridConfig(
        usr_grid=tuple(usr_grid),
        osr_grid=tuple(osr_grid),
        methods=tuple(plans),
        folds=int(pick(args.folds, "folds", 10)),
        master_seed=int(pick(args.seed, "master_seed", 0)),
        draw_limit=int(pick(args.draw_limit, "draw_limit", samplers.DEFAULT_DRAW_LIMIT)),
        validation_fraction=float(pick(None, "validation_fraction", 0.1)),
        jobs=int(pick(args.jobs, "jobs", 1)),
        timing=bool(args.timing or file_cfg.get("timing", False)),
        classifier=BoostConfig(**clf_cfg),
        model=model,
    )


def _grid_config_obj(grid: GridConfig) -> dict:
    obj = asdict(grid)
    obj["methods"] = [{"name": p.name, "sampling": p.sampling} for p in grid.methods]
    obj["model"]["hidden"] = list(grid.model.hidden)
    return obj


def cmd_grid(args) -> int:
    dataset = _load_dataset(args.data)
    grid = _grid_config_from(args, dataset)
    records = protocol.run_grid(dataset, grid)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.csv"
    results_path.write_text(protocol.records_to_csv(records), encoding="utf-8")
    written = report.emit_report(records, out_dir, heatmaps=not args.no_heatmaps)
    data_root = Path(args.data)
    write_manifest(out_dir, "grid", _grid_config_obj(grid),
                   {"encoded": data_root / "encoded.csv",
                    "metadata": data_root / "metadata.json"},
                   master_seed=grid.master_seed)
    ok = sum(1 for r in records if r.status == "ok")
    timeouts = len(records) - ok
    print(f"wrote {results_path} ({ok} records, {timeouts} timeouts), "
          f"summary + {sum(1 for p in written if p.suffix == '.svg')} figures in {out_dir}")
    return 0


def cmd_report(args) -> int:
    records = protocol.records_from_csv(Path(args.results).read_text(encoding="utf-8"))
    written = report.emit_report(records, args.out, heatmaps=not args.no_heatmaps)
    print(f"wrote {len(written)} report files in {args.out}")
    return 0


def _read_synthetic(path: str, dataset: Dataset) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = encoded_column_names(dataset.meta)
        if header != expected:
            raise SchemaError(
                f"synthetic CSV columns do not match the dataset encoding "
                f"(expected {len(expected)} columns, got {len(header)})"
            )
        return np.array([[float(c) for c in row] for row in reader])


def cmd_viz(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if args.kind == "heatmap":
        if not args.results:
            raise ConfigError("--kind heatmap needs --results")
        records = protocol.records_from_csv(Path(args.results).read_text(encoding="utf-8"))
        written = [p for p in report.emit_report(records, out_dir, heatmaps=True)
                   if p.suffix == ".svg"]
    else:
        if not args.data:
            raise ConfigError(f"--kind {args.kind} needs --data")
        dataset = _load_dataset(args.data)
        synthetic = _read_synthetic(args.synthetic, dataset) if args.synthetic else None

        def oversampler(n, rng):
            if synthetic is None:
                return np.zeros((0, dataset.width))
            picks = rng.choice(len(synthetic), size=min(n, len(synthetic)), replace=False)
            return synthetic[picks]

        n_synth = args.n_synth if synthetic is not None else 0
        rows, tags = report.diagnostic_sample(dataset, oversampler, n_real=args.n_real,
                                              n_synth=n_synth, seed=args.seed)
        name = args.label or (Path(args.synthetic).stem if args.synthetic else "real")
        if args.kind == "pca":
            coords = pca2(rows)
            fig = report.scatter_figure(coords, tags, f"{dataset.name}: PCA ({name})")
            written.append(report.save_figure(
                fig, out_dir / f"{report.slug(dataset.name, name, 'pca')}.svg"))
        elif args.kind == "tsne":
            result = tsne2(rows, perplexity=args.perplexity, iterations=args.iterations,
                           seed=args.seed)
            fig = report.scatter_figure(result.coordinates, tags,
                                        f"{dataset.name}: t-SNE ({name})")
            written.append(report.save_figure(
                fig, out_dir / f"{report.slug(dataset.name, name, 'tsne')}.svg"))
        elif args.kind == "som":
            som = som_fit(rows, grid_shape=(10, 10), epochs=args.som_epochs, seed=args.seed)
            som = som_assign(som, rows, tags)
            fig, _ = report.som_figure(som, f"{dataset.name}: SOM ({name})")
            written.append(report.save_figure(
                fig, out_dir / f"{report.slug(dataset.name, name, 'som')}.svg"))
        else:
            raise ConfigError(f"unknown viz kind {args.kind!r}")
    print(f"wrote {len(written)} figure(s) in {out_dir}")
    return 0


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabrebal",
        description="Rebalancing toolkit for imbalanced tabular classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="encode a raw CSV + metadata sidecar")
    p.add_argument("--csv", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--out", default=_default_out())
    p.add_argument("--name", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one generative model on an encoded dataset")
    p.add_argument("--data", required=True, help="directory with encoded.csv + metadata.json")
    p.add_argument("--method", required=True,
                   help="vae, mv-vae, gan, mv-wgan, mv-wgan-gp, medgan, mv-medgan, arae, mv-arae")
    p.add_argument("--strategy", required=True, choices=list(samplers.STRATEGIES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model file to write")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw synthetic rows from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", required=True, choices=list(samplers.STRATEGIES))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--class-label", dest="class_label", type=int, default=1)
    p.add_argument("--draw-limit", dest="draw_limit", type=int,
                   default=samplers.DEFAULT_DRAW_LIMIT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("grid", help="run the full benchmark grid")
    p.add_argument("--data", required=True)
    p.add_argument("--methods", default=None,
                   help="comma list: classic resamplers and/or generative methods")
    p.add_argument("--sampling", default=None,
                   help="comma list of strategies applied to every generative method")
    p.add_argument("--usr-grid", dest="usr_grid", type=_parse_float_list, default=None)
    p.add_argument("--osr-grid", dest="osr_grid", type=_parse_float_list, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--draw-limit", dest="draw_limit", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--timing", action="store_true",
                   help="record wall times (breaks byte-reproducibility)")
    p.add_argument("--config", default=None, help="JSON config mirroring the grid settings")
    p.add_argument("--clf-estimators", dest="clf_estimators", type=int, default=None)
    p.add_argument("--clf-depth", dest="clf_depth", type=int, default=None)
    p.add_argument("--clf-learning-rate", dest="clf_learning_rate", type=float, default=None)
    p.add_argument("--no-heatmaps", action="store_true")
    p.add_argument("--out", default=_default_out())
    _add_model_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="summaries + heatmaps from a results.csv")
    p.add_argument("--results", required=True)
    p.add_argument("--no-heatmaps", action="store_true")
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("viz", help="PCA / t-SNE / SOM diagnostics or heatmaps")
    p.add_argument("--kind", required=True, choices=["heatmap", "pca", "tsne", "som"])
    p.add_argument("--results", default=None, help="results.csv (heatmap)")
    p.add_argument("--data", default=None, help="encoded dataset directory (pca/tsne/som)")
    p.add_argument("--synthetic", default=None, help="synthetic rows CSV to overlay")
    p.add_argument("--label", default=None, help="name for figure files/titles")
    p.add_argument("--n-real", dest="n_real", type=int, default=200)
    p.add_argument("--n-synth", dest="n_synth", type=int, default=200)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--som-epochs", dest="som_epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 12


if __name__ == "__main__":
    sys.exit(main())
