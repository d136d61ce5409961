"""Command-line interface: ingest, corrupt, weights, run, summarize, plot."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .corruption import (
    ClassConditionalSpec,
    ConceptDriftSpec,
    inject_class_conditional_shift,
    inject_concept_drift,
    sample_derangement,
    write_audit,
)
from .data import BiqualityDataset, DatasetError, load_csv, save_csv, write_metadata
from .harness import (
    ConfigError,
    _read_runs,
    load_config,
    run_experiment,
    summarize,
)
from .learners import GBTParams, GradientBoostedTrees
from .reweighting import ReweightingMethod, calibrated_trainer, compute_method_weights

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


def _add_ingest(sub) -> None:
    p = sub.add_parser("ingest", help="validate a CSV and write its metadata sidecar")
    p.add_argument("csv", type=Path)
    p.add_argument("--label-column", required=True)
    p.add_argument("--metadata", type=Path, default=None,
                   help="output JSON path (default: <csv>.meta.json)")


def _cmd_ingest(args) -> int:
    dataset = load_csv(args.csv, args.label_column)
    out = args.metadata or args.csv.with_suffix(args.csv.suffix + ".meta.json")
    write_metadata(dataset, out)
    print(f"{args.csv}: {dataset.n_samples} rows, {dataset.n_features} features, "
          f"{dataset.n_classes} classes -> {out}")
    return EXIT_OK


def _add_corrupt(sub) -> None:
    p = sub.add_parser("corrupt", help="inject synthetic shift into a CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--label-column", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--r", type=float, default=0.0, help="concept-drift fraction")
    p.add_argument("--rho", type=float, default=1.0, help="cluster subsampling ratio")
    p.add_argument("--min-leaf-fraction", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)


def _cmd_corrupt(args) -> int:
    dataset = load_csv(args.csv, args.label_column)
    audits = []
    if args.r > 0:
        permutation = sample_derangement(dataset.n_classes, args.seed)
        dataset, audit = inject_concept_drift(dataset, ConceptDriftSpec(
            r=args.r, permutation=permutation,
            min_leaf_fraction_per_class=args.min_leaf_fraction, seed=args.seed))
        audits.append(("drift", audit))
    if args.rho > 1:
        dataset, audit = inject_class_conditional_shift(
            dataset, ClassConditionalSpec(rho=args.rho, seed=args.seed))
        audits.append(("subsample", audit))
    save_csv(dataset, args.out, args.label_column)
    for kind, audit in audits:
        write_audit(audit, args.out.with_suffix(f".{kind}.audit.json"))
    print(f"wrote {args.out} ({dataset.n_samples} rows)")
    return EXIT_OK


def _add_weights(sub) -> None:
    p = sub.add_parser("weights", help="compute importance weights for a trusted/untrusted pair")
    p.add_argument("trusted", type=Path)
    p.add_argument("untrusted", type=Path)
    p.add_argument("--label-column", required=True)
    p.add_argument("--method", required=True,
                   choices=["IRBL", "IRBL2", "PDR", "K-PDR", "K-KMM"])
    p.add_argument("--out", type=Path, required=True, help="weights CSV (untrusted row order)")
    p.add_argument("--plot", type=Path, default=None,
                   help="optional toy-weights SVG (2-feature data only)")
    p.add_argument("--n-rounds", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)


def _cmd_weights(args) -> int:
    trusted = load_csv(args.trusted, args.label_column)
    untrusted = load_csv(args.untrusted, args.label_column)
    biq = BiqualityDataset(trusted, untrusted)
    params = GBTParams(n_rounds=args.n_rounds)
    trainer = calibrated_trainer(lambda: GradientBoostedTrees(params), seed=args.seed)
    weights = compute_method_weights(biq, ReweightingMethod(args.method), trainer)
    weights.to_csv(args.out)
    print(f"wrote {args.out} ({len(weights)} weights)")
    if args.plot is not None:
        from .plots import plot_toy_weights

        plot_toy_weights(biq, weights, args.plot)
        print(f"wrote {args.plot}")
    return EXIT_OK


def _add_run(sub) -> None:
    p = sub.add_parser("run", help="run an experiment grid from a TOML/JSON config")
    p.add_argument("config", type=Path)


def _cmd_run(args) -> int:
    config = load_config(args.config)
    report = run_experiment(config)
    print(f"{len(report.records)} records in {report.output_dir}")
    _render_reports(report, config.alpha)
    if report.n_failures:
        print(f"{report.n_failures} run(s) failed; see flags in runs.csv", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _render_reports(report, alpha: float) -> None:
    """Per-dataset summary tables and curve figures beside each runs.csv."""
    from .plots import plot_curves

    by_dataset: dict = {}
    for rec in report.records:
        by_dataset.setdefault(rec.dataset, []).append(rec)
    for name, records in by_dataset.items():
        base = report.output_dir / name
        try:
            summarize(records, output_dir=base / "summary", alpha=alpha)
        except ValueError:
            continue
        plots_dir = base / "plots"
        plots_dir.mkdir(parents=True, exist_ok=True)
        for p in sorted({rec.p for rec in records}):
            for axis in ("r", "rho"):
                try:
                    plot_curves(records, p, axis, plots_dir / f"curves_{axis}_p{p}.svg")
                except ValueError:
                    continue


def _add_summarize(sub) -> None:
    p = sub.add_parser("summarize", help="recompute summary tables from runs.csv files")
    p.add_argument("runs", type=Path, nargs="+", help="runs.csv paths or dataset directories")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--alpha", type=float, default=0.05)


def _collect_records(paths) -> list:
    records = []
    for path in paths:
        csv_path = path / "runs.csv" if path.is_dir() else path
        records.extend(_read_runs(csv_path))
    return records


def _cmd_summarize(args) -> int:
    records = _collect_records(args.runs)
    if not records:
        print("no records found", file=sys.stderr)
        return EXIT_CONFIG
    summarize(records, output_dir=args.out, alpha=args.alpha)
    print(f"summary written to {args.out}")
    return EXIT_OK


def _add_plot(sub) -> None:
    p = sub.add_parser("plot", help="render SVG figures from runs.csv files")
    p.add_argument("runs", type=Path, nargs="*")
    p.add_argument("--kind", required=True,
                   choices=["curves", "cd-diagram", "wilcoxon-grid", "toy-weights"])
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--p", type=float, default=None, help="trusted ratio to plot (default: all)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--trusted", type=Path, help="trusted CSV (toy-weights)")
    p.add_argument("--untrusted", type=Path, help="untrusted CSV (toy-weights)")
    p.add_argument("--weights", type=Path, help="weights CSV (toy-weights)")
    p.add_argument("--label-column", help="label column (toy-weights)")


def _cmd_plot(args) -> int:
    from .plots import plot_cd_diagram, plot_curves, plot_toy_weights, plot_wilcoxon_grid

    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "toy-weights":
        if not (args.trusted and args.untrusted and args.weights and args.label_column):
            print("toy-weights needs --trusted, --untrusted, --weights and --label-column",
                  file=sys.stderr)
            return EXIT_CONFIG
        from .density_ratio import WeightVector

        biq = BiqualityDataset(load_csv(args.trusted, args.label_column),
                               load_csv(args.untrusted, args.label_column))
        path = plot_toy_weights(biq, WeightVector.from_csv(args.weights),
                                args.out_dir / "toy_weights.svg")
        print(f"wrote {path}")
        return EXIT_OK

    records = _collect_records(args.runs)
    if not records:
        print("no records found", file=sys.stderr)
        return EXIT_CONFIG
    ps = sorted({rec.p for rec in records}) if args.p is None else [args.p]
    written = []
    if args.kind == "curves":
        for p in ps:
            for axis in ("r", "rho"):
                try:
                    written.append(plot_curves(records, p, axis, args.out_dir / f"curves_{axis}_p{p}.svg"))
                except ValueError:
                    continue
    else:
        summary = summarize(records, alpha=args.alpha)
        if args.kind == "cd-diagram":
            for (axis, p), data in summary["nemenyi"].items():
                if p not in ps:
                    continue
                written.append(plot_cd_diagram(
                    data["methods"], data["mean_ranks"], data["cd"],
                    args.out_dir / f"cd_{axis}_p{p}.svg"))
        else:
            for p, grids in summary["wilcoxon"].items():
                if p not in ps:
                    continue
                for grid in grids:
                    if not grid["cells"]:
                        continue
                    name = f"wilcoxon_{grid['first']}_vs_{grid['second']}_p{p}.svg".replace(" ", "")
                    written.append(plot_wilcoxon_grid(
                        grid["cells"], f"{grid['first']} vs {grid['second']} (p={p})",
                        args.out_dir / name))
    if not written:
        print("nothing to plot", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {len(written)} figure(s) to {args.out_dir}")
    return EXIT_OK


_COMMANDS = {
    "ingest": _cmd_ingest,
    "corrupt": _cmd_corrupt,
    "weights": _cmd_weights,
    "run": _cmd_run,
    "summarize": _cmd_summarize,
    "plot": _cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biqual",
        description="Biquality-learning toolkit: reweighting methods, synthetic "
                    "corruption and a benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_ingest, _add_corrupt, _add_weights, _add_run, _add_summarize, _add_plot):
        add(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
