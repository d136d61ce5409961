"""Experimental protocol orchestration: corruption grids, method runs, summaries."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .corruption import (
    ClassConditionalSpec,
    ConceptDriftSpec,
    inject_class_conditional_shift,
    inject_concept_drift,
    sample_derangement,
)
from .data import (
    DEFAULT_RATIO_GRID,
    BiqualityDataset,
    Dataset,
    calibrate_trusted_ratio,
    load_csv,
    shuffle_rows,
    stratified_split,
)
from .evalstat import (
    CurveSummary,
    comparison_symbol,
    evaluate_kappa,
    friedman_nemenyi,
    wilcoxon_signed_rank,
)
from .learners import GBTParams, GradientBoostedTrees
from .reweighting import METHOD_NAMES, ReweightingMethod, train_with_method

__all__ = [
    "ConfigError",
    "DatasetEntry",
    "ExperimentConfig",
    "load_config",
    "stable_seed",
    "RunRecord",
    "BenchmarkReport",
    "run_experiment",
    "summarize",
    "OUTPUT_ROOT_ENV",
]

OUTPUT_ROOT_ENV = "BIQUAL_OUTPUT_ROOT"

RUN_COLUMNS = [
    "dataset", "method", "p", "actual_trusted_ratio", "r", "rho", "seed",
    "kappa", "wall_time", "flags",
]


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


@dataclass(frozen=True)
class DatasetEntry:
    path: str
    label_column: str
    name: str = ""

    def resolved_name(self) -> str:
        return self.name or Path(self.path).stem


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetEntry, ...]
    p_values: tuple[float, ...] = (0.25, 0.5, 0.75)
    r_grid: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    rho_grid: tuple[float, ...] = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)
    methods: tuple[ReweightingMethod, ...] = tuple(ReweightingMethod(n) for n in METHOD_NAMES)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    output_dir: str = "runs"
    parallelism: int = 1
    test_fraction: float = 0.2
    ratio_grid: tuple[float, ...] = DEFAULT_RATIO_GRID
    calib_folds: int = 3
    learner: GBTParams = GBTParams()
    min_leaf_fraction_per_class: float = 0.10
    cluster_range: tuple[int, int] = (2, 10)
    alpha: float = 0.05

    def __post_init__(self) -> None:
        if not self.datasets:
            raise ConfigError("at least one dataset is required")
        for grid, name in ((self.r_grid, "r_grid"), (self.rho_grid, "rho_grid"),
                           (self.p_values, "p_values"), (self.seeds, "seeds")):
            if not grid:
                raise ConfigError(f"{name} must not be empty")
        if any(not 0.0 <= r <= 1.0 for r in self.r_grid):
            raise ConfigError("r values must lie in [0, 1]")
        if any(rho < 1.0 for rho in self.rho_grid):
            raise ConfigError("rho values must be at least 1")
        if any(not 0.0 < p <= 1.0 for p in self.p_values):
            raise ConfigError("p values must lie in (0, 1]")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")

    def resolved_output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        path = Path(self.output_dir)
        if root and not path.is_absolute():
            return Path(root) / path
        return path

    def provenance(self) -> dict:
        """Everything a report needs to reproduce its runs, learner included."""
        return {
            "datasets": [{"path": d.path, "label_column": d.label_column,
                          "name": d.resolved_name()} for d in self.datasets],
            "p_values": list(self.p_values),
            "r_grid": list(self.r_grid),
            "rho_grid": list(self.rho_grid),
            "methods": [{"name": m.name, **m.config} for m in self.methods],
            "seeds": list(self.seeds),
            "test_fraction": self.test_fraction,
            "ratio_grid": list(self.ratio_grid),
            "calib_folds": self.calib_folds,
            "learner": {
                "n_rounds": self.learner.n_rounds,
                "learning_rate": self.learner.learning_rate,
                "max_bins": self.learner.max_bins,
                "max_depth": self.learner.max_depth,
                "max_leaves": self.learner.max_leaves,
                "min_samples_leaf": self.learner.min_samples_leaf,
            },
            "min_leaf_fraction_per_class": self.min_leaf_fraction_per_class,
            "cluster_range": list(self.cluster_range),
            "alpha": self.alpha,
        }


def _parse_methods(raw) -> tuple[ReweightingMethod, ...]:
    methods = []
    for entry in raw:
        if isinstance(entry, str):
            methods.append(ReweightingMethod(entry))
        else:
            entry = dict(entry)
            methods.append(ReweightingMethod(entry.pop("name"), entry))
    return tuple(methods)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an ExperimentConfig from a TOML or JSON file."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() == ".json":
        payload = json.loads(text)
    elif path.suffix.lower() == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        payload = tomllib.loads(text.decode("utf-8"))
    else:
        raise ConfigError(f"config must be .toml or .json, got {path.suffix!r}")
    return config_from_dict(payload)


def config_from_dict(payload: dict) -> ExperimentConfig:
    payload = dict(payload)
    try:
        datasets = tuple(DatasetEntry(**entry) for entry in payload.pop("datasets"))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid datasets entry: {exc}") from exc
    kwargs: dict = {"datasets": datasets}
    if "methods" in payload:
        kwargs["methods"] = _parse_methods(payload.pop("methods"))
    if "learner" in payload:
        kwargs["learner"] = GBTParams(**payload.pop("learner"))
    tuple_fields = {"p_values", "r_grid", "rho_grid", "seeds", "ratio_grid", "cluster_range"}
    for key, value in payload.items():
        kwargs[key] = tuple(value) if key in tuple_fields else value
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from a key tuple (extensible grids keep old cells)."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class RunRecord:
    dataset: str
    method: str
    p: float
    actual_trusted_ratio: float
    r: float
    rho: float
    seed: int
    kappa: float
    wall_time: float
    flags: tuple[str, ...] = ()

    def key(self) -> tuple:
        return (self.dataset, self.p, self.r, self.rho, self.seed, self.method)

    def to_row(self) -> list[str]:
        return [
            self.dataset, self.method, repr(float(self.p)),
            repr(float(self.actual_trusted_ratio)), repr(float(self.r)),
            repr(float(self.rho)), str(self.seed),
            "" if np.isnan(self.kappa) else repr(float(self.kappa)),
            f"{self.wall_time:.3f}", ";".join(self.flags),
        ]

    @classmethod
    def from_row(cls, row: dict) -> "RunRecord":
        kappa = row["kappa"]
        return cls(
            dataset=row["dataset"],
            method=row["method"],
            p=float(row["p"]),
            actual_trusted_ratio=float(row["actual_trusted_ratio"]),
            r=float(row["r"]),
            rho=float(row["rho"]),
            seed=int(row["seed"]),
            kappa=float(kappa) if kappa not in ("", None) else float("nan"),
            wall_time=float(row["wall_time"]),
            flags=tuple(f for f in row["flags"].split(";") if f),
        )


@dataclass
class BenchmarkReport:
    records: list[RunRecord]
    output_dir: Path
    n_failures: int = 0


def _read_runs(path: Path) -> list[RunRecord]:
    if not path.exists():
        return []
    with path.open(newline="", encoding="utf-8") as handle:
        return [RunRecord.from_row(row) for row in csv.DictReader(handle)]


def _write_runs(path: Path, records: Sequence[RunRecord]) -> None:
    # canonical order so identical configs produce identical bytes
    by_key: dict[tuple, RunRecord] = {}
    for rec in records:
        if rec.key() in by_key:
            warnings.warn(f"duplicate run key {rec.key()}; keeping the latest", stacklevel=2)
        by_key[rec.key()] = rec
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(RUN_COLUMNS)
        for key in sorted(by_key):
            writer.writerow(by_key[key].to_row())


def _default_factory(params: GBTParams):
    def factory():
        return GradientBoostedTrees(params)

    return factory


def _corrupt_cell(untrusted: Dataset, r: float, rho: float,
                  permutation, config: ExperimentConfig,
                  cell_seed: int) -> tuple[Dataset, tuple[str, ...]]:
    flags: tuple[str, ...] = ()
    corrupted = untrusted
    if r > 0:
        spec = ConceptDriftSpec(
            r=r, permutation=permutation,
            min_leaf_fraction_per_class=config.min_leaf_fraction_per_class,
            seed=cell_seed,
        )
        corrupted, audit = inject_concept_drift(corrupted, spec)
        flags += audit.flags
    if rho > 1:
        spec = ClassConditionalSpec(rho=rho, k_range=config.cluster_range,
                                    seed=stable_seed(cell_seed, "subsample"))
        corrupted, audit = inject_class_conditional_shift(corrupted, spec)
        flags += audit.flags
    return corrupted, flags


def _run_cell(args) -> list[RunRecord]:
    (name, p, actual, r, rho, seed, trusted, untrusted, test,
     methods, config, cell_flags_base) = args
    cell_seed = stable_seed(name, p, r, rho, seed)
    permutation = sample_derangement(trusted.n_classes, stable_seed(name, "permutation"))
    try:
        corrupted, corruption_flags = _corrupt_cell(untrusted, r, rho, permutation,
                                                    config, cell_seed)
    except Exception as exc:  # a broken corruption fails the cell, not the grid
        corrupted = None
        corruption_flags = (f"error:corruption:{type(exc).__name__}",)
    factory = _default_factory(config.learner)
    records = []
    for method in methods:
        start = time.perf_counter()
        flags = cell_flags_base + corruption_flags
        if corrupted is None:
            kappa = float("nan")
        else:
            try:
                biq = BiqualityDataset(trusted, corrupted)
                model = train_with_method(biq, method, factory, seed=cell_seed,
                                          calib_folds=config.calib_folds)
                kappa = evaluate_kappa(model, test)
                flags += tuple(model.flags)
            except Exception as exc:  # keep the grid running
                kappa = float("nan")
                flags += (f"error:{type(exc).__name__}",)
        records.append(RunRecord(
            dataset=name, method=method.name, p=p, actual_trusted_ratio=actual,
            r=r, rho=rho, seed=seed, kappa=kappa,
            wall_time=time.perf_counter() - start, flags=tuple(sorted(set(flags))),
        ))
    return records


def run_experiment(config: ExperimentConfig) -> BenchmarkReport:
    """Run the full corruption x method grid; resumable and deterministic.

    Per dataset: shuffle, stratified train/test split, trusted-ratio
    calibration per p, then one corruption per (p, r, rho, seed) cell shared
    by every method.  Records append to ``<dataset>/runs.csv`` and completed
    keys are skipped on rerun.
    """
    out_root = config.resolved_output_dir()
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "config.json").write_text(
        json.dumps(config.provenance(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    all_records: list[RunRecord] = []
    n_failures = 0
    factory = _default_factory(config.learner)

    for entry in config.datasets:
        name = entry.resolved_name()
        dataset = load_csv(entry.path, entry.label_column)
        dataset = shuffle_rows(dataset, stable_seed(name, "shuffle"))
        train, test = stratified_split(dataset, 1.0 - config.test_fraction,
                                       stable_seed(name, "split"))
        runs_path = out_root / name / "runs.csv"
        existing = _read_runs(runs_path)
        done = {rec.key() for rec in existing}
        records = list(existing)

        for p in config.p_values:
            flags_base: tuple[str, ...] = ()
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                actual = calibrate_trusted_ratio(
                    train, p, factory, grid=config.ratio_grid,
                    seed=stable_seed(name, "curve"),
                )
            if any("grid ratio" in str(w.message) for w in caught):
                flags_base += ("trusted_ratio_fallback",)
            trusted, untrusted = stratified_split(train, actual,
                                                  stable_seed(name, p, "trusted"))

            cells = []
            for r in config.r_grid:
                for rho in config.rho_grid:
                    for seed in config.seeds:
                        pending = tuple(
                            m for m in config.methods
                            if (name, p, r, rho, seed, m.name) not in done
                        )
                        if not pending:
                            continue
                        cells.append((name, p, actual, r, rho, seed, trusted,
                                      untrusted, test, pending, config, flags_base))

            # single serialized writer, flushing after every finished cell so
            # interrupted grids resume from the last completed cell
            if config.parallelism > 1 and len(cells) > 1:
                with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
                    for batch in pool.map(_run_cell, cells):
                        records.extend(batch)
                        _write_runs(runs_path, records)
            else:
                for cell in cells:
                    records.extend(_run_cell(cell))
                    _write_runs(runs_path, records)

        _write_runs(runs_path, records)
        n_failures += sum(1 for rec in records if np.isnan(rec.kappa))
        all_records.extend(records)

    return BenchmarkReport(all_records, out_root, n_failures)


def _records_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    if not records:
        raise ValueError("no records to summarize")
    return pd.DataFrame([{
        "dataset": rec.dataset, "method": rec.method, "p": rec.p,
        "r": rec.r, "rho": rec.rho, "seed": rec.seed, "kappa": rec.kappa,
    } for rec in records])


def _curve_auc(frame: pd.DataFrame, axis: str) -> Optional[CurveSummary]:
    curve = frame.groupby(axis)["kappa"].mean().sort_index()
    if len(curve) < 2:
        return None
    return CurveSummary.from_points(list(zip(curve.index, curve.values)))


def summarize(records: Sequence[RunRecord], output_dir: Optional[Path] = None,
              alpha: float = 0.05) -> dict:
    """Per-method AUC tables, Friedman/Nemenyi rank data and pairwise Wilcoxon grids.

    The noise axis (varying r) is summarized at rho = 1 and the subsampling
    axis (varying rho) at r = 0, each per trusted ratio p.  Emitted as CSV
    plus JSON when ``output_dir`` is given.
    """
    frame = _records_frame(records).dropna(subset=["kappa"])
    if frame.empty:
        raise ValueError("no successful records to summarize")
    summary: dict = {"auc": {}, "nemenyi": {}, "wilcoxon": {}, "flags": []}
    methods = sorted(frame["method"].unique())

    for axis, fixed_col, fixed_val in (("r", "rho", 1.0), ("rho", "r", 0.0)):
        sub = frame[frame[fixed_col] == fixed_val]
        if sub.empty:
            summary["flags"].append(f"no_cells_for_{axis}_axis")
            continue
        for p in sorted(sub["p"].unique()):
            at_p = sub[sub["p"] == p]
            table: dict[str, dict[str, float]] = {}
            per_dataset: dict[str, dict[str, float]] = {}
            for method in methods:
                rows = at_p[at_p["method"] == method]
                if rows.empty:
                    summary["flags"].append(f"missing_{method}_{axis}_p{p}")
                    continue
                curve = _curve_auc(rows, axis)
                if curve is not None:
                    table[method] = {"auc": curve.auc, "points": list(curve.points)}
                for ds, ds_rows in rows.groupby("dataset"):
                    ds_curve = _curve_auc(ds_rows, axis)
                    if ds_curve is not None:
                        per_dataset.setdefault(method, {})[ds] = ds_curve.auc
            summary["auc"][(axis, p)] = table

            shared = sorted(set.intersection(*(set(v) for v in per_dataset.values()))) if per_dataset else []
            if len(per_dataset) >= 3 and len(shared) >= 2:
                names = sorted(per_dataset)
                scores = np.array([[per_dataset[m][d] for d in shared] for m in names])
                test, cd, mean_ranks = friedman_nemenyi(scores, alpha)
                summary["nemenyi"][(axis, p)] = {
                    "methods": names,
                    "mean_ranks": mean_ranks.tolist(),
                    "cd": cd,
                    "p_value": test.p_value,
                    "statistic": test.statistic,
                    "decision": test.decision,
                }

    for p in sorted(frame["p"].unique()):
        at_p = frame[frame["p"] == p]
        grids = []
        per_ds = at_p.groupby(["method", "r", "rho", "dataset"])["kappa"].mean()
        for i, m_a in enumerate(methods):
            for m_b in methods[i + 1:]:
                cells = []
                for (r, rho), _ in at_p.groupby(["r", "rho"]):
                    try:
                        a = per_ds.loc[m_a, r, rho]
                        b = per_ds.loc[m_b, r, rho]
                    except KeyError:
                        summary["flags"].append(f"missing_cell_{m_a}_{m_b}_r{r}_rho{rho}")
                        continue
                    shared_ds = a.index.intersection(b.index)
                    if len(shared_ds) == 0:
                        continue
                    result = wilcoxon_signed_rank(a[shared_ds].values, b[shared_ds].values, alpha)
                    symbol = comparison_symbol(result, (a[shared_ds] - b[shared_ds]).values)
                    cells.append({"r": float(r), "rho": float(rho), "symbol": symbol,
                                  "p_value": result.p_value})
                grids.append({"first": m_a, "second": m_b, "cells": cells})
        summary["wilcoxon"][p] = grids

    if output_dir is not None:
        _emit_summary(summary, Path(output_dir))
    return summary


def _emit_summary(summary: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for (axis, p), table in summary["auc"].items():
        frame = pd.DataFrame({"method": list(table), "auc": [v["auc"] for v in table.values()]})
        frame.to_csv(out / f"auc_{axis}_p{p}.csv", index=False)
    for (axis, p), data in summary["nemenyi"].items():
        (out / f"nemenyi_{axis}_p{p}.json").write_text(json.dumps(data, indent=2) + "\n")
    for p, grids in summary["wilcoxon"].items():
        (out / f"wilcoxon_p{p}.json").write_text(json.dumps(grids, indent=2) + "\n")
    if summary["flags"]:
        (out / "flags.json").write_text(json.dumps(summary["flags"], indent=2) + "\n")
