import csv
import json

import numpy as np
import pytest

from biqual.data import load_csv, make_two_moons, save_csv, stratified_split, shuffle_rows
from biqual.harness import (
    ConfigError,
    DatasetEntry,
    ExperimentConfig,
    RunRecord,
    config_from_dict,
    load_config,
    run_experiment,
    stable_seed,
    summarize,
)
from biqual.learners import GBTParams
from biqual.reweighting import ReweightingMethod


@pytest.fixture()
def moon_csvs(tmp_path):
    paths = []
    for i, name in enumerate(("alpha", "beta")):
        d = make_two_moons(260, 0.15 + 0.05 * i, seed=i)
        path = tmp_path / f"{name}.csv"
        save_csv(d, path, "label")
        paths.append(DatasetEntry(str(path), "label", name))
    return tuple(paths)


def small_config(moon_csvs, out_dir, **overrides):
    base = dict(
        datasets=moon_csvs,
        p_values=(0.5,),
        r_grid=(0.0, 0.3),
        rho_grid=(1.0,),
        methods=(ReweightingMethod("NoCorrection"), ReweightingMethod("TrustedOnly"),
                 ReweightingMethod("IRBL")),
        seeds=(0, 1),
        output_dir=str(out_dir),
        learner=GBTParams(n_rounds=6, max_leaves=6, min_samples_leaf=3.0),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def read_rows(path, drop_wall_time=True):
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if drop_wall_time:
        i = rows[0].index("wall_time")
        rows = [[c for j, c in enumerate(row) if j != i] for row in rows]
    return rows


class TestConfig:
    def test_validation(self, moon_csvs):
        with pytest.raises(ConfigError):
            ExperimentConfig(datasets=())
        with pytest.raises(ConfigError):
            ExperimentConfig(datasets=moon_csvs, r_grid=(1.5,))
        with pytest.raises(ConfigError):
            ExperimentConfig(datasets=moon_csvs, rho_grid=(0.5,))
        with pytest.raises(ConfigError):
            ExperimentConfig(datasets=moon_csvs, p_values=(0.0,))
        with pytest.raises(ConfigError):
            ExperimentConfig(datasets=moon_csvs, parallelism=0)

    def test_load_toml_and_json(self, tmp_path, moon_csvs):
        payload = {
            "datasets": [{"path": moon_csvs[0].path, "label_column": "label", "name": "a"}],
            "p_values": [0.5],
            "methods": ["NoCorrection", {"name": "K-KMM", "kmm": {"B": 10.0}}],
            "learner": {"n_rounds": 4},
        }
        json_path = tmp_path / "cfg.json"
        json_path.write_text(json.dumps(payload))
        cfg = load_config(json_path)
        assert cfg.methods[1].name == "K-KMM"
        assert cfg.methods[1].config == {"kmm": {"B": 10.0}}
        assert cfg.learner.n_rounds == 4

        toml_path = tmp_path / "cfg.toml"
        toml_path.write_text(
            'p_values = [0.5]\nmethods = ["NoCorrection"]\n'
            f'[[datasets]]\npath = "{moon_csvs[0].path}"\nlabel_column = "label"\n'
        )
        cfg2 = load_config(toml_path)
        assert cfg2.p_values == (0.5,)

    def test_bad_config_raises_config_error(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"p_values": [0.5]}))
        with pytest.raises(ConfigError):
            load_config(path)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "cfg.yaml")

    def test_output_root_env(self, moon_csvs, monkeypatch, tmp_path):
        monkeypatch.setenv("BIQUAL_OUTPUT_ROOT", str(tmp_path / "root"))
        cfg = small_config(moon_csvs, "relative_runs")
        assert str(cfg.resolved_output_dir()).startswith(str(tmp_path / "root"))

    def test_stable_seed_is_deterministic(self):
        assert stable_seed("a", 0.5, 1) == stable_seed("a", 0.5, 1)
        assert stable_seed("a", 0.5, 1) != stable_seed("a", 0.5, 2)


class TestRunExperiment:
    def test_grid_completes_and_persists(self, moon_csvs, tmp_path):
        cfg = small_config(moon_csvs, tmp_path / "out")
        report = run_experiment(cfg)
        # 2 datasets x 1 p x 2 r x 1 rho x 2 seeds x 3 methods
        assert len(report.records) == 24
        assert report.n_failures == 0
        for entry in moon_csvs:
            assert (tmp_path / "out" / entry.name / "runs.csv").exists()
        assert all(-1.0 <= rec.kappa <= 1.0 for rec in report.records)

    def test_byte_identical_reruns(self, moon_csvs, tmp_path):
        cfg1 = small_config(moon_csvs, tmp_path / "a")
        cfg2 = small_config(moon_csvs, tmp_path / "b")
        run_experiment(cfg1)
        run_experiment(cfg2)
        for entry in moon_csvs:
            rows_a = read_rows(tmp_path / "a" / entry.name / "runs.csv")
            rows_b = read_rows(tmp_path / "b" / entry.name / "runs.csv")
            assert rows_a == rows_b

    def test_resume_matches_uninterrupted(self, moon_csvs, tmp_path):
        cfg_full = small_config(moon_csvs, tmp_path / "full")
        run_experiment(cfg_full)
        # simulate an interrupted run: keep only a prefix of the records
        for entry in moon_csvs:
            src = tmp_path / "full" / entry.name / "runs.csv"
            dst = tmp_path / "resumed" / entry.name / "runs.csv"
            dst.parent.mkdir(parents=True)
            with open(src, newline="") as handle:
                rows = list(csv.reader(handle))
            with open(dst, "w", newline="") as handle:
                csv.writer(handle).writerows(rows[:4])
        cfg_resume = small_config(moon_csvs, tmp_path / "resumed")
        run_experiment(cfg_resume)
        for entry in moon_csvs:
            assert read_rows(tmp_path / "full" / entry.name / "runs.csv") == \
                   read_rows(tmp_path / "resumed" / entry.name / "runs.csv")

    def test_parallel_matches_sequential(self, moon_csvs, tmp_path):
        cfg_seq = small_config(moon_csvs[:1], tmp_path / "seq")
        cfg_par = small_config(moon_csvs[:1], tmp_path / "par", parallelism=2)
        run_experiment(cfg_seq)
        run_experiment(cfg_par)
        assert read_rows(tmp_path / "seq" / "alpha" / "runs.csv") == \
               read_rows(tmp_path / "par" / "alpha" / "runs.csv")

    def test_test_split_isolated_from_corruption(self, moon_csvs, tmp_path):
        # the 20% test rows are decided before any corruption; re-deriving the
        # split from the same seeds must give rows disjoint from corrupted data
        entry = moon_csvs[0]
        d = shuffle_rows(load_csv(entry.path, entry.label_column), stable_seed("alpha", "shuffle"))
        train, test = stratified_split(d, 0.8, stable_seed("alpha", "split"))
        train_rows = {tuple(row) for row in train.features}
        assert all(tuple(row) not in train_rows for row in test.features)

    def test_clean_data_no_correction_beats_trusted_only(self, tmp_path):
        # no corruption: the pooled model sees far more data than TrustedOnly.
        # at r=0 the per-cell seed changes nothing, so the repetition axis is
        # five independent blob draws instead
        entries = []
        for i in range(5):
            path = tmp_path / f"moons{i}.csv"
            save_csv(make_two_moons(600, 0.2, seed=i), path, "label")
            entries.append(DatasetEntry(str(path), "label", f"moons{i}"))
        cfg = ExperimentConfig(
            datasets=tuple(entries),
            p_values=(0.25,), r_grid=(0.0,), rho_grid=(1.0,),
            methods=(ReweightingMethod("NoCorrection"), ReweightingMethod("TrustedOnly")),
            seeds=(0,), output_dir=str(tmp_path / "out"),
            learner=GBTParams(n_rounds=10, max_leaves=8, min_samples_leaf=3.0),
        )
        report = run_experiment(cfg)
        by_draw = {}
        for rec in report.records:
            by_draw.setdefault(rec.dataset, {})[rec.method] = rec.kappa
        wins = sum(cells["NoCorrection"] >= cells["TrustedOnly"] for cells in by_draw.values())
        assert wins >= 0.8 * len(by_draw)

    def test_failed_cells_are_recorded(self, moon_csvs, tmp_path):
        # a method that always explodes: K-KMM with an invalid batch size is
        # rejected at weight time, recorded with an error flag, grid continues
        cfg = small_config(
            moon_csvs[:1], tmp_path / "out",
            methods=(ReweightingMethod("NoCorrection"),
                     ReweightingMethod("K-KMM", {"kmm": {"batch_size": 0}})),
            r_grid=(0.0,), seeds=(0,),
        )
        report = run_experiment(cfg)
        failed = [rec for rec in report.records if rec.method == "K-KMM"]
        assert len(failed) == 1
        assert np.isnan(failed[0].kappa)
        assert any(f.startswith("error:") for f in failed[0].flags)
        ok = [rec for rec in report.records if rec.method == "NoCorrection"]
        assert not np.isnan(ok[0].kappa)
        assert report.n_failures == 1


class TestSummarize:
    def test_outputs_and_shapes(self, moon_csvs, tmp_path):
        cfg = small_config(moon_csvs, tmp_path / "out")
        report = run_experiment(cfg)
        summary = summarize(report.records, output_dir=tmp_path / "summary")
        assert ("r", 0.5) in summary["auc"]
        table = summary["auc"][("r", 0.5)]
        assert set(table) == {"NoCorrection", "TrustedOnly", "IRBL"}
        assert (tmp_path / "summary" / "auc_r_p0.5.csv").exists()
        assert (tmp_path / "summary" / "wilcoxon_p0.5.json").exists()
        grids = json.loads((tmp_path / "summary" / "wilcoxon_p0.5.json").read_text())
        assert all(cell["symbol"] in ("win", "tie", "loss")
                   for grid in grids for cell in grid["cells"])

    def test_identical_methods_tie_everywhere(self):
        records = []
        for dataset in ("d1", "d2", "d3", "d4", "d5"):
            for r in (0.0, 0.25):
                for method in ("A", "B"):
                    records.append(RunRecord(dataset, method, 0.5, 0.1, r, 1.0, 0,
                                             kappa=0.5 + r, wall_time=0.0))
        records = [rec for rec in records]
        summary = summarize(records)
        cells = summary["wilcoxon"][0.5][0]["cells"]
        assert len(cells) == 2
        assert all(cell["symbol"] == "tie" for cell in cells)

    def test_dominance_gives_rank_order(self):
        records = []
        rng = np.random.default_rng(0)
        for dataset in ("d1", "d2", "d3"):
            base = rng.uniform(0.3, 0.5)
            for r in (0.0, 0.25, 0.5):
                for gap, method in enumerate(("best", "mid", "worst")):
                    records.append(RunRecord(dataset, method, 0.5, 0.1, r, 1.0, 0,
                                             kappa=base - 0.1 * gap - 0.05 * r, wall_time=0.0))
        summary = summarize(records)
        data = summary["nemenyi"][("r", 0.5)]
        ranks = dict(zip(data["methods"], data["mean_ranks"]))
        assert ranks["best"] == 1.0 and ranks["mid"] == 2.0 and ranks["worst"] == 3.0

    def test_single_method_no_tests(self):
        records = [RunRecord("d1", "A", 0.5, 0.1, r, 1.0, 0, kappa=0.5, wall_time=0.0)
                   for r in (0.0, 0.5)]
        summary = summarize(records)
        assert list(summary["auc"][("r", 0.5)]) == ["A"]
        assert summary["nemenyi"] == {}
        assert summary["wilcoxon"][0.5] == []

    def test_empty_records_error(self):
        with pytest.raises(ValueError):
            summarize([])
