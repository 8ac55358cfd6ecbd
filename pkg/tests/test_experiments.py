import dataclasses
import math

import pytest

from halstream.errors import ValidationError
from halstream.experiments import (
    DataSource, ExperimentSpec, SpeedupSpec, csv_text, plot_series, read_csv, run_fixed_budget,
    run_shuffle_ablation, run_speedup_experiment, run_strategy_comparison, run_theory_verification,
    run_window_sweep,
)
from halstream.model import TrainConfig
from halstream.pseudo import Strategy
from halstream.stream import SyntheticSpec

SMALL = ExperimentSpec(
    data=DataSource(SyntheticSpec(n_users=10, n_categories=8, k=2, events_per_user=80, label_period=10)),
    train=TrainConfig(dim=8, max_epochs=3, patience=2, batch_edges=20),
    seeds=(0, 1),
)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestSpec:
    def test_needs_strategy_and_seed(self):
        with pytest.raises(ValidationError):
            dataclasses.replace(SMALL, strategies=())
        with pytest.raises(ValidationError):
            dataclasses.replace(SMALL, seeds=())

    def test_strategies_parsed(self):
        spec = dataclasses.replace(SMALL, strategies=("ha", "Default"))
        assert spec.strategies == (Strategy.HA, Strategy.DEFAULT)

    def test_data_source_validation(self):
        with pytest.raises(ValidationError):
            DataSource(synthetic=None)
        with pytest.raises(ValidationError):
            DataSource(fractions=(0.5, 0.5, 0.5))


class TestComparison:
    def test_single_strategy_single_seed(self, tmp_path):
        spec = dataclasses.replace(SMALL, strategies=("ha",), seeds=(0,))
        res = run_strategy_comparison(spec, tmp_path)
        assert [(r["strategy"], r["split"]) for r in res.rows] == [("ha", "valid"), ("ha", "test")]
        files = tree_bytes(tmp_path / "compare")
        assert {"summary.csv", "medians.csv", "spec.snapshot", "traces/ha_seed0.jsonl"} <= set(files)

    def test_rerun_byte_identical(self, tmp_path):
        run_strategy_comparison(SMALL, tmp_path / "a")
        run_strategy_comparison(SMALL, tmp_path / "b", workers=2)
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_csv_round_trip(self, tmp_path):
        res = run_strategy_comparison(dataclasses.replace(SMALL, seeds=(0,)), tmp_path)
        path = res.out_dir / "summary.csv"
        rows = read_csv(path)
        assert csv_text(tuple(rows[0]), rows) == path.read_text()


class TestBudget:
    def test_zero_budget_rejected(self):
        with pytest.raises(ValidationError):
            run_fixed_budget(dataclasses.replace(SMALL, budget_epochs=0))

    def test_default_x_matches_time(self, tmp_path):
        res = run_fixed_budget(SMALL, tmp_path)
        for seed in SMALL.seeds:
            runs = {r.strategy: r for r in res.runs if r.seed == seed}
            slowest = max(runs[s].total_time for s in ("ha", "ma", "pf"))
            dx = runs["default-x"]
            assert dx.total_time >= slowest
            assert runs["ha"].epochs_run == 1
            # one epoch fewer would not have been enough
            assert (dx.epochs_run - 1) * runs["default"].total_time < slowest

    def test_rerun_identical(self, tmp_path):
        run_fixed_budget(SMALL, tmp_path / "a")
        run_fixed_budget(SMALL, tmp_path / "b")
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


class TestSweep:
    def test_single_point_with_baseline(self, tmp_path):
        res = run_window_sweep(SMALL, grid=(3,), out_dir=tmp_path)
        assert [r["w"] for r in res.rows] == [3.0, 3.0]
        base = read_csv(tmp_path / "sweep" / "baseline.csv")
        assert [r["strategy"] for r in base] == ["default", "default"]
        assert list(read_csv(tmp_path / "sweep" / "summary.csv")[0]) == ["w", "seed", "ndcg10", "steps"]

    def test_w_one_is_persistent_forecast(self):
        spec = dataclasses.replace(SMALL, seeds=(0,))
        sweep = run_window_sweep(spec, grid=(1,))
        pf = run_strategy_comparison(dataclasses.replace(spec, strategies=("pf",)))
        assert sweep.rows[0]["ndcg10"] == pf.rows[1]["ndcg10"]

    def test_grid_validation(self):
        with pytest.raises(ValidationError):
            run_window_sweep(SMALL, grid=())
        with pytest.raises(ValidationError):
            run_window_sweep(SMALL, grid=(0.5,))


class TestAblation:
    def test_single_edge_train_delta_zero(self):
        spec = dataclasses.replace(SMALL, data=dataclasses.replace(SMALL.data, train_keep=1e-6), seeds=(0,))
        res = run_shuffle_ablation(spec, "edges")
        assert all(r["delta"] == 0.0 for r in res.rows)

    def test_paired_rows(self, tmp_path):
        spec = dataclasses.replace(SMALL, strategies=("default", "ha"))
        res = run_shuffle_ablation(spec, "targets", tmp_path)
        assert [(r["strategy"], r["seed"]) for r in res.rows] == [("default", 0), ("default", 1), ("ha", 0), ("ha", 1)]
        for r in res.rows:
            assert r["delta"] == r["shuffled"] - r["original"]
        assert (tmp_path / "ablate-targets" / "summary.csv").exists()

    def test_bad_mode(self):
        with pytest.raises(ValidationError):
            run_shuffle_ablation(SMALL, "labels")


class TestSpeedup:
    def test_h1_ratio_one_and_shared_oh(self):
        res = run_speedup_experiment(SpeedupSpec(hs=(1, 4), seeds=(0, 1, 2)))
        assert res.row(1)["ratio"] == 1.0
        assert res.row(1)["predicted_ratio"] == 1.0
        assert res.row(1)["steps_oh"] == res.row(4)["steps_oh"]

    def test_censored_not_an_error(self, tmp_path):
        res = run_speedup_experiment(SpeedupSpec(hs=(1, 16), seeds=(0,), max_steps=5), out_dir=tmp_path)
        assert res.row(1)["censored_oh"] == 1 and math.isinf(res.row(1)["steps_oh"])
        assert read_csv(tmp_path / "speedup" / "per_seed.csv")[0]["steps_oh"] == ""

    def test_validation(self):
        with pytest.raises(ValidationError):
            SpeedupSpec(k=50, n=50)
        with pytest.raises(ValidationError):
            SpeedupSpec(tau=0)

    def test_deterministic(self, tmp_path):
        spec = SpeedupSpec(hs=(1, 8), seeds=(0, 1))
        run_speedup_experiment(spec, tmp_path / "a")
        run_speedup_experiment(spec, tmp_path / "b", workers=2)
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_theory_rows(tmp_path):
    rows, coeffs = run_theory_verification(grid=((2, 1, 0.7), (5, 5, 1.0)), samples=50_000, out_dir=tmp_path)
    assert [r["pass"] for r in rows + coeffs] == ["pass"] * 4
    header = (tmp_path / "verify-theory" / "summary.csv").read_text().splitlines()[0]
    assert header == "k,h,u,analytic_mean,mc_mean,mean_se,analytic_var,mc_var,var_se,pass"


def test_plot_series(tmp_path):
    (tmp_path / "a.jsonl").write_text('{"step": 1, "time_s": 0.5, "epoch": 1, "train_loss": 1.0, "val_ndcg": 0.3}\n'
                                      '{"step": 2, "time_s": 1.0, "epoch": 2, "train_loss": 0.9, "val_ndcg": null}\n')
    rows = plot_series([tmp_path / "a.jsonl"])
    assert rows == [{"x": 0.5, "y": 0.3, "series": "a"}]
