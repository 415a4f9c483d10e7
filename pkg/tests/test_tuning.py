import numpy as np
import pytest
import yaml

from data.corpus import EMOTIONS
from data.synthetic import generate_benchmark
from models.ssm import SsmParams
from tuning.tune_ridge import save_best_lambdas, tune_ridge
from tuning.tune_ssm import (
    BENCHMARK_COLUMNS,
    SWEEP_COLUMNS,
    benchmark_correlations,
    run_benchmark,
    run_sweep,
    tune_n_iter,
)
from utils.errors import InputError


class TestSsmSweep:
    def test_sweep_rows(self, pipeline_config):
        table = run_sweep(pipeline_config(n_iter=2), [0.5, 1.0])
        assert list(table.columns) == SWEEP_COLUMNS
        assert len(table) == 2 * 2 * len(EMOTIONS)
        assert set(table["mode"]) == {"smoother", "smoother-em"}
        assert set(table["A"]) == {0.5, 1.0}

    def test_sweep_needs_values(self, pipeline_config):
        with pytest.raises(InputError):
            run_sweep(pipeline_config(), [])

    def test_n_iter_grid(self, pipeline_config):
        table = tune_n_iter(pipeline_config(mode="filter-em"), [0, 2])
        assert sorted(set(table["n_iter"])) == [0, 2]
        assert len(table) == 2 * len(EMOTIONS)

    def test_n_iter_needs_em(self, pipeline_config):
        with pytest.raises(InputError, match="EM mode"):
            tune_n_iter(pipeline_config(mode="smoother"), [1])


class TestBenchmark:
    def test_correlation_table(self):
        songs = generate_benchmark(n_songs=4, T=30, seed=3)
        table = benchmark_correlations(songs, SsmParams.scalar(A=1.0, Q=1.0, R=5.0))
        assert list(table["song_id"]) == [song.song_id for song in songs]
        assert table[["r_observed", "r_estimate"]].notna().all().all()

    def test_run_benchmark(self):
        songs = generate_benchmark(n_songs=6, T=40, seed=11)
        table = run_benchmark(songs, A_values=(1.0, 2.0), n_iter=3)
        assert list(table.columns) == BENCHMARK_COLUMNS
        assert list(table["em"]) == [False, True, False, True]
        assert list(table["setting"]) == ["smoother A=1", "smoother-em A=1", "smoother A=2", "smoother-em A=2"]
        assert (table["n_songs"] == 6).all()
        assert np.allclose(table["mean_r_observed"], table["mean_r_observed"].iloc[0])


class TestRidgeTuning:
    def test_table_and_saved_lambdas(self, pipeline_config, tmp_path):
        config = pipeline_config(lambdas=(0.1, 1.0, 10.0), ridge_folds=5)
        table = tune_ridge(config)
        assert len(table) == 3 * len(EMOTIONS)
        assert table.groupby("emotion")["best"].sum().tolist() == [1] * len(EMOTIONS)

        path = tmp_path / "best_params.yaml"
        path.write_text(yaml.safe_dump({"ssm": {"A": 1.0}}))
        best = save_best_lambdas(table, str(path))
        saved = yaml.safe_load(path.read_text())
        assert saved["ssm"] == {"A": 1.0}
        assert set(saved["ridge"]) == set(EMOTIONS) == set(best)
        assert all(entry["lambda"] in (0.1, 1.0, 10.0) for entry in saved["ridge"].values())
