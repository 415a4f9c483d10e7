# tuning/tune_ssm.py

import argparse
import dataclasses
import os
from typing import Dict, List, Optional, Sequence

import pandas as pd
import yaml
from joblib import Parallel, delayed
from tqdm import tqdm

from data.corpus import EMOTIONS
from data.synthetic import SyntheticSong
from models.ssm import InitialBelief, SsmParams, em_fit, kalman_summary
from utils.errors import InputError
from utils.evalstats import pearson_or_none
from utils.logger import logger
from utils.pipeline import (
    PipelineConfig,
    evaluate_predictions,
    load_corpora,
    predict_verses,
    smooth_predictions,
    train_verse,
)

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
CONFIG_PATH = os.path.join(BASE_DIR, "config.yaml")

SWEEP_COLUMNS = ["A", "mode", "emotion", "r", "r_verse", "delta", "p", "significant"]
N_ITER_COLUMNS = ["n_iter", "emotion", "r"]
BENCHMARK_COLUMNS = ["setting", "A", "em", "mean_r_observed", "mean_r_estimate", "improved", "n_songs"]


def _verse_stage(config: PipelineConfig):
    corpora = load_corpora(config)
    models = train_verse(config, corpora)
    return corpora.songs, predict_verses(models, corpora, clamp=config.clamp)


def _sweep_setting(config: PipelineConfig, songs, verse_predictions) -> List[Dict[str, object]]:
    means, _, _ = smooth_predictions(config, songs, verse_predictions)
    reports, comparisons, _ = evaluate_predictions(songs, verse_predictions, means, config.mode)
    if not reports:
        raise InputError("sweeps need songs with gold labels")
    baseline, ssm = reports
    rows = []
    for emotion, comparison in zip(EMOTIONS, comparisons):
        r, r_verse = ssm.r[emotion], baseline.r[emotion]
        rows.append({
            "A": config.A,
            "mode": config.mode,
            "emotion": emotion,
            "r": r,
            "r_verse": r_verse,
            "delta": None if r is None or r_verse is None else r - r_verse,
            "p": comparison.get("p"),
            "significant": comparison.get("significant"),
        })
    return rows


def run_sweep(
    config: PipelineConfig,
    A_values: Sequence[float],
    modes: Sequence[str] = ("smoother", "smoother-em"),
) -> pd.DataFrame:
    """
    Pooled r per (initial A, mode, emotion) against the verse-level baseline,
    with the Williams p-value of the difference.
    """
    if not A_values:
        raise InputError("sweep needs at least one A value")
    songs, verse_predictions = _verse_stage(config)
    settings = [dataclasses.replace(config, A=float(a), mode=mode, n_jobs=1) for a in A_values for mode in modes]
    logger.info(f"Starting sweep over {len(settings)} settings")
    results = Parallel(n_jobs=config.n_jobs)(
        delayed(_sweep_setting)(setting, songs, verse_predictions) for setting in tqdm(settings, desc="SSM sweep")
    )
    return pd.DataFrame([row for rows in results for row in rows], columns=SWEEP_COLUMNS)


def tune_n_iter(config: PipelineConfig, n_iter_values: Sequence[int]) -> pd.DataFrame:
    """Pooled r of the configured EM mode for each number of EM iterations."""
    if not config.uses_em:
        raise InputError(f"n_iter tuning needs an EM mode, got {config.mode!r}")
    songs, verse_predictions = _verse_stage(config)
    rows = []
    for n_iter in tqdm(n_iter_values, desc="n_iter grid"):
        setting = dataclasses.replace(config, n_iter=int(n_iter))
        means, _, _ = smooth_predictions(setting, songs, verse_predictions)
        reports, _, _ = evaluate_predictions(songs, verse_predictions, means, setting.mode)
        if not reports:
            raise InputError("n_iter tuning needs songs with gold labels")
        rows += [{"n_iter": int(n_iter), "emotion": emotion, "r": reports[1].r[emotion]} for emotion in EMOTIONS]
        logger.info(f"n_iter={n_iter}: " + ", ".join(f"{e}={reports[1].r[e]}" for e in EMOTIONS))
    return pd.DataFrame(rows, columns=N_ITER_COLUMNS)


# --- Synthetic benchmark ---
def _initial(song: SyntheticSong, initial_cov: float) -> InitialBelief:
    return InitialBelief.from_first_observation(song.observed[0], cov=initial_cov)


def benchmark_correlations(
    songs: Sequence[SyntheticSong], params: SsmParams, method: str = "smoother", initial_cov: float = 2.0
) -> pd.DataFrame:
    """Per-song r of the raw observations and of the SSM estimate against the latent truth."""
    rows = []
    for song in songs:
        means, _ = kalman_summary(song.observed, params, _initial(song, initial_cov), method)
        rows.append({
            "song_id": song.song_id,
            "r_observed": pearson_or_none(song.observed, song.latent),
            "r_estimate": pearson_or_none(means[:, 0], song.latent),
        })
    return pd.DataFrame(rows, columns=["song_id", "r_observed", "r_estimate"])


def fit_benchmark_params(
    songs: Sequence[SyntheticSong],
    params: SsmParams,
    n_iter: int = 30,
    which: Sequence[str] = ("A", "Q", "R"),
    initial_cov: float = 2.0,
) -> SsmParams:
    fitted, trace = em_fit(
        [(song.observed, _initial(song, initial_cov)) for song in songs], params, n_iter=n_iter, which=which
    )
    logger.info(f"Benchmark EM from A={params.A[0, 0]:g}: loglik {trace[0]:.3f} -> {trace[-1]:.3f}")
    return fitted


def run_benchmark(
    songs: Sequence[SyntheticSong],
    A_values: Sequence[float] = (0.5, 1.0, 2.0),
    Q: float = 1.0,
    R: float = 5.0,
    n_iter: int = 30,
    method: str = "smoother",
) -> pd.DataFrame:
    """
    Mean per-song r for each initial A, with fixed parameters and after EM.
    """
    rows = []
    for a in A_values:
        start = SsmParams.scalar(A=a, C=1.0, Q=Q, R=R)
        for em, params in ((False, start), (True, fit_benchmark_params(songs, start, n_iter=n_iter))):
            scores = benchmark_correlations(songs, params, method).dropna()
            rows.append({
                "setting": f"{method}{'-em' if em else ''} A={a:g}",
                "A": a,
                "em": em,
                "mean_r_observed": float(scores["r_observed"].mean()),
                "mean_r_estimate": float(scores["r_estimate"].mean()),
                "improved": int((scores["r_estimate"] > scores["r_observed"]).sum()),
                "n_songs": len(scores),
            })
    return pd.DataFrame(rows, columns=BENCHMARK_COLUMNS)


def _load_grid() -> dict:
    try:
        with open(CONFIG_PATH, "r") as f:
            return (yaml.safe_load(f) or {}).get("ssm_params", {})
    except Exception as e:
        logger.error(f"Failed to load config.yaml: {e}")
        raise


def main(argv: Optional[Sequence[str]] = None) -> None:
    parser = argparse.ArgumentParser(description="Initial-parameter sweep and n_iter grid for the SSM stage")
    parser.add_argument("--output", default=os.path.join(BASE_DIR, "..", "output", "ssm_tuning.csv"))
    parser.add_argument("--n-iter", action="store_true", help="Tune n_iter instead of sweeping A")
    args = parser.parse_args(argv)

    grid = _load_grid()
    config = PipelineConfig.from_sources()
    if args.n_iter:
        table = tune_n_iter(config, grid.get("n_iter_values", [1, 3, 5, 7, 10]))
        best = table.groupby("n_iter")["r"].mean().idxmax()
        logger.info(f"Best n_iter by mean pooled r: {best}")
    else:
        table = run_sweep(config, grid.get("sweep", {}).get("A", [0.5, 1, 2]))
    os.makedirs(os.path.dirname(os.path.abspath(args.output)), exist_ok=True)
    table.to_csv(args.output, index=False, lineterminator="\n")
    print(table.to_string(index=False))


if __name__ == "__main__":
    main()
