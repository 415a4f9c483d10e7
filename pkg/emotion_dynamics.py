"""
Command-line entry point.

    python emotion_dynamics.py pipeline [--config tuning/config.yaml] [--mode smoother-em] [--sweep A=0.5,1,2]
    python emotion_dynamics.py train-verse | predict-verse | smooth | evaluate | plot | benchmark

Exit codes: 0 success, 1 input error, 2 numeric failure.
"""

import argparse
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import yaml

from data.corpus import EMOTIONS, load_songs
from data.synthetic import generate_benchmark, save_benchmark
from models.verse_model import load_models, save_models
from tuning.tune_ssm import run_benchmark, run_sweep
from utils.errors import InputError, NumericError
from utils.evalstats import comparison_row, evaluate, save_comparisons, save_report
from utils.lexicons import save_vocabulary, save_word_feature_matrix
from utils.logger import logger, set_verbose
from utils.pipeline import (
    MODES,
    PipelineConfig,
    build_traces,
    gold_matrix,
    load_corpora,
    load_predictions,
    predict_verses,
    run_pipeline,
    save_predictions,
    smooth_predictions,
    train_verse,
    write_outputs,
)
from utils.plotting import emit_plot, load_traces_csv
from utils.profiler import log_latency

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


def parse_sweep(value: str) -> List[float]:
    """`A=0.5,1,2` -> [0.5, 1.0, 2.0]; only the transition parameter can be swept."""
    name, _, values = value.partition("=")
    if name.strip() != "A" or not values:
        raise argparse.ArgumentTypeError("sweep must look like A=0.5,1,2")
    try:
        return [float(v) for v in values.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad sweep value: {e}") from e


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config (default tuning/config.yaml)")
    common.add_argument("--verbose", action="store_true", help="Debug logging")
    common.add_argument("--lexicon-dir", dest="lexicon_dir", type=Path)
    common.add_argument("--source", dest="source_path", type=Path, help="Source sentences TSV")
    common.add_argument("--songs", dest="songs_path", type=Path, help="Songs JSONL")
    common.add_argument("--output", dest="output_dir", type=Path)
    common.add_argument("--poly-degree", dest="poly_degree", type=int)
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--n-iter", dest="n_iter", type=int)
    common.add_argument("-k", "--folds", dest="k", type=int, help="Song-level CV folds")
    common.add_argument("--seed", type=int)
    for name in ("A", "C", "Q", "R"):
        common.add_argument(f"--{name}", dest=name, type=float, help=f"Initial {name}")
    common.add_argument("--initial-cov", dest="initial_cov", type=float)
    common.add_argument("--clamp", action="store_true", default=None, help="Clip verse predictions to range")
    common.add_argument("--per-song", dest="per_song", action="store_true", default=None)
    common.add_argument("--plot-format", dest="plot_format", choices=("svg", "csv", "none"))

    parser = argparse.ArgumentParser(description="Emotion dynamics of song lyrics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", parents=[common], help="Train, predict, smooth, evaluate and plot")
    p.add_argument("--sweep", type=parse_sweep, help="Initial-parameter sweep, e.g. A=0.5,1,2")

    sub.add_parser("train-verse", parents=[common], help="Train the per-emotion ridge models")

    p = sub.add_parser("predict-verse", parents=[common], help="Verse-level predictions from saved models")
    p.add_argument("--models", type=Path, required=True, help="Directory with ridge_<emotion>.tsv")

    p = sub.add_parser("smooth", parents=[common], help="Filter/smooth a verse prediction table")
    p.add_argument("--predictions", type=Path, required=True)

    p = sub.add_parser("evaluate", parents=[common], help="Pearson r (and Williams test) of prediction tables")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--baseline", type=Path, help="Second prediction table to compare against")
    p.add_argument("--name", default="model")

    p = sub.add_parser("plot", parents=[common], help="Render SVG charts from a trace CSV")
    p.add_argument("--traces", type=Path, required=True)

    p = sub.add_parser("benchmark", parents=[common], help="Synthetic random-walk smoothing benchmark")
    p.add_argument("--n-songs", dest="n_songs", type=int, default=100)
    p.add_argument("--length", type=int, default=80)
    p.add_argument("--level", type=float, default=5.0)
    p.add_argument("--sweep-values", dest="sweep_values", type=parse_sweep, default=[0.5, 1.0, 2.0])
    return parser


OVERRIDE_KEYS = (
    "lexicon_dir", "source_path", "songs_path", "output_dir", "poly_degree", "mode", "n_iter", "k", "seed",
    "A", "C", "Q", "R", "initial_cov", "clamp", "per_song", "plot_format",
)


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides: Dict[str, object] = {}
    for key in OVERRIDE_KEYS:
        value = getattr(args, key, None)
        if isinstance(value, Path):
            value = value.resolve()
        overrides[key] = value
    return PipelineConfig.from_sources(args.config, overrides)


# --- Subcommands ---
def cmd_pipeline(args, config: PipelineConfig) -> None:
    if args.sweep:
        table = run_sweep(config, args.sweep)
        config.output_dir.mkdir(parents=True, exist_ok=True)
        table.to_csv(config.output_dir / "sweep.csv", index=False, lineterminator="\n")
        print(table.to_string(index=False))
        return
    result = run_pipeline(config)
    paths = write_outputs(result)
    for report in result.reports:
        print(report.to_frame().query("song_id == ''").to_string(index=False))
    for name, path in paths.items():
        print(f"{name}: {path}")


def cmd_train_verse(args, config: PipelineConfig) -> None:
    corpora = load_corpora(config)
    models = train_verse(config, corpora)
    save_models(models, config.output_dir / "models")
    save_vocabulary(corpora.word_matrix.vocabulary, config.output_dir / "vocabulary.tsv")
    save_word_feature_matrix(corpora.word_matrix, config.output_dir / "word_features.tsv")
    for emotion, model in models.items():
        print(f"{emotion}: lambda={model.lam:g}")


def cmd_predict_verse(args, config: PipelineConfig) -> None:
    corpora = load_corpora(config)
    models = load_models(args.models)
    path = config.output_dir / "verse_predictions.csv"
    save_predictions(corpora.songs, predict_verses(models, corpora, clamp=config.clamp), path)
    print(path)


def cmd_smooth(args, config: PipelineConfig) -> None:
    if config.mode == "verse-only":
        raise InputError("smooth needs a filter or smoother mode")
    songs = load_songs(config.songs_path)
    predictions = load_predictions(args.predictions, songs)
    means, stds, folds = smooth_predictions(config, songs, predictions)
    out = config.output_dir
    save_predictions(songs, means, out / "ssm_predictions.csv")
    emit_plot(build_traces(songs, predictions, means, stds), out / "dynamics.csv", "csv")
    if folds:
        with (out / "fold_params.yaml").open("w", encoding="utf-8") as f:
            yaml.safe_dump(folds, f, sort_keys=True)
    print(out / "ssm_predictions.csv")


def cmd_evaluate(args, config: PipelineConfig) -> None:
    songs = load_songs(config.songs_path)
    gold = gold_matrix(songs)
    if gold is None:
        raise InputError(f"{config.songs_path}: evaluation needs gold labels on every song")
    song_ids = [song.song_id for song in songs for _ in song.verses]
    predictions = load_predictions(args.predictions, songs)
    reports = [evaluate(predictions, gold, EMOTIONS, song_ids, per_song=config.per_song, model=args.name)]
    if args.baseline:
        baseline = load_predictions(args.baseline, songs)
        reports.append(evaluate(baseline, gold, EMOTIONS, song_ids, per_song=config.per_song, model="baseline"))
        rows = [
            comparison_row(emotion, args.name, "baseline", predictions[:, j], baseline[:, j], gold[:, j])
            for j, emotion in enumerate(EMOTIONS)
        ]
        save_comparisons(rows, config.output_dir / "significance.csv")
    save_report(reports, config.output_dir / "evaluation.csv")
    for report in reports:
        print(report.to_frame().query("song_id == ''").to_string(index=False))


def cmd_plot(args, config: PipelineConfig) -> None:
    traces = load_traces_csv(args.traces)
    if not traces:
        raise InputError(f"{args.traces}: no traces")
    for song_id in dict.fromkeys(trace.song_id for trace in traces):
        path = emit_plot([t for t in traces if t.song_id == song_id], config.output_dir / "plots" / f"{song_id}.svg")
        print(path)


def cmd_benchmark(args, config: PipelineConfig) -> None:
    songs = generate_benchmark(args.n_songs, args.length, Q=config.Q, R=config.R, level=args.level, seed=config.seed)
    save_benchmark(songs, config.output_dir / "benchmark_songs.csv")
    table = run_benchmark(songs, args.sweep_values, Q=config.Q, R=config.R, n_iter=max(config.n_iter, 1))
    table.to_csv(config.output_dir / "benchmark.csv", index=False, lineterminator="\n")
    print(table.to_string(index=False))


COMMANDS = {
    "pipeline": cmd_pipeline,
    "train-verse": cmd_train_verse,
    "predict-verse": cmd_predict_verse,
    "smooth": cmd_smooth,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
    "benchmark": cmd_benchmark,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    set_verbose(args.verbose)
    start = time.perf_counter()
    try:
        config = config_from_args(args)
        COMMANDS[args.command](args, config)
    except NumericError as e:
        logger.error(f"Numeric failure: {e}", exc_info=args.verbose)
        return EXIT_NUMERIC
    except (InputError, OSError) as e:
        logger.error(f"Input error: {e}", exc_info=args.verbose)
        return EXIT_INPUT
    log_latency(f"Command {args.command}", start)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
