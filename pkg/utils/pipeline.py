"""
End-to-end pipeline: verse-level ridge predictions, per-song state space
smoothing under song-level cross-validation, evaluation and trace emission.
"""

import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from joblib import Parallel, delayed

from data.corpus import EMOTIONS, SongSequence, SourceRecord, load_headlines, load_songs, tokenize
from models.ssm import EM_PARAMETERS, InitialBelief, SsmParams, em_fit_full, kalman_summary
from models.verse_model import (
    DEFAULT_LAMBDAS,
    SOURCE_LABEL_SCALE,
    RidgeModel,
    feature_matrix,
    predict,
    save_models,
    train_verse_models,
)
from utils.errors import InputError, NumericError
from utils.evalstats import (
    EvalReport,
    comparison_row,
    count_improved_songs,
    evaluate,
    kfold_songs,
    save_comparisons,
    save_report,
)
from utils.lexicons import WordFeatureMatrix, build_vocabulary, build_word_feature_matrix, load_lexicons
from utils.logger import logger
from utils.plotting import DynamicsTrace, emit_plot
from utils.profiler import log_latency

ROOT_DIR = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG_PATH = ROOT_DIR / "tuning" / "config.yaml"
DEFAULT_PARAMS_PATH = ROOT_DIR / "tuning" / "best_params.yaml"
WORKERS_ENV = "EMOTION_DYNAMICS_WORKERS"
MODES = ("verse-only", "filter", "smoother", "filter-em", "smoother-em")
TARGET_SCALE = 10.0

# Called as hook(emotion, fold_index, train_song_ids, heldout_song_ids) for every EM fit.
EmHook = Callable[[str, int, List[str], List[str]], None]


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    if value is None:
        return -1
    try:
        return int(value)
    except ValueError as e:
        raise InputError(f"{WORKERS_ENV} must be an integer, got {value!r}") from e


@dataclass
class PipelineConfig:
    lexicon_dir: Path
    source_path: Path
    songs_path: Path
    output_dir: Path
    poly_degree: int = 3
    A: float = 1.0
    C: float = 1.0
    Q: float = 1.0
    R: float = 5.0
    initial_cov: float = 2.0
    n_iter: int = 10
    em_params: Tuple[str, ...] = ("A", "C", "Q", "R")
    mode: str = "smoother-em"
    k: int = 10
    seed: int = 13
    lambdas: Tuple[float, ...] = DEFAULT_LAMBDAS
    ridge_folds: int = 10
    clamp: bool = False
    per_song: bool = False
    plot_format: str = "svg"
    n_jobs: int = field(default_factory=default_workers)

    def __post_init__(self):
        for name in ("lexicon_dir", "source_path", "songs_path", "output_dir"):
            value = Path(getattr(self, name))
            setattr(self, name, value if value.is_absolute() else ROOT_DIR / value)
        self.em_params = tuple(self.em_params)
        self.lambdas = tuple(float(lam) for lam in self.lambdas)
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k < 2:
            raise InputError(f"k must be at least 2, got {self.k}")
        if self.n_iter < 0:
            raise InputError("n_iter must be non-negative")
        if self.poly_degree < 0:
            raise InputError("poly_degree must be non-negative")
        if self.Q < 0 or self.R < 0 or self.initial_cov < 0:
            raise InputError("Q, R and initial_cov must be non-negative")
        if not set(self.em_params) <= EM_PARAMETERS:
            raise InputError(f"em_params must be a subset of {sorted(EM_PARAMETERS)}")
        if not self.lambdas or min(self.lambdas) <= 0:
            raise InputError("lambdas must be a non-empty list of positive values")
        if self.ridge_folds < 2:
            raise InputError("ridge_folds must be at least 2")
        if self.plot_format not in ("svg", "csv", "none"):
            raise InputError(f"plot_format must be svg, csv or none, got {self.plot_format!r}")

    @property
    def uses_em(self) -> bool:
        return self.mode.endswith("-em")

    @property
    def method(self) -> str:
        return self.mode.split("-")[0]

    def ssm_params(self) -> SsmParams:
        return SsmParams.scalar(A=self.A, C=self.C, Q=self.Q, R=self.R)

    @classmethod
    def from_sources(
        cls,
        config_path: Optional[Path] = None,
        overrides: Optional[Dict[str, object]] = None,
        params_path: Optional[Path] = None,
    ) -> "PipelineConfig":
        """
        Merges best_params.yaml (ssm section), config.yaml (pipeline and ridge
        sections) and explicit overrides; overrides win, None values are ignored.
        """
        values: Dict[str, object] = {}
        params_path = Path(params_path or DEFAULT_PARAMS_PATH)
        if params_path.exists():
            values.update(_read_yaml(params_path).get("ssm", {}) or {})
        config = _read_yaml(Path(config_path or DEFAULT_CONFIG_PATH))
        values.update(config.get("pipeline", {}) or {})
        ridge = config.get("ridge_params", {}) or {}
        if "lambdas" in ridge:
            values.setdefault("lambdas", ridge["lambdas"])
        if "k_folds" in ridge:
            values.setdefault("ridge_folds", ridge["k_folds"])
        values.update({key: value for key, value in (overrides or {}).items() if value is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InputError(f"unknown configuration keys: {unknown}")
        try:
            return cls(**values)
        except TypeError as e:
            raise InputError(f"incomplete configuration: {e}") from e

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, Path):
                data[key] = str(value)
            elif isinstance(value, tuple):
                data[key] = list(value)
        return data


def _read_yaml(path: Path) -> dict:
    try:
        with path.open("r", encoding="utf-8") as f:
            return yaml.safe_load(f) or {}
    except OSError as e:
        raise InputError(f"cannot read configuration {path}: {e}") from e
    except yaml.YAMLError as e:
        raise InputError(f"{path}: invalid YAML ({e})") from e


# --- Stage 1: verse-level predictions ---
@dataclass
class Corpora:
    records: List[SourceRecord]
    songs: List[SongSequence]
    word_matrix: WordFeatureMatrix


def load_corpora(config: PipelineConfig) -> Corpora:
    """Loads both datasets and builds the word feature matrix over their joint vocabulary."""
    start = time.perf_counter()
    records = load_headlines(config.source_path)
    songs = load_songs(config.songs_path)
    if not records or not songs:
        raise InputError("both the source dataset and the songs file must be non-empty")
    tables = load_lexicons(config.lexicon_dir)
    vocabulary = build_vocabulary(
        (tokenize(record.text) for record in records),
        (tokenize(verse.text) for song in songs for verse in song.verses),
    )
    word_matrix = build_word_feature_matrix(vocabulary, tables, degree=config.poly_degree)
    log_latency(f"Corpora and lexicon features (|V|={len(vocabulary)}, D_lex={word_matrix.width})", start)
    return Corpora(records, songs, word_matrix)


def train_verse(config: PipelineConfig, corpora: Corpora) -> Dict[str, RidgeModel]:
    start = time.perf_counter()
    X = feature_matrix([tokenize(record.text) for record in corpora.records], corpora.word_matrix)
    labels = np.array([record.scores.as_array() for record in corpora.records])
    models = train_verse_models(
        X,
        labels,
        lambdas=config.lambdas,
        k_folds=min(config.ridge_folds, X.shape[0]),
        seed=config.seed,
        n_jobs=config.n_jobs,
        label_scale=SOURCE_LABEL_SCALE,
    )
    log_latency("Ridge training", start)
    return models


def predict_verses(
    models: Dict[str, RidgeModel], corpora: Corpora, clamp: bool = False
) -> np.ndarray:
    """(verses x 6) predictions on the 0-10 target scale, songs and verses in file order."""
    X = feature_matrix(
        [tokenize(verse.text) for song in corpora.songs for verse in song.verses], corpora.word_matrix
    )
    return np.column_stack([predict(models[emotion], X, clamp=clamp) for emotion in EMOTIONS]) * TARGET_SCALE


def song_slices(songs: Sequence[SongSequence]) -> Dict[str, slice]:
    slices, start = {}, 0
    for song in songs:
        slices[song.song_id] = slice(start, start + len(song))
        start += len(song)
    return slices


# --- Stage 2: song-level state space model ---
@dataclass
class EmotionSsmResult:
    means: Dict[str, np.ndarray]
    stds: Dict[str, np.ndarray]
    folds: List[Dict[str, object]]


def _initial_belief(ys: np.ndarray, initial_cov: float) -> InitialBelief:
    return InitialBelief.from_first_observation(ys[0], cov=initial_cov)


def _smooth_emotion(
    emotion: str,
    sequences: Dict[str, np.ndarray],
    folds: List[List[str]],
    config: PipelineConfig,
    params: SsmParams,
) -> EmotionSsmResult:
    result = EmotionSsmResult(means={}, stds={}, folds=[])
    for fold_index, heldout in enumerate(folds):
        fold_params, trace, train_ids = params, [], []
        if config.uses_em:
            train_ids = [song for song in sequences if song not in set(heldout)]
            try:
                fit = em_fit_full(
                    [(sequences[song], _initial_belief(sequences[song], config.initial_cov)) for song in train_ids],
                    params,
                    n_iter=config.n_iter,
                    which=config.em_params,
                )
            except NumericError as e:
                raise NumericError(f"{emotion}, EM fold {fold_index}: {e}") from e
            fold_params, trace = fit.params, fit.loglik_trace
        for song in heldout:
            ys = sequences[song]
            try:
                means, stds = kalman_summary(ys, fold_params, _initial_belief(ys, config.initial_cov), config.method)
            except NumericError as e:
                raise NumericError(f"{emotion}, song {song}: {e}") from e
            result.means[song], result.stds[song] = means[:, 0], stds[:, 0]
        result.folds.append({
            "fold": fold_index,
            "heldout": list(heldout),
            "train": train_ids,
            "params": fold_params.as_dict(),
            "loglik_trace": [float(v) for v in trace],
        })
    return result


def smooth_predictions(
    config: PipelineConfig,
    songs: Sequence[SongSequence],
    predictions: np.ndarray,
    hook: Optional[EmHook] = None,
    params: Optional[SsmParams] = None,
) -> Tuple[np.ndarray, np.ndarray, Dict[str, List[Dict[str, object]]]]:
    """
    Runs the configured filter/smoother (with EM under song-level CV for the
    *-em modes) on every song and emotion.

    Returns:
        tuple: (means, stds) aligned with predictions, and per-emotion fold records.
    """
    start = time.perf_counter()
    params = params or config.ssm_params()
    slices = song_slices(songs)
    song_ids = list(slices)
    if config.uses_em:
        k = min(config.k, len(song_ids))
        if k < config.k:
            logger.warning(f"Only {len(song_ids)} songs; using {k} folds instead of {config.k}")
        folds = kfold_songs(song_ids, k, config.seed)
    else:
        folds = [song_ids]

    results = Parallel(n_jobs=config.n_jobs)(
        delayed(_smooth_emotion)(
            emotion, {song: predictions[s, j] for song, s in slices.items()}, folds, config, params
        )
        for j, emotion in enumerate(EMOTIONS)
    )

    means = np.zeros_like(predictions)
    stds = np.zeros_like(predictions)
    fold_records: Dict[str, List[Dict[str, object]]] = {}
    for j, (emotion, result) in enumerate(zip(EMOTIONS, results)):
        for song, s in slices.items():
            means[s, j] = result.means[song]
            stds[s, j] = result.stds[song]
        fold_records[emotion] = result.folds
        if hook is not None and config.uses_em:
            for record in result.folds:
                hook(emotion, record["fold"], record["train"], record["heldout"])
    log_latency(f"State space {config.mode} over {len(song_ids)} songs", start)
    return means, stds, fold_records


# --- Evaluation and traces ---
@dataclass
class PipelineResult:
    config: PipelineConfig
    songs: List[SongSequence]
    verse_predictions: np.ndarray
    ssm_means: Optional[np.ndarray] = None
    ssm_stds: Optional[np.ndarray] = None
    reports: List[EvalReport] = field(default_factory=list)
    comparisons: List[Dict[str, object]] = field(default_factory=list)
    improved: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    fold_params: Dict[str, List[Dict[str, object]]] = field(default_factory=dict)
    traces: List[DynamicsTrace] = field(default_factory=list)
    models: Dict[str, RidgeModel] = field(default_factory=dict)


def gold_matrix(songs: Sequence[SongSequence]) -> Optional[np.ndarray]:
    if not all(song.has_gold for song in songs):
        return None
    return np.vstack([song.gold_matrix() for song in songs])


def evaluate_predictions(
    songs: Sequence[SongSequence],
    verse_predictions: np.ndarray,
    ssm_means: Optional[np.ndarray],
    model_name: str,
    per_song: bool = False,
) -> Tuple[List[EvalReport], List[Dict[str, object]], Dict[str, Tuple[int, int]]]:
    """Baseline and SSM reports on identical verse alignment, with Williams comparisons."""
    gold = gold_matrix(songs)
    if gold is None:
        logger.warning("Songs lack gold labels; skipping evaluation")
        return [], [], {}
    song_ids = [song.song_id for song in songs for _ in song.verses]
    baseline = evaluate(verse_predictions, gold, EMOTIONS, song_ids, per_song=True, model="verse")
    reports, comparisons, improved = [baseline], [], {}
    if ssm_means is not None:
        ssm = evaluate(ssm_means, gold, EMOTIONS, song_ids, per_song=True, model=model_name)
        reports.append(ssm)
        for j, emotion in enumerate(EMOTIONS):
            comparisons.append(comparison_row(
                emotion, model_name, "verse", ssm_means[:, j], verse_predictions[:, j], gold[:, j]
            ))
            improved[emotion] = count_improved_songs(baseline.per_song[emotion], ssm.per_song[emotion])
            logger.info(
                f"{emotion}: verse r={_fmt(baseline.r[emotion])} -> {model_name} r={_fmt(ssm.r[emotion])}, "
                f"improved songs {improved[emotion][0]}/{improved[emotion][1]}"
            )
    if not per_song:
        for report in reports:
            report.per_song, report.song_sizes = {}, {}
    return reports, comparisons, improved


def _fmt(r: Optional[float]) -> str:
    return "undefined" if r is None else f"{r:.4f}"


def build_traces(
    songs: Sequence[SongSequence],
    verse_predictions: np.ndarray,
    ssm_means: Optional[np.ndarray] = None,
    ssm_stds: Optional[np.ndarray] = None,
) -> List[DynamicsTrace]:
    traces = []
    for song_obj, s in zip(songs, song_slices(songs).values()):
        song = song_obj.song_id
        gold = song_obj.gold_matrix() if song_obj.has_gold else None
        for j, emotion in enumerate(EMOTIONS):
            traces.append(DynamicsTrace(
                song_id=song,
                emotion=emotion,
                verse_ids=song_obj.verse_ids,
                verse_scores=verse_predictions[s, j],
                gold=None if gold is None else gold[:, j],
                ssm_mean=None if ssm_means is None else ssm_means[s, j],
                ssm_std=None if ssm_stds is None else ssm_stds[s, j],
            ))
    return traces


def run_pipeline(config: PipelineConfig, hook: Optional[EmHook] = None) -> PipelineResult:
    """
    Two-stage run: ridge verse predictions, then (unless mode is verse-only)
    the state space model, followed by evaluation and trace assembly.
    """
    total_start = time.perf_counter()
    corpora = load_corpora(config)
    models = train_verse(config, corpora)
    verse_predictions = predict_verses(models, corpora, clamp=config.clamp)
    result = PipelineResult(
        config=config, songs=corpora.songs, verse_predictions=verse_predictions, models=models
    )

    if config.mode != "verse-only":
        result.ssm_means, result.ssm_stds, result.fold_params = smooth_predictions(
            config, corpora.songs, verse_predictions, hook=hook
        )

    start = time.perf_counter()
    result.reports, result.comparisons, result.improved = evaluate_predictions(
        corpora.songs, verse_predictions, result.ssm_means, config.mode, per_song=config.per_song
    )
    result.traces = build_traces(corpora.songs, verse_predictions, result.ssm_means, result.ssm_stds)
    log_latency("Evaluation", start)
    log_latency("Pipeline total", total_start)
    return result


# --- Output ---
def save_predictions(songs: Sequence[SongSequence], matrix: np.ndarray, path: Path) -> None:
    """Wide CSV: song_id, verse_id, then one column per emotion."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(matrix, columns=list(EMOTIONS))
    frame.insert(0, "verse_id", [verse.verse_id for song in songs for verse in song.verses])
    frame.insert(0, "song_id", [song.song_id for song in songs for _ in song.verses])
    frame.to_csv(path, index=False, lineterminator="\n")


def load_predictions(path: Path, songs: Sequence[SongSequence]) -> np.ndarray:
    """Reads a wide prediction CSV and checks it follows the songs' verse order."""
    try:
        frame = pd.read_csv(path, dtype={"song_id": str, "verse_id": str})
    except (OSError, pd.errors.ParserError) as e:
        raise InputError(f"cannot read predictions {path}: {e}") from e
    missing = [column for column in ("song_id", "verse_id") + EMOTIONS if column not in frame.columns]
    if missing:
        raise InputError(f"{path}: missing columns {missing}")
    expected = [(song.song_id, verse.verse_id) for song in songs for verse in song.verses]
    if list(zip(frame["song_id"], frame["verse_id"])) != expected:
        raise InputError(f"{path}: verse order does not match the songs file")
    return frame[list(EMOTIONS)].to_numpy(dtype=float)


def write_outputs(result: PipelineResult) -> Dict[str, Path]:
    """Writes every artifact of a run under config.output_dir and returns their paths."""
    start = time.perf_counter()
    out = result.config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = {"verse_predictions": out / "verse_predictions.csv", "dynamics": out / "dynamics.csv"}
    save_predictions(result.songs, result.verse_predictions, paths["verse_predictions"])
    if result.models:
        save_models(result.models, out / "models")
    if result.ssm_means is not None:
        paths["ssm_predictions"] = out / "ssm_predictions.csv"
        save_predictions(result.songs, result.ssm_means, paths["ssm_predictions"])
    if result.fold_params:
        paths["fold_params"] = out / "fold_params.yaml"
        with paths["fold_params"].open("w", encoding="utf-8") as f:
            yaml.safe_dump(result.fold_params, f, sort_keys=True)
    if result.reports:
        paths["evaluation"] = out / "evaluation.csv"
        save_report(result.reports, paths["evaluation"])
    if result.comparisons:
        paths["significance"] = out / "significance.csv"
        save_comparisons(result.comparisons, paths["significance"])
    emit_plot(result.traces, paths["dynamics"], "csv")
    if result.config.plot_format == "svg":
        for song in result.songs:
            song_traces = [trace for trace in result.traces if trace.song_id == song.song_id]
            emit_plot(song_traces, out / "plots" / f"{song.song_id}.svg", "svg")
    log_latency("Writing outputs", start)
    return paths
