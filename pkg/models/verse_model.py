"""
Verse-level emotion intensity regressor.

- Features: mean-pool and max-pool of the lexicon rows of a verse's tokens.
- Model: one ridge regression per emotion (unpenalized intercept), trained on
  the sentence-level source data with labels scaled from [0, 100] to [0, 1].
- lambda is chosen by k-fold cross-validated Pearson r, then refit on all data.
"""

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import LinAlgWarning
from sklearn.linear_model import Ridge
from sklearn.model_selection import KFold

from data.corpus import EMOTIONS
from utils.errors import InputError, NumericError, UndefinedCorrelationError
from utils.evalstats import pearson
from utils.lexicons import WordFeatureMatrix
from utils.logger import logger

DEFAULT_LAMBDAS = tuple(10.0 ** k for k in range(-3, 4))
SOURCE_LABEL_SCALE = 100.0


def verse_features(tokens: Sequence[str], word_matrix: WordFeatureMatrix) -> np.ndarray:
    """
    Pooled lexicon features of one verse.

    Args:
        tokens (list): Verse tokens (may be empty).
        word_matrix (WordFeatureMatrix): Per-word lexicon features.

    Returns:
        np.ndarray: mean-pool followed by max-pool, length 2 * word_matrix.width;
        zeros when no token is in the vocabulary.
    """
    rows = word_matrix.rows(tokens)
    if rows.shape[0] == 0:
        return np.zeros(2 * word_matrix.width)
    return np.concatenate([rows.mean(axis=0), rows.max(axis=0)])


def feature_matrix(token_lists: Sequence[Sequence[str]], word_matrix: WordFeatureMatrix) -> np.ndarray:
    if not token_lists:
        return np.zeros((0, 2 * word_matrix.width))
    return np.vstack([verse_features(tokens, word_matrix) for tokens in token_lists])


@dataclass(frozen=True)
class RidgeModel:
    emotion: str
    weights: np.ndarray
    intercept: float
    lam: float
    label_scale: float = SOURCE_LABEL_SCALE
    cv_scores: Dict[float, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.lam <= 0:
            raise InputError(f"ridge lambda must be positive, got {self.lam}")
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 1 or not np.all(np.isfinite(weights)):
            raise InputError("ridge weights must be a finite vector")
        object.__setattr__(self, "weights", weights)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]


def _fit(X: np.ndarray, y: np.ndarray, lam: float) -> Ridge:
    with warnings.catch_warnings():
        warnings.simplefilter("error", LinAlgWarning)
        return Ridge(alpha=lam, fit_intercept=True, solver="cholesky").fit(X, y)


def _cv_score(X: np.ndarray, y: np.ndarray, lam: float, folds) -> float:
    scores = []
    for train_idx, test_idx in folds:
        model = _fit(X[train_idx], y[train_idx], lam)
        try:
            scores.append(pearson(model.predict(X[test_idx]), y[test_idx]))
        except UndefinedCorrelationError:
            continue
    return float(np.mean(scores)) if scores else float("nan")


def train_ridge(
    X: np.ndarray,
    y: np.ndarray,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    k_folds: int = 10,
    seed: int = 13,
    emotion: str = "",
    label_scale: float = SOURCE_LABEL_SCALE,
) -> RidgeModel:
    """
    Selects lambda by k-fold CV Pearson r and refits on all rows.

    Args:
        X (np.ndarray): Source features, one row per sentence.
        y (np.ndarray): One emotion's labels, already scaled to [0, 1].
        lambdas (list): Candidate regularization strengths.
        k_folds (int): Number of CV folds.
        seed (int): Fold shuffling seed.
        emotion (str): Emotion name recorded on the model.
        label_scale (float): Factor the labels were divided by.

    Returns:
        RidgeModel: Refit model with the per-lambda CV scores.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not len(lambdas):
        raise InputError("lambda grid is empty")
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InputError(f"features {X.shape} and labels {y.shape} are misaligned")
    if not 2 <= k_folds <= X.shape[0]:
        raise InputError(f"need 2 <= k_folds <= {X.shape[0]}, got {k_folds}")

    folds = list(KFold(n_splits=k_folds, shuffle=True, random_state=seed).split(X))
    cv_scores: Dict[float, float] = {}
    for lam in lambdas:
        try:
            cv_scores[float(lam)] = _cv_score(X, y, lam, folds)
        except (LinAlgWarning, np.linalg.LinAlgError) as e:
            logger.warning(f"Ridge {emotion}: lambda={lam:g} skipped, singular system ({e})")
    if not cv_scores:
        raise NumericError(f"ridge {emotion}: every lambda in the grid was singular")

    scored = {lam: score for lam, score in cv_scores.items() if np.isfinite(score)}
    best_lam = max(scored, key=scored.get) if scored else next(iter(cv_scores))
    model = _fit(X, y, best_lam)
    logger.info(f"Ridge {emotion}: lambda={best_lam:g}, CV r={cv_scores[best_lam]:.4f}")
    return RidgeModel(
        emotion=emotion,
        weights=model.coef_,
        intercept=float(model.intercept_),
        lam=best_lam,
        label_scale=label_scale,
        cv_scores=cv_scores,
    )


def train_verse_models(
    X: np.ndarray,
    labels: np.ndarray,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    k_folds: int = 10,
    seed: int = 13,
    n_jobs: int = 1,
    label_scale: float = SOURCE_LABEL_SCALE,
) -> Dict[str, RidgeModel]:
    """One independent ridge model per emotion; labels is (rows x 6) on the raw scale."""
    labels = np.asarray(labels, dtype=float)
    if labels.ndim != 2 or labels.shape[1] != len(EMOTIONS):
        raise InputError(f"labels must have {len(EMOTIONS)} columns, got shape {labels.shape}")
    models = Parallel(n_jobs=n_jobs)(
        delayed(train_ridge)(X, labels[:, i] / label_scale, lambdas, k_folds, seed, emotion, label_scale)
        for i, emotion in enumerate(EMOTIONS)
    )
    return dict(zip(EMOTIONS, models))


def predict(model: RidgeModel, X: np.ndarray, clamp: bool = False) -> np.ndarray:
    """
    Affine prediction w.x + b for each row of X (or a single feature vector).

    Values stay on the scaled label range; clamp=True clips them into [0, 1].
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.feature_dim:
        raise InputError(f"features have {X.shape[1]} columns, model expects {model.feature_dim}")
    predictions = X @ model.weights + model.intercept
    if clamp:
        predictions = np.clip(predictions, 0.0, 1.0)
    return predictions[0] if single else predictions


def save_model(model: RidgeModel, path: Union[str, Path]) -> None:
    """TSV: a key=value header line, optional `#cv` lines, then intercept and weights."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"emotion={model.emotion}\tlambda={model.lam!r}\tfeature_dim={model.feature_dim}\tlabel_scale={model.label_scale!r}"
    ]
    lines += [f"#cv\t{lam!r}\t{score!r}" for lam, score in model.cv_scores.items()]
    lines.append(f"intercept\t{model.intercept!r}")
    lines += [f"w{i}\t{w!r}" for i, w in enumerate(model.weights.tolist())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: Union[str, Path]) -> RidgeModel:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    try:
        header = dict(item.split("=", 1) for item in lines[0].split("\t"))
        cv_scores = {}
        values: Dict[str, float] = {}
        for line in lines[1:]:
            fields = line.split("\t")
            if fields[0] == "#cv":
                cv_scores[float(fields[1])] = float(fields[2])
            elif line.strip():
                values[fields[0]] = float(fields[1])
        feature_dim = int(header["feature_dim"])
        weights = np.array([values[f"w{i}"] for i in range(feature_dim)])
        return RidgeModel(
            emotion=header["emotion"],
            weights=weights,
            intercept=values["intercept"],
            lam=float(header["lambda"]),
            label_scale=float(header["label_scale"]),
            cv_scores=cv_scores,
        )
    except (KeyError, IndexError, ValueError) as e:
        raise InputError(f"{path}: malformed ridge model file ({e})") from e


def save_models(models: Dict[str, RidgeModel], directory: Union[str, Path]) -> None:
    for emotion, model in models.items():
        save_model(model, Path(directory) / f"ridge_{emotion}.tsv")


def load_models(directory: Union[str, Path], emotions: Optional[Sequence[str]] = None) -> Dict[str, RidgeModel]:
    return {emotion: load_model(Path(directory) / f"ridge_{emotion}.tsv") for emotion in (emotions or EMOTIONS)}
