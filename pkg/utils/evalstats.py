"""
Evaluation statistics: Pearson r, the Williams test for two dependent
correlations sharing one variable, and song-level k-fold splits.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.model_selection import KFold

from utils.errors import InputError, UndefinedCorrelationError
from utils.logger import logger

SIGNIFICANCE_LEVEL = 0.05
REPORT_COLUMNS = ["model", "emotion", "song_id", "r", "n"]
COMPARISON_COLUMNS = ["emotion", "model_a", "model_b", "r_a", "r_b", "r_ab", "n", "t", "df", "p", "significant"]


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Sample Pearson correlation.

    Raises:
        InputError: lengths differ or fewer than two points.
        UndefinedCorrelationError: either input is constant.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError(f"pearson needs two vectors of equal length, got {x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise InputError("pearson needs at least two points")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    xc, yc = x - x.mean(), y - y.mean()
    r = float(np.dot(xc, yc) / np.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))
    return min(1.0, max(-1.0, r))


def pearson_or_none(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    try:
        return pearson(x, y)
    except UndefinedCorrelationError:
        return None


class WilliamsResult(NamedTuple):
    t: float
    df: int
    p: float

    @property
    def significant(self) -> bool:
        return self.p < SIGNIFICANCE_LEVEL


def williams_test(r13: float, r23: float, r12: float, n: int) -> WilliamsResult:
    """
    Williams t-test for r13 vs r23 where variable 3 (gold) is shared.

    Args:
        r13 (float): Correlation of predictor 1 with gold.
        r23 (float): Correlation of predictor 2 with gold.
        r12 (float): Correlation between the two predictors.
        n (int): Number of paired observations.

    Returns:
        WilliamsResult: t statistic, n - 3 degrees of freedom, two-sided p.
    """
    for name, r in (("r13", r13), ("r23", r23), ("r12", r12)):
        if not -1.0 < r < 1.0:
            raise InputError(f"{name}={r} must lie strictly inside (-1, 1)")
    if n < 4:
        raise InputError(f"Williams test needs n >= 4, got {n}")
    K = 1 - r12 ** 2 - r13 ** 2 - r23 ** 2 + 2 * r12 * r13 * r23
    if K <= 0:
        raise InputError(f"inconsistent correlation triple (determinant {K:.3e})")
    r_bar = (r13 + r23) / 2
    denominator = 2 * K * (n - 1) / (n - 3) + r_bar ** 2 * (1 - r12) ** 3
    t = (r13 - r23) * np.sqrt((n - 1) * (1 + r12) / denominator)
    df = n - 3
    p = float(min(1.0, 2 * stats.t.sf(abs(t), df)))
    return WilliamsResult(float(t), df, p)


def kfold_songs(song_ids: Sequence[str], k: int, seed: int) -> List[List[str]]:
    """Shuffled, seeded partition of songs into k folds whose sizes differ by at most one."""
    song_ids = list(song_ids)
    if len(set(song_ids)) != len(song_ids):
        raise InputError("song ids must be unique")
    if not 2 <= k <= len(song_ids):
        raise InputError(f"need 2 <= k <= {len(song_ids)} songs, got k={k}")
    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    return [[song_ids[i] for i in test_idx] for _, test_idx in splitter.split(song_ids)]


@dataclass
class EvalReport:
    """Pooled Pearson r per emotion (None when undefined), plus optional per-song r."""

    model: str
    r: Dict[str, Optional[float]]
    n: int
    per_song: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    song_sizes: Dict[str, int] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"model": self.model, "emotion": emotion, "song_id": "", "r": r, "n": self.n}
            for emotion, r in self.r.items()
        ]
        for emotion, songs in self.per_song.items():
            rows += [
                {"model": self.model, "emotion": emotion, "song_id": song, "r": r, "n": self.song_sizes[song]}
                for song, r in songs.items()
            ]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def evaluate(
    preds: np.ndarray,
    gold: np.ndarray,
    emotions: Sequence[str],
    song_ids: Optional[Sequence[str]] = None,
    per_song: bool = False,
    model: str = "model",
) -> EvalReport:
    """
    Pearson r per emotion over all verses pooled.

    Args:
        preds (np.ndarray): (verses x emotions) predictions.
        gold (np.ndarray): (verses x emotions) gold intensities, same verse order.
        emotions (list): Column names.
        song_ids (list, optional): Song id of every verse, needed for per_song.
        per_song (bool): Also compute r within each song.
        model (str): Label stored on the report.
    """
    preds = np.asarray(preds, dtype=float)
    gold = np.asarray(gold, dtype=float)
    if preds.shape != gold.shape or preds.ndim != 2 or preds.shape[1] != len(emotions):
        raise InputError(f"predictions {preds.shape} and gold {gold.shape} are misaligned")
    if per_song and (song_ids is None or len(song_ids) != preds.shape[0]):
        raise InputError("per-song evaluation needs one song id per verse")

    report = EvalReport(model=model, r={}, n=preds.shape[0])
    for j, emotion in enumerate(emotions):
        report.r[emotion] = pearson_or_none(preds[:, j], gold[:, j])
        if report.r[emotion] is None:
            logger.warning(f"{model}: correlation undefined for {emotion} (constant column)")
    if per_song:
        song_ids = np.asarray(song_ids)
        order = list(dict.fromkeys(song_ids.tolist()))
        report.song_sizes = {song: int(np.sum(song_ids == song)) for song in order}
        for j, emotion in enumerate(emotions):
            report.per_song[emotion] = {}
            for song in order:
                mask = song_ids == song
                value = pearson_or_none(preds[mask, j], gold[mask, j]) if mask.sum() >= 2 else None
                report.per_song[emotion][song] = value
    return report


def count_improved_songs(
    baseline: Dict[str, Optional[float]], candidate: Dict[str, Optional[float]]
) -> Tuple[int, int]:
    """(songs whose r went up, songs where both correlations are defined)."""
    comparable = [song for song in baseline if baseline[song] is not None and candidate.get(song) is not None]
    improved = sum(candidate[song] > baseline[song] for song in comparable)
    return improved, len(comparable)


def compare_models(preds_a: Sequence[float], preds_b: Sequence[float], gold: Sequence[float]) -> WilliamsResult:
    """Williams test of r(a, gold) against r(b, gold)."""
    return williams_test(pearson(preds_a, gold), pearson(preds_b, gold), pearson(preds_a, preds_b), len(gold))


def comparison_row(emotion: str, model_a: str, model_b: str, preds_a, preds_b, gold) -> Dict[str, object]:
    """One significance row; statistics are left empty when a correlation is undefined."""
    row = {"emotion": emotion, "model_a": model_a, "model_b": model_b, "n": len(gold)}
    try:
        r_a, r_b, r_ab = pearson(preds_a, gold), pearson(preds_b, gold), pearson(preds_a, preds_b)
        result = williams_test(r_a, r_b, r_ab, len(gold))
    except (UndefinedCorrelationError, InputError) as e:
        logger.warning(f"Williams test {model_a} vs {model_b} ({emotion}) skipped: {e}")
        return row
    row.update(r_a=r_a, r_b=r_b, r_ab=r_ab, t=result.t, df=result.df, p=result.p, significant=result.significant)
    return row


def save_report(reports: Sequence[EvalReport], path: Union[str, Path]) -> None:
    """CSV with one row per (model, emotion[, song]); undefined r is left empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.concat([report.to_frame() for report in reports], ignore_index=True)
    frame.to_csv(path, index=False, lineterminator="\n")


def save_comparisons(rows: Sequence[Dict[str, object]], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=COMPARISON_COLUMNS).to_csv(path, index=False, lineterminator="\n")
