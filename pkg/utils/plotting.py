"""
Emotion dynamics traces and their emission as long-format CSV or SVG charts.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from utils.errors import InputError  # noqa: E402
from utils.logger import logger  # noqa: E402

TRACE_COLUMNS = ["song", "emotion", "verse_idx", "verse_id", "series", "value"]
SERIES = ("gold", "verse", "ssm_mean", "ssm_std")
PANEL_SIZE = (800, 300)  # SVG user units per emotion panel
SVG_UNITS_PER_INCH = 72
DPI = 100

_SVG_STYLE = {"svg.hashsalt": "emotion-dynamics", "svg.fonttype": "none"}


@dataclass
class DynamicsTrace:
    """One song x emotion: verse-level scores plus optional gold and SSM posterior."""

    song_id: str
    emotion: str
    verse_ids: List[str]
    verse_scores: np.ndarray
    gold: Optional[np.ndarray] = None
    ssm_mean: Optional[np.ndarray] = None
    ssm_std: Optional[np.ndarray] = None

    def __post_init__(self):
        self.verse_ids = [str(v) for v in self.verse_ids]
        self.verse_scores = np.asarray(self.verse_scores, dtype=float)
        for name in ("gold", "ssm_mean", "ssm_std"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, np.asarray(value, dtype=float))
        if (self.ssm_mean is None) != (self.ssm_std is None):
            raise InputError(f"trace {self.song_id}/{self.emotion}: ssm_mean and ssm_std go together")
        lengths = {len(self.verse_ids)} | {len(values) for _, values in self.series()}
        if len(lengths) != 1:
            raise InputError(f"trace {self.song_id}/{self.emotion}: series lengths differ {sorted(lengths)}")

    def series(self):
        """(name, values) for every series present, in SERIES order."""
        values = {"gold": self.gold, "verse": self.verse_scores, "ssm_mean": self.ssm_mean, "ssm_std": self.ssm_std}
        return [(name, values[name]) for name in SERIES if values[name] is not None]

    def __len__(self) -> int:
        return len(self.verse_ids)


def traces_frame(traces: Sequence[DynamicsTrace]) -> pd.DataFrame:
    rows = []
    for trace in traces:
        for name, values in trace.series():
            rows += [
                (trace.song_id, trace.emotion, i, verse_id, name, float(value))
                for i, (verse_id, value) in enumerate(zip(trace.verse_ids, values))
            ]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def _draw(ax, trace: DynamicsTrace) -> None:
    x = np.arange(1, len(trace) + 1)
    if trace.ssm_mean is not None:
        ax.fill_between(
            x, trace.ssm_mean - trace.ssm_std, trace.ssm_mean + trace.ssm_std,
            color="tab:blue", alpha=0.2, label="SSM ±1σ",
        )
        ax.plot(x, trace.ssm_mean, color="tab:blue", label="SSM")
    if trace.gold is not None:
        ax.plot(x, trace.gold, color="black", label="gold")
    ax.plot(x, trace.verse_scores, color="tab:orange", linestyle="--", marker="o", markersize=3, label="verse-level")
    ax.set_title(f"{trace.song_id}: {trace.emotion.upper()}")
    ax.set_xlabel("verse")
    ax.set_ylabel("intensity")
    ax.set_xticks(x)
    ax.legend(loc="upper right", fontsize="small")


def _render_svg(traces: Sequence[DynamicsTrace], path: Path) -> None:
    width, height = PANEL_SIZE[0], PANEL_SIZE[1] * len(traces)
    with matplotlib.rc_context(_SVG_STYLE):
        fig, axes = plt.subplots(
            len(traces), 1, figsize=(width / SVG_UNITS_PER_INCH, height / SVG_UNITS_PER_INCH), dpi=DPI, squeeze=False
        )
        try:
            for ax, trace in zip(axes[:, 0], traces):
                _draw(ax, trace)
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)


def emit_plot(traces: Union[DynamicsTrace, Sequence[DynamicsTrace]], path: Union[str, Path], fmt: str = "svg") -> Path:
    """
    Writes traces to path.

    Args:
        traces (DynamicsTrace or list): One or more traces, non-empty.
        path (str or Path): Output file; parent directories are created.
        fmt (str): "csv" for the long table (song, emotion, verse_idx, verse_id,
            series, value) or "svg" for one 800x300 chart per trace.

    Returns:
        Path: The written file.
    """
    if isinstance(traces, DynamicsTrace):
        traces = [traces]
    traces = list(traces)
    if not traces or any(len(trace) == 0 for trace in traces):
        raise InputError("emit_plot needs at least one non-empty trace")
    if fmt not in ("csv", "svg"):
        raise InputError(f"plot format must be csv or svg, got {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        traces_frame(traces).to_csv(path, index=False, lineterminator="\n")
    else:
        _render_svg(traces, path)
    logger.debug(f"Wrote {len(traces)} trace(s) to {path}")
    return path


def load_traces_csv(path: Union[str, Path]) -> List[DynamicsTrace]:
    """Reads a long-format trace CSV back into traces, in first-appearance order."""
    try:
        frame = pd.read_csv(path, dtype={"song": str, "verse_id": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"cannot read traces {path}: {e}") from e
    missing = [column for column in TRACE_COLUMNS if column not in frame.columns]
    if missing:
        raise InputError(f"{path}: missing columns {missing}")
    traces = []
    for (song, emotion), group in frame.groupby(["song", "emotion"], sort=False):
        wide = group.pivot(index="verse_idx", columns="series", values="value").sort_index()
        verse_ids = group.drop_duplicates("verse_idx").sort_values("verse_idx")["verse_id"].tolist()
        if "verse" not in wide.columns:
            raise InputError(f"{path}: trace {song}/{emotion} has no verse series")
        traces.append(DynamicsTrace(
            song_id=song,
            emotion=emotion,
            verse_ids=verse_ids,
            verse_scores=wide["verse"].to_numpy(),
            gold=wide["gold"].to_numpy() if "gold" in wide.columns else None,
            ssm_mean=wide["ssm_mean"].to_numpy() if "ssm_mean" in wide.columns else None,
            ssm_std=wide["ssm_std"].to_numpy() if "ssm_std" in wide.columns else None,
        ))
    return traces
