"""
Loaders for the two corpora and the shared tokenizer.

- Source sentences (headlines): UTF-8 TSV
  `id \\t text \\t anger \\t disgust \\t fear \\t joy \\t sadness \\t surprise \\t valence`,
  emotion scores in [0, 100], valence in [-100, 100]. An optional header line starting
  with `id\\ttext` and `#` comment lines are skipped.
- Songs: UTF-8 JSONL, one song per line:
  `{"song_id": ..., "verses": [{"verse_id": ..., "text": ..., "gold": {six keys}}]}`,
  gold intensities in [0, 10], present on every verse of a song or on none.
"""

import json
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np

from utils.errors import InputError
from utils.logger import logger

EMOTIONS: Tuple[str, ...] = ("anger", "disgust", "fear", "joy", "sadness", "surprise")
SOURCE_RANGE = (0.0, 100.0)
VALENCE_RANGE = (-100.0, 100.0)
GOLD_RANGE = (0.0, 10.0)
HEADLINE_COLUMNS = ("id", "text") + EMOTIONS + ("valence",)

TOKEN_PATTERN = re.compile(r"[^\W_]+(?:'[^\W_]+)*")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class EmotionScores:
    """Six intensities in fixed Ekman order."""

    anger: float
    disgust: float
    fear: float
    joy: float
    sadness: float
    surprise: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, emotion) for emotion in EMOTIONS], dtype=float)

    def to_dict(self) -> Dict[str, float]:
        return {emotion: getattr(self, emotion) for emotion in EMOTIONS}

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "EmotionScores":
        values = [float(v) for v in values]
        if len(values) != len(EMOTIONS) or not all(np.isfinite(values)):
            raise InputError(f"expected {len(EMOTIONS)} finite emotion scores, got {values}")
        return cls(*values)


@dataclass(frozen=True)
class SourceRecord:
    id: str
    text: str
    scores: EmotionScores
    valence: float


@dataclass(frozen=True)
class Verse:
    verse_id: str
    text: str
    gold: Optional[EmotionScores] = None


@dataclass(frozen=True)
class SongSequence:
    """Verses of one song, in file order."""

    song_id: str
    verses: Tuple[Verse, ...]

    def __post_init__(self):
        if not self.verses:
            raise InputError(f"song {self.song_id!r} has no verses")
        with_gold = sum(verse.gold is not None for verse in self.verses)
        if 0 < with_gold < len(self.verses):
            raise InputError(
                f"song {self.song_id!r}: gold present on {with_gold} of {len(self.verses)} verses "
                f"(must be all or none)"
            )

    @property
    def has_gold(self) -> bool:
        return self.verses[0].gold is not None

    @property
    def verse_ids(self) -> List[str]:
        return [verse.verse_id for verse in self.verses]

    def gold_matrix(self) -> np.ndarray:
        """Gold intensities as a (verses x 6) array."""
        if not self.has_gold:
            raise InputError(f"song {self.song_id!r} has no gold labels")
        return np.array([verse.gold.as_array() for verse in self.verses])

    def __len__(self) -> int:
        return len(self.verses)


def tokenize(text: str) -> List[str]:
    """Lowercase word tokens; apostrophes survive only inside words ("don't")."""
    return TOKEN_PATTERN.findall(text.replace("’", "'").lower())


def decoded_lines(path: Path):
    """(line number, text) pairs of a UTF-8 file; bad bytes raise InputError naming the line."""
    for lineno, raw in enumerate(path.read_bytes().splitlines(), start=1):
        try:
            yield lineno, raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise InputError(f"{path}:{lineno}: invalid UTF-8 ({e.reason})") from e


def _parse_score(value: str, bounds: Tuple[float, float], where: str) -> float:
    try:
        score = float(value)
    except ValueError as e:
        raise InputError(f"{where}: non-numeric value {value!r}") from e
    low, high = bounds
    if not np.isfinite(score) or not low <= score <= high:
        raise InputError(f"{where}: value {score} outside [{low:g}, {high:g}]")
    return score


def load_headlines(path: PathLike) -> List[SourceRecord]:
    """
    Loads and validates the sentence-level source dataset.

    Args:
        path (str or Path): Canonical headlines TSV.

    Returns:
        list: SourceRecord per data line, in file order.
    """
    path = Path(path)
    records: List[SourceRecord] = []
    for lineno, line in decoded_lines(path):
        if not line.strip() or line.startswith("#") or line.startswith("id\ttext"):
            continue
        fields = line.split("\t")
        if len(fields) != len(HEADLINE_COLUMNS):
            raise InputError(
                f"{path}:{lineno}: expected {len(HEADLINE_COLUMNS)} columns, got {len(fields)}"
            )
        record_id, text = fields[0].strip(), fields[1].strip()
        if not text:
            raise InputError(f"{path}:{lineno}: empty text")
        scores = [
            _parse_score(fields[2 + i], SOURCE_RANGE, f"{path}:{lineno}: column {3 + i} ({emotion})")
            for i, emotion in enumerate(EMOTIONS)
        ]
        valence = _parse_score(fields[-1], VALENCE_RANGE, f"{path}:{lineno}: column 9 (valence)")
        records.append(SourceRecord(record_id, text, EmotionScores(*scores), valence))
    logger.info(f"Loaded {len(records)} source sentences from {path}")
    return records


def _parse_gold(gold: Mapping, where: str) -> EmotionScores:
    if not isinstance(gold, Mapping) or set(gold) != set(EMOTIONS):
        raise InputError(f"{where}: gold must have exactly the keys {list(EMOTIONS)}")
    return EmotionScores(*[
        _parse_score(str(gold[emotion]), GOLD_RANGE, f"{where}: gold {emotion}") for emotion in EMOTIONS
    ])


def load_songs(path: PathLike) -> List[SongSequence]:
    """
    Loads the song-level dataset, one JSON object per line, verse order preserved.
    """
    path = Path(path)
    songs: List[SongSequence] = []
    for lineno, line in decoded_lines(path):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise InputError(f"{where}: malformed JSON ({e.msg})") from e
        if not isinstance(obj, dict) or "song_id" not in obj or not isinstance(obj.get("verses"), list):
            raise InputError(f"{where}: expected an object with 'song_id' and a 'verses' list")
        verses = []
        for index, raw in enumerate(obj["verses"]):
            if not isinstance(raw, dict) or "verse_id" not in raw or not isinstance(raw.get("text"), str):
                raise InputError(f"{where}: verse {index} needs 'verse_id' and 'text'")
            gold = raw.get("gold")
            verses.append(Verse(
                verse_id=str(raw["verse_id"]),
                text=raw["text"],
                gold=None if gold is None else _parse_gold(gold, f"{where}: verse {index}"),
            ))
        song_id = str(obj["song_id"])
        if any(song.song_id == song_id for song in songs):
            raise InputError(f"{where}: duplicate song id {song_id!r}")
        try:
            songs.append(SongSequence(song_id, tuple(verses)))
        except InputError as e:
            raise InputError(f"{where}: {e}") from e
    logger.info(f"Loaded {len(songs)} songs ({sum(len(s) for s in songs)} verses) from {path}")
    return songs


def serialize_headlines(records: Iterable[SourceRecord]) -> str:
    """Canonical TSV (with header) for a collection of source records."""
    lines = ["\t".join(HEADLINE_COLUMNS)]
    for record in records:
        values = [repr(v) for v in record.scores.as_array().tolist()] + [repr(record.valence)]
        lines.append("\t".join([record.id, record.text] + values))
    return "\n".join(lines) + "\n"


def serialize_songs(songs: Iterable[SongSequence]) -> str:
    """Canonical JSONL for a collection of songs."""
    lines = []
    for song in songs:
        verses = []
        for verse in song.verses:
            entry = {"verse_id": verse.verse_id, "text": verse.text}
            if verse.gold is not None:
                entry["gold"] = verse.gold.to_dict()
            verses.append(entry)
        lines.append(json.dumps({"song_id": song.song_id, "verses": verses}, ensure_ascii=False))
    return "\n".join(lines) + "\n"


def label_zero_fraction(songs: Iterable[SongSequence]) -> Dict[str, float]:
    """Share of gold labels equal to zero, per emotion, over all annotated verses."""
    gold = [song.gold_matrix() for song in songs if song.has_gold]
    if not gold:
        raise InputError("no annotated songs to summarize")
    stacked = np.vstack(gold)
    return {emotion: float(np.mean(stacked[:, i] == 0.0)) for i, emotion in enumerate(EMOTIONS)}


def repeated_verses(song: SongSequence) -> List[List[str]]:
    """
    Groups of verse ids whose tokenized text is identical. For annotated songs
    only groups whose gold labels disagree are returned.
    """
    groups: Dict[Tuple[str, ...], List[Verse]] = defaultdict(list)
    for verse in song.verses:
        groups[tuple(tokenize(verse.text))].append(verse)
    repeated = []
    for tokens, verses in groups.items():
        if len(verses) < 2 or not tokens:
            continue
        if song.has_gold and len({verse.gold for verse in verses}) < 2:
            continue
        repeated.append([verse.verse_id for verse in verses])
    return repeated
