"""
Lexicon tables and per-word lexicon feature vectors.

Nine lexicons are concatenated in a fixed order into a 25-dim word vector.
Each lexicon block can be expanded on its own into all monomials of total
degree <= p (constant term included), giving 267 columns at p=3.

Lexicon files are UTF-8 TSV, one record per line: `word \\t f1 [\\t f2 ...]`,
`#` comment lines skipped. See emotion_dynamics_documentation.txt for how to
convert the original distributions into this format.
"""

from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.preprocessing import PolynomialFeatures

from data.corpus import decoded_lines
from utils.errors import InputError
from utils.logger import logger

FORMAT_VERSION = 1


class LexiconSchema(NamedTuple):
    name: str
    width: int
    label_kind: str  # "numerical" or "nominal"
    filename: str


LEXICON_SCHEMAS: Tuple[LexiconSchema, ...] = (
    LexiconSchema("nrc_emo_int", 1, "numerical", "nrc_emo_int.tsv"),
    LexiconSchema("sentiwordnet", 2, "numerical", "sentiwordnet.tsv"),
    LexiconSchema("nrc_emo_lex", 1, "nominal", "nrc_emo_lex.tsv"),
    LexiconSchema("nrc_hash_emo", 1, "numerical", "nrc_hash_emo.tsv"),
    LexiconSchema("sentiment140", 3, "numerical", "sentiment140.tsv"),
    LexiconSchema("emo_aff_neg", 3, "numerical", "emo_aff_neg.tsv"),
    LexiconSchema("hash_aff_neg", 3, "numerical", "hash_aff_neg.tsv"),
    LexiconSchema("hash_senti", 3, "numerical", "hash_senti.tsv"),
    LexiconSchema("depechemood", 8, "numerical", "depechemood.tsv"),
)
SCHEMAS_BY_NAME: Dict[str, LexiconSchema] = {schema.name: schema for schema in LEXICON_SCHEMAS}
BLOCK_WIDTHS: Tuple[int, ...] = tuple(schema.width for schema in LEXICON_SCHEMAS)


@dataclass(frozen=True)
class LexiconTable:
    name: str
    width: int
    label_kind: str
    entries: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.label_kind not in ("numerical", "nominal"):
            raise InputError(f"lexicon {self.name}: unknown label kind {self.label_kind!r}")
        for word, vector in self.entries.items():
            if vector.shape != (self.width,) or not np.all(np.isfinite(vector)):
                raise InputError(f"lexicon {self.name}: bad vector for {word!r}")
            if self.label_kind == "nominal" and not np.all(np.isin(vector, (0.0, 1.0))):
                raise InputError(f"lexicon {self.name}: nominal value other than 0/1 for {word!r}")

    def lookup(self, word: str) -> np.ndarray:
        """Vector for word, or a zero block when the lexicon misses it."""
        vector = self.entries.get(word)
        return np.zeros(self.width) if vector is None else vector

    def __len__(self) -> int:
        return len(self.entries)


def _resolve_schema(schema: Union[str, LexiconSchema]) -> LexiconSchema:
    if isinstance(schema, LexiconSchema):
        return schema
    if schema not in SCHEMAS_BY_NAME:
        raise InputError(f"unknown lexicon schema {schema!r}; known: {sorted(SCHEMAS_BY_NAME)}")
    return SCHEMAS_BY_NAME[schema]


def parse_lexicon(path: Union[str, Path], schema: Union[str, LexiconSchema]) -> LexiconTable:
    """
    Parses one canonical lexicon TSV.

    Args:
        path (str or Path): Lexicon file.
        schema (str or LexiconSchema): Schema name from LEXICON_SCHEMAS or an explicit schema.

    Returns:
        LexiconTable: One entry per distinct (lowercased) word; later rows win.
    """
    schema = _resolve_schema(schema)
    path = Path(path)
    entries: Dict[str, np.ndarray] = {}
    duplicates = 0
    for lineno, line in decoded_lines(path):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != schema.width + 1:
            raise InputError(
                f"{path}:{lineno}: expected {schema.width + 1} columns for {schema.name}, got {len(fields)}"
            )
        try:
            vector = np.array([float(v) for v in fields[1:]])
        except ValueError as e:
            raise InputError(f"{path}:{lineno}: non-numeric field ({e})") from e
        if not np.all(np.isfinite(vector)):
            raise InputError(f"{path}:{lineno}: non-finite value")
        if schema.label_kind == "nominal" and not np.all(np.isin(vector, (0.0, 1.0))):
            raise InputError(f"{path}:{lineno}: nominal lexicon values must be 0 or 1")
        word = fields[0].strip().lower()
        if word in entries:
            duplicates += 1
        entries[word] = vector
    if duplicates:
        logger.warning(f"Lexicon {schema.name}: {duplicates} duplicate words resolved by last occurrence")
    return LexiconTable(schema.name, schema.width, schema.label_kind, entries)


def load_lexicons(directory: Union[str, Path]) -> List[LexiconTable]:
    """All nine lexicons in declared order; missing files become empty tables."""
    directory = Path(directory)
    tables = []
    for schema in LEXICON_SCHEMAS:
        path = directory / schema.filename
        if path.exists():
            tables.append(parse_lexicon(path, schema))
        else:
            logger.warning(f"Lexicon file {path} not found; {schema.name} contributes zeros")
            tables.append(LexiconTable(schema.name, schema.width, schema.label_kind))
    logger.info(f"Lexicons loaded: " + ", ".join(f"{t.name}={len(t)}" for t in tables))
    return tables


@dataclass(frozen=True)
class Vocabulary:
    words: Tuple[str, ...]

    @cached_property
    def index(self) -> Dict[str, int]:
        return {word: i for i, word in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index


def build_vocabulary(*token_streams: Iterable[Sequence[str]]) -> Vocabulary:
    """Sorted unique tokens over any number of tokenized corpora."""
    words = {token for stream in token_streams for tokens in stream for token in tokens}
    if not words:
        raise InputError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(tuple(sorted(words)))


def word_features(word: str, tables: Sequence[LexiconTable]) -> np.ndarray:
    """Concatenated per-lexicon vectors (25 dims for the nine declared lexicons)."""
    return np.concatenate([table.lookup(word) for table in tables])


def expanded_block_sizes(block_widths: Sequence[int], degree: int) -> List[int]:
    """Number of monomials of total degree <= degree per block: C(d + p, p)."""
    return [comb(width + degree, degree) for width in block_widths]


def _expand_blocks(
    matrix: np.ndarray, block_widths: Sequence[int], degree: int, names: Optional[Sequence[str]] = None
) -> Tuple[np.ndarray, List[str]]:
    if degree < 1:
        raise InputError("polynomial degree must be at least 1")
    if matrix.shape[1] != sum(block_widths):
        raise InputError(f"feature width {matrix.shape[1]} does not match blocks {list(block_widths)}")
    names = list(names) if names is not None else [f"x{i}" for i in range(matrix.shape[1])]
    blocks, columns, start = [], [], 0
    for width in block_widths:
        expander = PolynomialFeatures(degree=degree, include_bias=True)
        blocks.append(expander.fit_transform(matrix[:, start:start + width]))
        block_names = names[start:start + width]
        prefix = block_names[0].rsplit("_", 1)[0]
        columns.extend(
            f"{prefix}:1" if name == "1" else name for name in expander.get_feature_names_out(block_names)
        )
        start += width
    return np.hstack(blocks), columns


def poly_expand(vector: Sequence[float], block_widths: Sequence[int] = BLOCK_WIDTHS, degree: int = 3) -> np.ndarray:
    """
    Per-block polynomial expansion of one lexicon vector.

    Monomials are in graded lexicographic order with the constant first,
    e.g. [a, b] at degree 2 -> [1, a, b, a^2, ab, b^2].
    """
    expanded, _ = _expand_blocks(np.atleast_2d(np.asarray(vector, dtype=float)), block_widths, degree)
    return expanded[0]


@dataclass(frozen=True)
class WordFeatureMatrix:
    """Row i holds the lexicon features of vocabulary word i."""

    vocabulary: Vocabulary
    matrix: np.ndarray
    columns: Tuple[str, ...]
    degree: int

    def __post_init__(self):
        if self.matrix.shape != (len(self.vocabulary), len(self.columns)):
            raise InputError(f"feature matrix shape {self.matrix.shape} inconsistent with vocabulary/columns")

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def rows(self, tokens: Sequence[str]) -> np.ndarray:
        """Rows for the in-vocabulary tokens (possibly zero rows)."""
        index = self.vocabulary.index
        positions = [index[token] for token in tokens if token in index]
        return self.matrix[positions]


def build_word_feature_matrix(
    vocabulary: Vocabulary, tables: Sequence[LexiconTable], degree: int = 3
) -> WordFeatureMatrix:
    """
    Stacks word_features for every vocabulary word; degree 0 keeps the raw
    columns, degree p >= 1 expands each lexicon block independently.
    """
    raw = np.array([word_features(word, tables) for word in vocabulary.words])
    names = [f"{table.name}_{k}" for table in tables for k in range(table.width)]
    if degree == 0:
        return WordFeatureMatrix(vocabulary, raw, tuple(names), 0)
    expanded, columns = _expand_blocks(raw, [table.width for table in tables], degree, names)
    logger.info(f"Word features expanded from {raw.shape[1]} to {expanded.shape[1]} columns (degree {degree})")
    return WordFeatureMatrix(vocabulary, expanded, tuple(columns), degree)


def save_vocabulary(vocabulary: Vocabulary, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# version={FORMAT_VERSION}\n")
        pd.DataFrame({"index": range(len(vocabulary)), "word": vocabulary.words}).to_csv(
            f, sep="\t", index=False, lineterminator="\n"
        )


def save_word_feature_matrix(features: WordFeatureMatrix, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(features.matrix, columns=list(features.columns), index=list(features.vocabulary.words))
    frame.index.name = "word"
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# version={FORMAT_VERSION} degree={features.degree}\n")
        frame.to_csv(f, sep="\t", lineterminator="\n")
