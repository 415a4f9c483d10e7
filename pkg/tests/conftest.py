from pathlib import Path

import numpy as np
import pytest

from utils.pipeline import PipelineConfig

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "data" / "fixtures"


@pytest.fixture
def fixture_dir() -> Path:
    return FIXTURES


@pytest.fixture
def pipeline_config(tmp_path):
    def make(**overrides) -> PipelineConfig:
        values = dict(
            lexicon_dir=FIXTURES / "lexicons",
            source_path=FIXTURES / "headlines.tsv",
            songs_path=FIXTURES / "songs.jsonl",
            output_dir=tmp_path / "output",
            n_jobs=1,
        )
        values.update(overrides)
        return PipelineConfig(**values)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
