import json

import numpy as np
import pytest

from data.corpus import (
    EMOTIONS,
    EmotionScores,
    SongSequence,
    Verse,
    label_zero_fraction,
    load_headlines,
    load_songs,
    repeated_verses,
    serialize_headlines,
    serialize_songs,
    tokenize,
)
from data.synthetic import generate_benchmark, save_benchmark
from utils.errors import InputError

GOLD = {emotion: 1.0 for emotion in EMOTIONS}


def song_line(song_id, verses):
    return json.dumps({"song_id": song_id, "verses": verses})


class TestTokenize:
    @pytest.mark.parametrize(
        "text, tokens",
        [
            ("Don't STOP me now!", ["don't", "stop", "me", "now"]),
            ("rock'n'roll", ["rock'n'roll"]),
            ("it’s fine", ["it's", "fine"]),
            ("'quoted' words_here", ["quoted", "words", "here"]),
            ("", []),
        ],
    )
    def test_examples(self, text, tokens):
        assert tokenize(text) == tokens


class TestHeadlines:
    def test_fixture(self, fixture_dir):
        records = load_headlines(fixture_dir / "headlines.tsv")
        assert len(records) == 50
        assert records[0].id == "h001"
        assert records[0].scores.as_array().shape == (6,)

    def test_out_of_range_names_line_and_column(self, tmp_path):
        path = tmp_path / "h.tsv"
        path.write_text("1\tgood day\t0\t0\t0\t50\t0\t0\t10\n2\tbad\t0\t0\t101\t0\t0\t0\t0\n", encoding="utf-8")
        with pytest.raises(InputError, match=r":2: column 5 \(fear\)"):
            load_headlines(path)

    def test_column_count(self, tmp_path):
        path = tmp_path / "h.tsv"
        path.write_text("1\ttext\t0\t0\n", encoding="utf-8")
        with pytest.raises(InputError, match="expected 9 columns"):
            load_headlines(path)

    def test_invalid_utf8(self, tmp_path):
        path = tmp_path / "h.tsv"
        path.write_bytes(b"1\tcaf\xe9\t0\t0\t0\t0\t0\t0\t0\n")
        with pytest.raises(InputError, match=":1: invalid UTF-8"):
            load_headlines(path)

    def test_serialize_round_trip(self, fixture_dir, tmp_path):
        records = load_headlines(fixture_dir / "headlines.tsv")
        path = tmp_path / "again.tsv"
        path.write_text(serialize_headlines(records), encoding="utf-8")
        assert load_headlines(path) == records


class TestSongs:
    def test_fixture(self, fixture_dir):
        songs = load_songs(fixture_dir / "songs.jsonl")
        assert [s.song_id for s in songs] == ["song1", "song2", "song3", "song4", "song5"]
        assert sum(len(s) for s in songs) == 41
        assert all(s.has_gold for s in songs)
        assert songs[0].gold_matrix().shape == (len(songs[0]), 6)

    def test_partial_gold_rejected(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text(song_line("x", [
            {"verse_id": "1", "text": "a", "gold": GOLD},
            {"verse_id": "2", "text": "b"},
        ]) + "\n", encoding="utf-8")
        with pytest.raises(InputError, match="all or none"):
            load_songs(path)

    def test_gold_range(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text(song_line("x", [{"verse_id": "1", "text": "a", "gold": {**GOLD, "joy": 11}}]), encoding="utf-8")
        with pytest.raises(InputError, match="gold joy"):
            load_songs(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text("{not json}\n", encoding="utf-8")
        with pytest.raises(InputError, match=":1: malformed JSON"):
            load_songs(path)

    def test_duplicate_song_id(self, tmp_path):
        path = tmp_path / "s.jsonl"
        line = song_line("x", [{"verse_id": "1", "text": "a"}])
        path.write_text(line + "\n" + line + "\n", encoding="utf-8")
        with pytest.raises(InputError, match="duplicate song id"):
            load_songs(path)

    def test_unlabeled_song(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text(song_line("x", [{"verse_id": "1", "text": "a"}, {"verse_id": "2", "text": ""}]), encoding="utf-8")
        song = load_songs(path)[0]
        assert not song.has_gold
        with pytest.raises(InputError):
            song.gold_matrix()

    def test_serialize_round_trip(self, fixture_dir, tmp_path):
        songs = load_songs(fixture_dir / "songs.jsonl")
        path = tmp_path / "again.jsonl"
        path.write_text(serialize_songs(songs), encoding="utf-8")
        assert load_songs(path) == songs


class TestStatistics:
    def test_zero_fraction(self):
        zero = EmotionScores(0, 0, 0, 5, 0, 0)
        some = EmotionScores(1, 0, 0, 0, 0, 0)
        song = SongSequence("s", (Verse("1", "a", zero), Verse("2", "b", some)))
        fractions = label_zero_fraction([song])
        assert fractions["anger"] == 0.5
        assert fractions["disgust"] == 1.0
        assert fractions["joy"] == 0.5

    def test_repeated_verses_with_different_gold(self, fixture_dir):
        songs = load_songs(fixture_dir / "songs.jsonl")
        assert repeated_verses(songs[1]) == [["s2v1", "s2v5"]]

    def test_repeated_verses_same_gold_ignored(self):
        scores = EmotionScores.from_values([1] * 6)
        song = SongSequence("s", (Verse("1", "La la", scores), Verse("2", "la la!", scores)))
        assert repeated_verses(song) == []

    def test_from_values_checks_length(self):
        with pytest.raises(InputError):
            EmotionScores.from_values([1, 2, 3])


class TestSyntheticBenchmark:
    def test_shapes_and_determinism(self):
        first = generate_benchmark(n_songs=3, T=10, seed=5)
        second = generate_benchmark(n_songs=3, T=10, seed=5)
        assert [s.song_id for s in first] == ["syn-000", "syn-001", "syn-002"]
        assert all(s.latent.shape == s.observed.shape == (10,) for s in first)
        assert all(np.array_equal(a.observed, b.observed) for a, b in zip(first, second))

    def test_validation(self):
        with pytest.raises(InputError):
            generate_benchmark(n_songs=2, T=1)
        with pytest.raises(InputError):
            generate_benchmark(n_songs=2, T=5, R=0.0)

    def test_save(self, tmp_path):
        save_benchmark(generate_benchmark(n_songs=2, T=4, seed=1), tmp_path / "bench.csv")
        lines = (tmp_path / "bench.csv").read_text().splitlines()
        assert lines[0] == "song_id,step,latent,observed"
        assert len(lines) == 9
