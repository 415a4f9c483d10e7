"""
Synthetic song benchmark: random-walk emotion latents observed through noise,
standing in for verse-level predictions whose true dynamics are known.
"""

from pathlib import Path
from typing import List, NamedTuple, Union

import numpy as np
import pandas as pd

from models.ssm import InitialBelief, SsmParams, simulate
from utils.errors import InputError
from utils.logger import logger

BENCHMARK_COLUMNS = ["song_id", "step", "latent", "observed"]


class SyntheticSong(NamedTuple):
    song_id: str
    latent: np.ndarray
    observed: np.ndarray


def generate_benchmark(
    n_songs: int = 100,
    T: int = 60,
    Q: float = 1.0,
    R: float = 5.0,
    level: float = 5.0,
    seed: int = 13,
) -> List[SyntheticSong]:
    """
    Simulates n_songs sequences of a scalar random walk (A = C = 1).

    Args:
        n_songs (int): Number of songs.
        T (int): Verses per song.
        Q (float): Latent step variance.
        R (float): Observation noise variance.
        level (float): Mean of the first latent value.
        seed (int): Master seed; each song gets its own derived stream.

    Returns:
        list: SyntheticSong per song, ids "syn-000", "syn-001", ...
    """
    if n_songs < 1 or T < 2:
        raise InputError("benchmark needs at least one song of two or more verses")
    if Q <= 0 or R <= 0:
        raise InputError("benchmark Q and R must be positive")
    params = SsmParams.scalar(A=1.0, C=1.0, Q=Q, R=R)
    start = InitialBelief(mean=[level], cov=[[Q]])
    song_seeds = np.random.SeedSequence(seed).generate_state(n_songs)
    songs = []
    for i, song_seed in enumerate(song_seeds):
        z, y = simulate(params, start, T, int(song_seed))
        songs.append(SyntheticSong(f"syn-{i:03d}", z[:, 0], y[:, 0]))
    logger.info(f"Generated {n_songs} synthetic songs of {T} verses (Q={Q:g}, R={R:g}, seed={seed})")
    return songs


def save_benchmark(songs: List[SyntheticSong], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [
            (song.song_id, t, float(latent), float(observed))
            for song in songs
            for t, (latent, observed) in enumerate(zip(song.latent, song.observed))
        ],
        columns=BENCHMARK_COLUMNS,
    )
    frame.to_csv(path, index=False, lineterminator="\n")
