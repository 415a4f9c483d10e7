# tuning/tune_ridge.py

import os
from typing import Dict, Optional

import pandas as pd
import yaml

from data.corpus import EMOTIONS
from utils.logger import logger
from utils.pipeline import PipelineConfig, load_corpora, train_verse

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
BEST_PARAMS_PATH = os.path.join(BASE_DIR, "best_params.yaml")


def tune_ridge(config: PipelineConfig) -> pd.DataFrame:
    """
    Cross-validated Pearson r of every lambda in the grid, per emotion.

    Returns:
        pd.DataFrame: columns emotion, lambda, cv_r, best.
    """
    models = train_verse(config, load_corpora(config))
    rows = []
    for emotion in EMOTIONS:
        model = models[emotion]
        rows += [
            {"emotion": emotion, "lambda": lam, "cv_r": score, "best": lam == model.lam}
            for lam, score in model.cv_scores.items()
        ]
    return pd.DataFrame(rows, columns=["emotion", "lambda", "cv_r", "best"])


def save_best_lambdas(table: pd.DataFrame, path: str = BEST_PARAMS_PATH) -> Dict[str, dict]:
    """Merges the selected lambda per emotion into the `ridge` section of best_params.yaml."""
    best = {
        row.emotion: {"lambda": float(row["lambda"]), "cv_r": float(row.cv_r)}
        for _, row in table[table["best"]].iterrows()
    }
    try:
        with open(path, "r") as f:
            all_params = yaml.safe_load(f) or {}
    except FileNotFoundError:
        all_params = {}
    all_params["ridge"] = best
    try:
        with open(path, "w") as f:
            yaml.safe_dump(all_params, f)
    except Exception as e:
        logger.error(f"Failed to save best params: {e}")
        raise
    logger.info(f"Best ridge lambdas saved to {path}")
    return best


def main(config_path: Optional[str] = None) -> None:
    config = PipelineConfig.from_sources(config_path)
    table = tune_ridge(config)
    best = save_best_lambdas(table)
    print(table.to_string(index=False))
    print(f"Best lambdas: { {emotion: params['lambda'] for emotion, params in best.items()} }")


if __name__ == "__main__":
    main()
