"""Seeded synthetic datasets for benchmarks and tests."""
from __future__ import annotations

import numpy as np
import pandas as pd

from .data import TARGET, WEIGHT, Dataset, Schema, from_frame


def county_frame(n: int, seed: int = 0) -> pd.DataFrame:
    """Plausible county table with the seven share predictors.

    The target mixes linear effects with a politics x poverty interaction and a
    threshold effect on the Hispanic share, so trees have something to find.
    """
    rng = np.random.default_rng(seed)
    asian = rng.beta(1.2, 25.0, n)
    black = rng.beta(0.6, 6.0, n) * (1 - asian)
    hisp = rng.beta(0.8, 6.0, n) * (1 - asian - black)
    food = rng.beta(2.0, 14.0, n)
    old = rng.beta(6.0, 26.0, n)
    young = rng.beta(4.0, 70.0, n)
    rep = rng.beta(5.0, 2.5, n)
    y = (
        0.94 - 0.2 * food + 0.11 * asian + 0.07 * hisp - 0.35 * black + 0.11 * old - 0.6 * young
        - 0.52 * rep - 0.3 * rep * food + 0.15 * np.clip(hisp - 0.65, 0, None)
        + rng.normal(0, 0.05, n)
    )
    pop_total = np.round(np.exp(rng.normal(10.3, 1.4, n))) + 100
    pop_adult = np.round(pop_total * rng.uniform(0.7, 0.82, n))
    return pd.DataFrame({
        "fips": [f"{10000 + i:05d}" for i in range(n)],
        "name": [f"County {i}" for i in range(n)],
        "state": ["ZZ"] * n,
        "perc_food_st": food,
        "perc_asian": asian,
        "perc_hisp": hisp,
        "perc_black": black,
        "perc_old65": old,
        "perc_young25": young,
        "perc_rep": rep,
        TARGET: np.clip(y, 0.01, 0.99),
        WEIGHT: pop_adult,
        "pop_total": pop_total,
    })


def counties(n: int, seed: int = 0) -> Dataset:
    return from_frame(county_frame(n, seed), Schema(), origin="synthetic")


def interaction_frame(n: int, seed: int = 0, sigma: float = 0.02) -> pd.DataFrame:
    """y = 0.6 - 0.3 x1 + 0.4 x1 x2 + N(0, sigma), x uniform on [0, 1], unit weights."""
    rng = np.random.default_rng(seed)
    x1 = rng.random(n)
    x2 = rng.random(n)
    y = 0.6 - 0.3 * x1 + 0.4 * x1 * x2 + rng.normal(0, sigma, n)
    return pd.DataFrame({"id": [str(i) for i in range(n)], "x1": x1, "x2": x2, "y": y, "w": np.ones(n)})


def interaction(n: int, seed: int = 0, sigma: float = 0.02) -> Dataset:
    return from_frame(interaction_frame(n, seed, sigma), Schema.generic(["x1", "x2"]), origin="synthetic")


def linear(n: int, coef: np.ndarray, intercept: float, seed: int = 0, sigma: float = 0.0,
           weights: np.ndarray | None = None) -> Dataset:
    rng = np.random.default_rng(seed)
    coef = np.asarray(coef, dtype=float)
    X = rng.random((n, len(coef)))
    y = intercept + X @ coef + (rng.normal(0, sigma, n) if sigma > 0 else 0.0)
    names = [f"x{j + 1}" for j in range(len(coef))]
    df = pd.DataFrame(X, columns=names)
    df.insert(0, "id", [str(i) for i in range(n)])
    df["y"] = y
    df["w"] = np.ones(n) if weights is None else weights
    return from_frame(df, Schema.generic(names), origin="synthetic")

