"""Held-out accuracy metrics and the OLS-versus-forest comparison."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .data import Dataset
from .forest import Forest
from .ols import OlsFit, out_of_range


def _pair(predicted: Sequence[float], actual: Sequence[float], min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.ndim != 1:
        raise ValueError(f"length mismatch: {p.shape} vs {a.shape}")
    if len(p) < min_len:
        raise ValueError(f"need at least {min_len} values, got {len(p)}")
    return p, a


def mae(predicted: Sequence[float], actual: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Mean absolute error; unweighted unless ``weights`` is given."""
    p, a = _pair(predicted, actual)
    err = np.abs(p - a)
    if weights is None:
        return float(np.mean(err))
    w = np.asarray(weights, dtype=float)
    return float(np.dot(w, err) / w.sum())


def r_squared(predicted: Sequence[float], actual: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """1 - SSE/SST around the mean of ``actual``."""
    p, a = _pair(predicted, actual, min_len=2)
    w = np.ones(len(a)) if weights is None else np.asarray(weights, dtype=float)
    abar = np.dot(w, a) / w.sum()
    sst = float(np.dot(w, (a - abar) ** 2))
    if sst == 0.0:
        raise ValueError("r_squared is undefined for constant actual values")
    return float(1.0 - np.dot(w, (p - a) ** 2) / sst)


@dataclass(frozen=True)
class MetricsReport:
    label: str
    mae: float
    r2: float
    n_test: int
    residuals: tuple[float, ...] = field(default=(), repr=False)
    n_out_of_range: int = 0

    def as_dict(self, with_residuals: bool = False) -> dict[str, Any]:
        d = {"label": self.label, "mae": self.mae, "r2": self.r2, "n_test": self.n_test,
             "n_out_of_range": self.n_out_of_range}
        if with_residuals:
            d["residuals"] = list(self.residuals)
        return d


def evaluate(label: str, predicted: np.ndarray, actual: np.ndarray, weights: np.ndarray | None = None,
             keep_residuals: bool = False) -> MetricsReport:
    predicted = np.asarray(predicted, dtype=float)
    return MetricsReport(
        label=label,
        mae=mae(predicted, actual, weights),
        r2=r_squared(predicted, actual, weights),
        n_test=len(predicted),
        residuals=tuple((predicted - np.asarray(actual)).tolist()) if keep_residuals else (),
        n_out_of_range=len(out_of_range(predicted)),
    )


@dataclass(frozen=True)
class Comparison:
    ols: MetricsReport
    forest: MetricsReport

    @property
    def winners(self) -> dict[str, str]:
        def pick(a: float, b: float, lower_better: bool) -> str:
            if a == b:
                return "tie"
            return self.ols.label if (a < b) == lower_better else self.forest.label

        return {"mae": pick(self.ols.mae, self.forest.mae, True), "r2": pick(self.ols.r2, self.forest.r2, False)}

    def as_dict(self) -> dict[str, Any]:
        return {"ols": self.ols.as_dict(), "forest": self.forest.as_dict(), "winners": self.winners}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)

    def to_text(self) -> str:
        rows = [f"{'model':<10}{'MAE':>18}{'r2':>10}{'n_test':>8}"]
        for r in (self.ols, self.forest):
            rows.append(f"{r.label:<10}{f'{r.mae:.4f} ({100 * r.mae:.1f}%)':>18}{r.r2:>10.3f}{r.n_test:>8}")
        w = self.winners
        rows.append(f"winner: MAE -> {w['mae']}, r2 -> {w['r2']}")
        if self.ols.n_out_of_range:
            rows.append(f"note: {self.ols.n_out_of_range} {self.ols.label} predictions fall outside [0, 1]")
        return "\n".join(rows)


def compare_models(ols_fit: OlsFit, forest: Forest, test: Dataset, weighted: bool = False,
                   keep_residuals: bool = False) -> Comparison:
    """Score both models on the same held-out rows."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    if forest.train_keys:
        overlap = set(forest.train_keys) & set(str(k) for k in test.keys)
        if overlap:
            raise ValueError(f"{len(overlap)} test rows were used to train the forest")
    X = test.frame[list(ols_fit.predictors)].to_numpy(dtype=float)
    y = test.y
    w = test.w if weighted else None
    return Comparison(
        ols=evaluate("OLS", ols_fit.predict_many(X), y, w, keep_residuals),
        forest=evaluate("Forest", forest.predict(test), y, w, keep_residuals),
    )
