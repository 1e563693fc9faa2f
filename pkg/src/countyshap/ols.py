"""Population-weighted linear regression with regression-table inference."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import linalg, stats

from .data import Dataset, MissingFeatureError, feature_vector

INTERCEPT = "const"
WEIGHT_KINDS = ("analytic", "frequency")


class RankDeficientError(np.linalg.LinAlgError):
    pass


def stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


@dataclass(frozen=True)
class OlsFit:
    """Result of a weighted least-squares fit.

    ``names`` lists the predictors followed by the intercept; every per-coefficient
    mapping is keyed by those names. ``weight_kind`` records how weights entered the
    degrees of freedom: ``"analytic"`` uses ``n_obs - k`` (regression-table
    convention, invariant to rescaling the weights) while ``"frequency"`` treats
    integer weights as replicate counts and uses ``sum(w) - k``.
    """

    names: tuple[str, ...]
    coefficients: Mapping[str, float]
    std_errors: Mapping[str, float]
    t_stats: Mapping[str, float]
    p_values: Mapping[str, float]
    r2: float
    adj_r2: float
    f_stat: float
    f_pvalue: float
    df1: int
    df2: float
    residual_std_error: float
    n_obs: int
    sum_weights: float
    target: str = "y"
    weight_kind: str = "analytic"
    cov: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def predictors(self) -> tuple[str, ...]:
        return tuple(n for n in self.names if n != INTERCEPT)

    def beta(self) -> np.ndarray:
        """Coefficient vector ordered as predictors then intercept."""
        return np.array([self.coefficients[n] for n in self.names])

    def predict(self, record: Any) -> float:
        """Linear prediction for one record; deliberately not clamped to [0, 1]."""
        x = feature_vector(record, self.predictors)
        return float(self.coefficients[INTERCEPT] + np.dot(x, [self.coefficients[n] for n in self.predictors]))

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.predictors):
            raise MissingFeatureError(f"expected {len(self.predictors)} columns, got shape {X.shape}")
        b = np.array([self.coefficients[n] for n in self.predictors])
        return self.coefficients[INTERCEPT] + X @ b

    def to_dict(self) -> dict[str, Any]:
        return {
            "names": list(self.names),
            "target": self.target,
            "weight_kind": self.weight_kind,
            "coefficients": dict(self.coefficients),
            "std_errors": dict(self.std_errors),
            "t_stats": dict(self.t_stats),
            "p_values": dict(self.p_values),
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "f_stat": self.f_stat,
            "f_pvalue": self.f_pvalue,
            "df1": self.df1,
            "df2": self.df2,
            "residual_std_error": self.residual_std_error,
            "n_obs": self.n_obs,
            "sum_weights": self.sum_weights,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> OlsFit:
        kw = dict(d)
        kw["names"] = tuple(kw["names"])
        return cls(**kw)

    def summary_table(self) -> str:
        return summary_table(self)


def fit_wls_arrays(X: np.ndarray, y: np.ndarray, w: np.ndarray, names: Sequence[str],
                   target: str = "y", weight_kind: str = "analytic") -> OlsFit:
    """Weighted least squares on raw arrays; see :func:`fit_wls`."""
    if weight_kind not in WEIGHT_KINDS:
        raise ValueError(f"weight_kind must be one of {WEIGHT_KINDS}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n, m = X.shape
    k = m + 1
    if len(names) != m:
        raise ValueError("names must match the number of columns")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and strictly positive")
    if n <= k:
        raise ValueError(f"need more than {k} observations, got {n}")

    design = np.column_stack([X, np.ones(n)])
    sw = np.sqrt(w)
    Q, R = np.linalg.qr(design * sw[:, None])
    diag = np.abs(np.diag(R))
    if diag.min() <= diag.max() * max(n, k) * np.finfo(float).eps * 10:
        raise RankDeficientError("design matrix is rank deficient (collinear predictors)")
    beta = linalg.solve_triangular(R, Q.T @ (y * sw))
    Rinv = linalg.solve_triangular(R, np.eye(k))
    xtwx_inv = Rinv @ Rinv.T

    resid = y - design @ beta
    rss = float(np.dot(w, resid**2))
    sum_w = float(w.sum())
    ybar = float(np.dot(w, y) / sum_w)
    tss = float(np.dot(w, (y - ybar) ** 2))
    n_eff = n if weight_kind == "analytic" else sum_w
    df2 = n_eff - k
    if df2 <= 0:
        raise ValueError("non-positive residual degrees of freedom")
    sigma2 = rss / df2
    cov = sigma2 * xtwx_inv
    se = np.sqrt(np.diag(cov))
    t = beta / se
    p = 2.0 * stats.t.sf(np.abs(t), df2)

    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    adj = 1.0 - (1.0 - r2) * (n_eff - 1) / df2
    df1 = m
    f = (r2 / df1) / ((1.0 - r2) / df2) if r2 < 1.0 else np.inf
    f_p = float(stats.f.sf(f, df1, df2)) if np.isfinite(f) else 0.0

    all_names = tuple(names) + (INTERCEPT,)
    as_map = lambda v: {nm: float(x) for nm, x in zip(all_names, v)}  # noqa: E731
    return OlsFit(
        names=all_names,
        coefficients=as_map(beta),
        std_errors=as_map(se),
        t_stats=as_map(t),
        p_values=as_map(np.clip(p, 0.0, 1.0)),
        r2=float(r2),
        adj_r2=float(adj),
        f_stat=float(f),
        f_pvalue=f_p,
        df1=df1,
        df2=float(df2) if weight_kind == "frequency" else int(df2),
        residual_std_error=float(np.sqrt(sigma2)),
        n_obs=n,
        sum_weights=sum_w,
        target=target,
        weight_kind=weight_kind,
        cov=cov,
    )


def fit_wls(train: Dataset, predictors: Sequence[str] | None = None, target: str | None = None,
            weight: str | None = None, weight_kind: str = "analytic") -> OlsFit:
    """Fit ``target ~ predictors + const`` minimising ``sum w_i (y_i - x_i' b)^2``.

    Solved through a QR decomposition of the sqrt(w)-scaled design, so collinear
    predictors surface as :class:`RankDeficientError`. Standard errors are the
    classical homoskedastic ones and p-values come from the t distribution with
    ``df2`` degrees of freedom.
    """
    schema = train.schema
    predictors = tuple(predictors or schema.predictors)
    target = target or schema.target
    weight = weight or schema.weight
    frame = train.frame
    X = frame[list(predictors)].to_numpy(dtype=float)
    return fit_wls_arrays(X, frame[target].to_numpy(dtype=float), frame[weight].to_numpy(dtype=float),
                          predictors, target=target, weight_kind=weight_kind)


def predict(fit: OlsFit, record: Any) -> float:
    return fit.predict(record)


def out_of_range(predictions: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Positions of predictions outside [lo, hi] (flagged, never clamped)."""
    p = np.asarray(predictions)
    return np.flatnonzero((p < lo) | (p > hi))


def _fmt_int(v: float) -> str:
    return f"{int(v):,}" if float(v).is_integer() else f"{v:,.3f}"


def summary_table(fit: OlsFit, digits: int = 3) -> str:
    """Render the fit in the layout of a journal regression table."""
    rows = []
    for name in fit.predictors + (INTERCEPT,):
        label = "Constant" if name == INTERCEPT else name
        coef = fit.coefficients[name]
        cell = f"{coef:.{digits}f}{stars(fit.p_values[name])} ({fit.std_errors[name]:.{digits}f})"
        rows.append((label, cell))
    footer = [
        ("Observations", f"{fit.n_obs:,}"),
        ("R2", f"{fit.r2:.{digits}f}"),
        ("Adjusted R2", f"{fit.adj_r2:.{digits}f}"),
        ("Residual Std. Error", f"{fit.residual_std_error:.{digits}f} (df = {_fmt_int(fit.df2)})"),
        ("F Statistic", f"{fit.f_stat:.{digits}f}{stars(fit.f_pvalue)} (df = {fit.df1}; {_fmt_int(fit.df2)})"),
    ]
    width = max(len(label) for label, _ in rows + footer) + 2
    cellw = max(len(c) for _, c in rows + footer)
    rule = "=" * (width + cellw)
    thin = "-" * (width + cellw)
    lines = [rule, f"{'':<{width}}{'Dependent variable:':>{cellw}}", f"{'':<{width}}{fit.target:>{cellw}}", thin]
    lines += [f"{label:<{width}}{cell:>{cellw}}" for label, cell in rows]
    lines.append(thin)
    lines += [f"{label:<{width}}{cell:>{cellw}}" for label, cell in footer]
    lines.append(rule)
    lines.append(f"{'Note:':<{width}}{'*p<0.1; **p<0.05; ***p<0.01':>{cellw}}")
    return "\n".join(lines)


def summary_record(fit: OlsFit) -> str:
    """Machine-readable counterpart of :func:`summary_table` (one JSON object)."""
    d = fit.to_dict()
    d["stars"] = {n: stars(fit.p_values[n]) for n in fit.names}
    return json.dumps(d, sort_keys=True)
