"""Per-county explanation reports and export files (bar-chart and scatter data)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .data import DISPLAY_LABELS
from .shapley import ShapExplanation


@dataclass(frozen=True)
class Decomposition:
    """Prediction = baseline + one contribution per feature, as printed in a county report.

    ``prediction`` is the value the report claims; ``implied_prediction`` is what
    the displayed numbers actually add up to.
    """

    title: str
    baseline: float
    contributions: tuple[tuple[str, float], ...]
    prediction: float
    reference_rate: float | None = None

    @classmethod
    def from_explanation(cls, expl: ShapExplanation, title: str | None = None,
                         labels: dict[str, str] | None = None,
                         reference_rate: float | None = None) -> Decomposition:
        labels = DISPLAY_LABELS if labels is None else labels
        names = expl.feature_names or tuple(f"x{j}" for j in range(len(expl.phi)))
        return cls(
            title=title or expl.obs_id,
            baseline=expl.baseline,
            contributions=tuple((labels.get(n, n), p) for n, p in zip(names, expl.phi)),
            prediction=expl.prediction,
            reference_rate=reference_rate,
        )

    @property
    def implied_prediction(self) -> float:
        return math.fsum([self.baseline, *(c for _, c in self.contributions)])

    @property
    def identity_gap(self) -> float:
        return self.implied_prediction - self.prediction

    def render(self, digits: int = 3) -> str:
        def num(v: float) -> str:
            s = f"{v:.{digits}f}"
            return f"({s})" if s.startswith("-") else s

        lines = [f"{self.title}:", f"  {self.prediction:.{digits}f}  predicted"]
        lines.append(f"= {self.baseline:.{digits}f}  baseline")
        for label, c in self.contributions:
            lines.append(f"+ {num(c):>{digits + 4}}  SHAP_{label}")
        lines.append(f"  identity check: baseline + sum(SHAP) = {self.implied_prediction:.{digits + 3}f} "
                     f"(gap {self.identity_gap:+.2e})")
        if self.reference_rate is not None:
            lines.append(f"  reference rate {self.reference_rate:.{digits}f}; model baseline differs by "
                         f"{self.baseline - self.reference_rate:+.{digits}f}")
        return "\n".join(lines)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def write_explanations(explanations: Iterable[ShapExplanation], path: str | Path) -> int:
    """One JSON record per observation: fips, baseline, prediction, (value, shap) per feature."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in explanations:
            fh.write(_dumps(e.as_dict()) + "\n")
            n += 1
    return n


def read_explanations(path: str | Path) -> list[ShapExplanation]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            feats = d["features"]
            out.append(ShapExplanation(
                obs_id=d["fips"], baseline=d["baseline"], prediction=d["prediction"],
                phi=tuple(f["shap"] for f in feats), feature_names=tuple(f["name"] for f in feats),
                feature_values=tuple(f["value"] for f in feats), n_coalitions=1 << len(feats),
            ))
    return out


def write_scatter(explanations: Sequence[ShapExplanation], out_dir: str | Path) -> list[Path]:
    """One CSV per feature with (fips, value, shap) rows, the data behind the all-county panels."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not explanations:
        return []
    paths = []
    names = explanations[0].feature_names
    for j, name in enumerate(names):
        p = out_dir / f"scatter_{name}.csv"
        with open(p, "w", encoding="utf-8", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["fips", "value", "shap"])
            for e in explanations:
                wr.writerow([e.obs_id, repr(e.feature_values[j]), repr(e.phi[j])])
        paths.append(p)
    return paths
