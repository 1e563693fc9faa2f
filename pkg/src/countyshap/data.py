"""County-level tabular data: schemas, loading, validation, joins and splits.

All share columns are stored as fractions in [0, 1]. Rows that fail
validation are excluded (never imputed) and every exclusion is recorded
as a :class:`Finding` so a load can be audited afterwards.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

PREDICTORS = (
    "perc_food_st",
    "perc_asian",
    "perc_hisp",
    "perc_black",
    "perc_old65",
    "perc_young25",
    "perc_rep",
)
TARGET = "perc_full_vac"
WEIGHT = "pop_adult"
KEY = "fips"

# Short labels used in the per-county bar-chart reports.
DISPLAY_LABELS = {
    "perc_food_st": "Poverty",
    "perc_asian": "Asian",
    "perc_hisp": "Hisp",
    "perc_black": "Black",
    "perc_old65": "Senior",
    "perc_young25": "Young",
    "perc_rep": "Politics",
}

_NA_TOKENS = {"", "na", "n/a", "nan", "null", "none", "."}
ROLES = ("key", "target", "predictor", "weight", "extra")
_NUMERIC_EXTRAS = ("pop_total",)


class DataError(ValueError):
    """Raised when an input file cannot be turned into a dataset."""


class SchemaError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class DuplicateKeyError(DataError):
    pass


class MissingFeatureError(KeyError):
    pass


@dataclass(frozen=True)
class Finding:
    """One machine-readable report entry (exclusion, violation, join drop...)."""

    kind: str
    reason: str
    key: str | None = None
    row: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "key": self.key, "row": self.row, "reason": self.reason}


def write_findings(findings: Iterable[Finding], path: str | Path) -> None:
    """Write findings as JSON lines, one record per finding."""
    with open(path, "w", encoding="utf-8") as fh:
        for f in findings:
            fh.write(json.dumps(f.to_dict(), sort_keys=True) + "\n")


def read_findings(path: str | Path) -> list[Finding]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(Finding(kind=d["kind"], reason=d["reason"], key=d.get("key"), row=d.get("row")))
    return out


@dataclass(frozen=True)
class Schema:
    """Column roles for a dataset.

    Parameters
    ----------
    key, target, weight : str
        Canonical (lower-case) column names.
    predictors : tuple of str
        Predictor columns, in model order.
    extras : tuple of str
        Optional pass-through columns (kept when present).
    aliases : mapping
        Lower-cased header alias -> canonical column name.
    percent_scale : bool
        Target and predictors are given on a 0-100 scale and are divided by 100.
    bounded : bool
        Target and predictors must lie in [0, 1].
    key_pattern : str or None
        Regular expression every key must match; ``None`` disables the check.
    min_weight : float
        Smallest admissible weight. Weights must also be strictly positive.
    residual_group : tuple of str
        Share columns whose sum may not exceed 1.
    """

    key: str = KEY
    target: str = TARGET
    predictors: tuple[str, ...] = PREDICTORS
    weight: str = WEIGHT
    extras: tuple[str, ...] = ("name", "state", "pop_total")
    aliases: Mapping[str, str] = field(default_factory=dict)
    percent_scale: bool = False
    bounded: bool = True
    key_pattern: str | None = r"^[0-9]{5}$"
    min_weight: float = 1.0
    residual_group: tuple[str, ...] = ("perc_asian", "perc_hisp", "perc_black")

    @classmethod
    def generic(cls, predictors: Sequence[str], target: str = "y", weight: str = "w", key: str = "id") -> Schema:
        """Schema for arbitrary numeric data (no share bounds, free-form keys)."""
        return cls(
            key=key,
            target=target,
            predictors=tuple(predictors),
            weight=weight,
            extras=(),
            bounded=False,
            key_pattern=None,
            min_weight=0.0,
            residual_group=(),
        )

    @property
    def model_columns(self) -> tuple[str, ...]:
        return (*self.predictors, self.target, self.weight)

    @property
    def required(self) -> tuple[str, ...]:
        return (self.key, *self.model_columns)

    def canonical(self, header: str) -> str:
        h = header.strip().lower()
        return self.aliases.get(h, h)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in {"1", "true", "yes", "on"}:
        return True
    if t in {"0", "false", "no", "off"}:
        return False
    raise SchemaError(f"not a boolean: {text!r}")


def parse_key_values(text: str) -> list[tuple[str, str]]:
    """Parse ``name = value`` lines, skipping blanks and ``#`` comments."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"line {lineno}: expected 'name = value', got {raw!r}")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def load_schema(path: str | Path) -> Schema:
    """Read a schema file.

    Each line maps a column to its role (``perc_rep = predictor``). Predictor
    order follows file order. Two directive forms are also accepted:
    ``alias.<column> = Header A; Header B`` and ``option.<name> = value`` for
    ``percent_scale``, ``bounded``, ``key_pattern`` and ``min_weight``.
    """
    text = Path(path).read_text(encoding="utf-8")
    roles: dict[str, list[str]] = {r: [] for r in ROLES}
    aliases: dict[str, str] = {}
    options: dict[str, Any] = {}
    for name, value in parse_key_values(text):
        lname = name.lower()
        if lname.startswith("alias."):
            col = lname[len("alias."):]
            for alt in value.split(";"):
                if alt.strip():
                    aliases[alt.strip().lower()] = col
        elif lname.startswith("option."):
            opt = lname[len("option."):]
            if opt in ("percent_scale", "bounded"):
                options[opt] = _parse_bool(value)
            elif opt == "key_pattern":
                options[opt] = value or None
            elif opt == "min_weight":
                options[opt] = float(value)
            else:
                raise SchemaError(f"unknown schema option {opt!r}")
        else:
            role = value.lower()
            if role not in roles:
                raise SchemaError(f"column {name!r}: unknown role {value!r} (expected one of {ROLES})")
            roles[role].append(lname)
    for role in ("key", "target", "weight"):
        if len(roles[role]) != 1:
            raise SchemaError(f"schema needs exactly one {role} column, found {len(roles[role])}")
    if not roles["predictor"]:
        raise SchemaError("schema declares no predictor columns")
    preds = tuple(roles["predictor"])
    default_group = Schema().residual_group
    residual = default_group if set(default_group) <= set(preds) else ()
    return Schema(
        key=roles["key"][0],
        target=roles["target"][0],
        predictors=preds,
        weight=roles["weight"][0],
        extras=tuple(roles["extra"]),
        aliases=aliases,
        residual_group=residual,
        **options,
    )


def dump_schema(schema: Schema) -> str:
    lines = [f"{schema.key} = key", f"{schema.target} = target", f"{schema.weight} = weight"]
    lines += [f"{p} = predictor" for p in schema.predictors]
    lines += [f"{e} = extra" for e in schema.extras]
    by_col: dict[str, list[str]] = {}
    for alt, col in schema.aliases.items():
        by_col.setdefault(col, []).append(alt)
    lines += [f"alias.{col} = {'; '.join(alts)}" for col, alts in sorted(by_col.items())]
    lines += [
        f"option.percent_scale = {str(schema.percent_scale).lower()}",
        f"option.bounded = {str(schema.bounded).lower()}",
        f"option.key_pattern = {schema.key_pattern or ''}",
        f"option.min_weight = {schema.min_weight!r}",
    ]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CountyRecord:
    fips: str
    name: str
    state: str
    perc_full_vac: float
    perc_food_st: float
    perc_asian: float
    perc_hisp: float
    perc_black: float
    perc_old65: float
    perc_young25: float
    perc_rep: float
    pop_adult: float
    pop_total: float

    @classmethod
    def from_mapping(cls, row: Mapping[str, Any]) -> CountyRecord:
        kw = {}
        for f in fields(cls):
            v = row.get(f.name)
            if f.name in ("fips", "name", "state"):
                kw[f.name] = "" if v is None or (isinstance(v, float) and math.isnan(v)) else str(v)
            else:
                kw[f.name] = float("nan") if v is None else float(v)
        return cls(**kw)

    def violations(self) -> list[str]:
        out = []
        if not re.match(r"^[0-9]{5}$", self.fips):
            out.append(f"fips {self.fips!r} is not a 5-digit code")
        for name in (TARGET, *PREDICTORS):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                out.append(f"{name}={v!r} outside [0, 1]")
        if not self.pop_adult >= 1:
            out.append(f"pop_adult={self.pop_adult!r} below 1")
        if not self.pop_total > 0:
            out.append(f"pop_total={self.pop_total!r} not positive")
        share = self.perc_asian + self.perc_hisp + self.perc_black
        if share > 1.0 + 1e-12:
            out.append(f"perc_asian+perc_hisp+perc_black={share!r} exceeds 1")
        return out


def feature_vector(record: Any, names: Sequence[str]) -> np.ndarray:
    """Pull ``names`` out of a mapping, a dataclass/object, or a plain sequence."""
    if isinstance(record, np.ndarray) or (isinstance(record, Sequence) and not isinstance(record, str)):
        arr = np.asarray(record, dtype=float)
        if arr.shape != (len(names),):
            raise MissingFeatureError(f"expected {len(names)} feature values, got shape {arr.shape}")
        return arr
    out = np.empty(len(names))
    for i, n in enumerate(names):
        if isinstance(record, Mapping):
            if n not in record:
                raise MissingFeatureError(n)
            out[i] = float(record[n])
        else:
            if not hasattr(record, n):
                raise MissingFeatureError(n)
            out[i] = float(getattr(record, n))
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated table of observations with per-row weights.

    ``frame`` holds one row per observation: the key column as strings and
    model columns as float64. Construct through :func:`load_csv` or
    :func:`from_frame` to get validation; the bare constructor trusts its input.
    """

    frame: pd.DataFrame
    schema: Schema = field(default_factory=Schema)
    provenance: tuple[str, ...] = ()
    report: tuple[Finding, ...] = ()

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def predictors(self) -> tuple[str, ...]:
        return self.schema.predictors

    @property
    def keys(self) -> np.ndarray:
        return self.frame[self.schema.key].to_numpy(dtype=object)

    @property
    def X(self) -> np.ndarray:
        return np.ascontiguousarray(self.frame[list(self.schema.predictors)].to_numpy(dtype=np.float64))

    @property
    def y(self) -> np.ndarray:
        return self.frame[self.schema.target].to_numpy(dtype=np.float64)

    @property
    def w(self) -> np.ndarray:
        return self.frame[self.schema.weight].to_numpy(dtype=np.float64)

    def take(self, positions: Sequence[int]) -> Dataset:
        sub = self.frame.iloc[np.asarray(positions, dtype=np.int64)].reset_index(drop=True)
        return replace(self, frame=sub, report=())

    def locate(self, key: str) -> int:
        hits = np.flatnonzero(self.keys == key)
        if len(hits) == 0:
            raise KeyError(key)
        return int(hits[0])

    def records(self) -> list[CountyRecord]:
        return [CountyRecord.from_mapping(r) for r in self.frame.to_dict(orient="records")]

    def weighted_target_mean(self) -> float:
        w = self.w
        return float(np.dot(w, self.y) / w.sum())

    def to_csv(self, path: str | Path) -> None:
        """Write the canonical form: fractions, canonical headers, full float precision."""
        self.frame.to_csv(path, index=False, lineterminator="\n")


def normalize_key(value: Any, pattern: str | None) -> str:
    s = "" if value is None else str(value).strip()
    if re.fullmatch(r"\d+\.0+", s):
        s = s.split(".", 1)[0]
    if pattern == r"^[0-9]{5}$" and s.isdigit() and len(s) < 5:
        s = s.zfill(5)
    return s


def read_raw(path: str | Path, schema: Schema | None = None) -> pd.DataFrame:
    """Read a CSV as strings with canonical lower-case headers.

    A ``_line`` column holds the 1-based file line of each data row.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise EmptyDatasetError(f"{path}: file is empty") from exc
    canon = schema.canonical if schema is not None else (lambda h: h.strip().lower())
    df.columns = [canon(c) for c in df.columns]
    if len(set(df.columns)) != len(df.columns):
        raise SchemaError(f"{path}: duplicate columns after alias resolution: {list(df.columns)}")
    df["_line"] = np.arange(2, len(df) + 2)
    return df


def _check_required(df: pd.DataFrame, schema: Schema, origin: str) -> None:
    missing = [c for c in schema.required if c not in df.columns]
    if missing:
        raise SchemaError(f"{origin}: missing required column(s) {missing}")


def _to_numeric(df: pd.DataFrame, cols: Sequence[str], origin: str) -> pd.DataFrame:
    out = df.copy()
    lines = out["_line"] if "_line" in out.columns else pd.Series(np.arange(2, len(out) + 2), index=out.index)
    for c in cols:
        col = out[c]
        if pd.api.types.is_numeric_dtype(col):
            out[c] = col.astype(np.float64)
            continue
        parsed = np.empty(len(col))
        # float() round-trips repr output exactly; pandas' fast string parser does not
        for pos, (i, v) in enumerate(col.items()):
            text = "" if v is None else str(v).strip()
            if text.lower() in _NA_TOKENS:
                parsed[pos] = np.nan
                continue
            try:
                parsed[pos] = float(text)
            except ValueError:
                raise DataError(f"{origin}: line {int(lines[i])}: column {c!r}: cannot parse {text!r} as a number") from None
        out[c] = parsed
    return out


def _violations(df: pd.DataFrame, schema: Schema) -> list[tuple[int, str]]:
    """(position, reason) for every invariant violation, in row order."""
    found: list[tuple[int, str]] = []
    keys = df[schema.key].astype(str).to_numpy()
    model = list(schema.model_columns)
    vals = df[model].to_numpy(dtype=np.float64).tolist()
    shares = list(schema.predictors) + [schema.target]
    share_idx = [model.index(c) for c in shares]
    w_idx = model.index(schema.weight)
    group_idx = [model.index(c) for c in schema.residual_group if c in model]
    pattern = re.compile(schema.key_pattern) if schema.key_pattern else None
    seen: dict[str, int] = {}
    for pos in range(len(df)):
        row = vals[pos]
        key = keys[pos]
        if pattern is not None and not pattern.match(key):
            found.append((pos, f"key {key!r} does not match {schema.key_pattern}"))
        missing = [model[j] for j in range(len(model)) if math.isnan(row[j])]
        if missing:
            found.append((pos, f"missing value in {missing}"))
        infinite = [model[j] for j in range(len(model)) if math.isinf(row[j])]
        if infinite:
            found.append((pos, f"non-finite value in {infinite}"))
        if schema.bounded:
            for j in share_idx:
                if not math.isnan(row[j]) and not 0.0 <= row[j] <= 1.0:
                    found.append((pos, f"{model[j]}={row[j]!r} outside [0, 1]"))
        wv = row[w_idx]
        if not math.isnan(wv) and (wv <= 0 or wv < schema.min_weight or not math.isfinite(wv)):
            found.append((pos, f"{schema.weight}={wv!r} below minimum weight {schema.min_weight!r}"))
        if group_idx:
            s = float(sum(row[j] for j in group_idx))
            if s > 1.0 + 1e-12:
                found.append((pos, f"sum of {list(schema.residual_group)}={s!r} exceeds 1 (residual share violation)"))
        if key in seen:
            found.append((pos, f"duplicate key {key!r} (first at row {seen[key] + 1})"))
        else:
            seen[key] = pos
    return found


def from_frame(df: pd.DataFrame, schema: Schema = Schema(), origin: str = "<frame>",
               provenance: Sequence[str] = ()) -> Dataset:
    """Validate a raw frame and return a Dataset of the rows that pass.

    Excluded rows are listed in ``Dataset.report``; cells that are present but
    not numbers raise :class:`DataError` with the offending line.
    """
    df = df.copy()
    df.columns = [schema.canonical(c) if c != "_line" else c for c in df.columns]
    _check_required(df, schema, origin)
    if len(df) == 0:
        raise EmptyDatasetError(f"{origin}: no data rows")
    df[schema.key] = [normalize_key(v, schema.key_pattern) for v in df[schema.key]]
    extras_num = [e for e in _NUMERIC_EXTRAS if e in schema.extras and e in df.columns]
    df = _to_numeric(df, list(schema.model_columns) + extras_num, origin)
    if schema.percent_scale:
        for c in (*schema.predictors, schema.target):
            df[c] = df[c] / 100.0
    lines = df["_line"].to_numpy() if "_line" in df.columns else np.arange(2, len(df) + 2)
    reasons: dict[int, list[str]] = {}
    for pos, reason in _violations(df, schema):
        reasons.setdefault(pos, []).append(reason)
    report = [Finding("excluded", "; ".join(rs), key=str(df[schema.key].iloc[pos]), row=int(lines[pos]))
              for pos, rs in reasons.items()]
    keep = [i for i in range(len(df)) if i not in reasons]
    cols = [schema.key, *schema.predictors, schema.target, schema.weight]
    cols += [e for e in schema.extras if e in df.columns and e not in cols]
    out = df.iloc[keep][cols].reset_index(drop=True)
    if len(out) == 0:
        raise EmptyDatasetError(f"{origin}: all {len(df)} rows were excluded")
    return Dataset(out, schema, tuple(provenance), tuple(report))


def load_csv(path: str | Path, schema: Schema = Schema()) -> Dataset:
    """Load and validate a county CSV against ``schema``."""
    raw = read_raw(path, schema)
    _check_required(raw, schema, str(path))
    if len(raw) == 0:
        raise EmptyDatasetError(f"{path}: no data rows")
    return from_frame(raw, schema, origin=str(path), provenance=(str(path),))


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings

    def __len__(self) -> int:
        return len(self.findings)

    def __iter__(self):
        return iter(self.findings)


def validate(ds: Dataset) -> ValidationReport:
    """List every invariant violation in ``ds`` without modifying it."""
    frame = ds.frame
    missing = [c for c in ds.schema.required if c not in frame.columns]
    if missing:
        return ValidationReport(tuple(Finding("violation", f"missing column {c!r}") for c in missing))
    keys = frame[ds.schema.key].astype(str).to_numpy()
    return ValidationReport(tuple(
        Finding("violation", reason, key=keys[pos], row=pos + 1)
        for pos, reason in _violations(frame, ds.schema)
    ))


class PrecinctShares(dict):
    """Mapping fips -> Republican two-party share; ``omitted`` lists counties with no two-party votes."""

    def __init__(self, shares: Mapping[str, float], omitted: Sequence[str] = ()):
        super().__init__(shares)
        self.omitted = list(omitted)

    @property
    def findings(self) -> list[Finding]:
        return [Finding("omitted", "county has zero Democratic plus Republican votes", key=k) for k in self.omitted]


def aggregate_precincts(rows: pd.DataFrame | Iterable[Mapping[str, Any]]) -> PrecinctShares:
    """Sum precinct votes per county and return the Republican two-party share.

    Third-party votes never enter: the share is ``sum(rep) / (sum(rep) + sum(dem))``.
    """
    df = rows.copy() if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    df.columns = [str(c).strip().lower() for c in df.columns]
    for c in ("fips", "dem_votes", "rep_votes"):
        if c not in df.columns:
            raise SchemaError(f"precinct table missing column {c!r}")
    if len(df) == 0:
        return PrecinctShares({})
    df = _to_numeric(df, ["dem_votes", "rep_votes"], "precincts")
    if df[["dem_votes", "rep_votes"]].isna().any().any():
        raise DataError("precinct table has missing vote counts")
    if (df[["dem_votes", "rep_votes"]] < 0).any().any():
        raise DataError("precinct vote counts must be non-negative")
    df["fips"] = [normalize_key(v, Schema().key_pattern) for v in df["fips"]]
    sums = df.groupby("fips", sort=True)[["dem_votes", "rep_votes"]].sum()
    shares = {}
    omitted = []
    for fips, dem, rep in zip(sums.index, sums["dem_votes"], sums["rep_votes"]):
        total = dem + rep
        if total > 0:
            shares[fips] = float(rep / total)
        else:
            omitted.append(fips)
    return PrecinctShares(shares, omitted)


def load_precincts(path: str | Path) -> PrecinctShares:
    """Aggregate a flattened precinct CSV (columns fips, dem_votes, rep_votes)."""
    return aggregate_precincts(read_raw(path).drop(columns="_line"))


def join_frames(left: pd.DataFrame, right: pd.DataFrame, key: str = KEY) -> tuple[pd.DataFrame, list[Finding]]:
    """Inner join on ``key`` preserving left order; unmatched keys become findings."""
    for side, df in (("left", left), ("right", right)):
        if key not in df.columns:
            raise SchemaError(f"{side} table has no {key!r} column")
        dup = df[key][df[key].duplicated()]
        if len(dup):
            raise DuplicateKeyError(f"{side} table has duplicate {key} values: {sorted(set(dup))[:10]}")
    overlap = (set(left.columns) & set(right.columns)) - {key, "_line"}
    if overlap:
        raise SchemaError(f"join would overwrite columns {sorted(overlap)}")
    rcols = [c for c in right.columns if c != "_line"]
    merged = left.merge(right[rcols], on=key, how="inner", sort=False)
    lkeys, rkeys = set(left[key]), set(right[key])
    findings = [Finding("left_only", "no match in right table", key=k) for k in sorted(lkeys - rkeys)]
    findings += [Finding("right_only", "no match in left table", key=k) for k in sorted(rkeys - lkeys)]
    return merged.reset_index(drop=True), findings


def keyed_table(table: Dataset | pd.DataFrame | Mapping[str, Any], key: str = KEY,
                pattern: str | None = Schema().key_pattern, column: str | None = None) -> pd.DataFrame:
    """Coerce a Dataset, DataFrame or ``{key: value-or-dict}`` mapping into a keyed DataFrame."""
    if isinstance(table, Dataset):
        return table.frame.copy()
    if isinstance(table, pd.DataFrame):
        df = table.copy()
        df.columns = [str(c).strip().lower() if c != "_line" else c for c in df.columns]
    else:
        rows = []
        for k, v in table.items():
            if isinstance(v, Mapping):
                rows.append({key: k, **v})
            else:
                rows.append({key: k, column or "value": v})
        df = pd.DataFrame(rows, columns=None if rows else [key])
    if key in df.columns:
        df[key] = [normalize_key(v, pattern) for v in df[key]]
    return df


def join_by_fips(left: Dataset, right: Dataset | pd.DataFrame | Mapping[str, Any]) -> Dataset:
    """Inner-join extra columns onto ``left`` by key; drops are reported in ``.report``."""
    key = left.schema.key
    rdf = keyed_table(right, key, left.schema.key_pattern)
    if isinstance(right, Dataset):
        rdf = rdf[[key] + [c for c in rdf.columns if c not in left.frame.columns]]
    merged, findings = join_frames(left.frame, rdf, key)
    prov = left.provenance + (right.provenance if isinstance(right, Dataset) else ())
    return Dataset(merged, left.schema, prov, tuple(findings))


@dataclass(frozen=True)
class SplitSpec:
    """Random train/test partition settings.

    The test partition gets ``round(N * test_fraction)`` rows (half rounds up).
    """

    test_fraction: float = 392 / 2630
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0, 1), got {self.test_fraction!r}")

    def test_size(self, n: int) -> int:
        return int(math.floor(n * self.test_fraction + 0.5))


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise EmptyDatasetError("cannot split an empty dataset")
    n_test = spec.test_size(n)
    if n_test < 1 or n_test >= n:
        raise ValueError(f"test_fraction {spec.test_fraction!r} leaves an empty partition for N={n}")
    perm = np.random.default_rng(np.random.SeedSequence(spec.seed)).permutation(n)
    n_train = n - n_test
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def train_test_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Seeded shuffle; the first ``N - n_test`` shuffled rows train, the rest test.

    Both partitions keep the original row order.
    """
    train_idx, test_idx = split_indices(len(ds), spec)
    return ds.take(train_idx), ds.take(test_idx)

