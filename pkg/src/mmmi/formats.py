"""
File formats: dataset CSV with a JSON schema sidecar, JSON plan and
simulation configs, estimate tables and pooled reports.

Dataset CSVs have a header row, one row per subject and an empty string for a
missing cell.  Numbers are written with ``repr`` (shortest round-trip), and
observed cells read from a file are written back with their original text.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import Column, ConfigError, DataError, LongitudinalDataset, validate_dataset
from .engine import NestedImputationPlan
from .imputer import ImputerConfig
from .mechanism import MechanismSpec, MultiplierDistribution
from .pooling import PooledInference
from .simgen import TrialGenParams


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _validation_message(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "(root)"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_model(model: type[BaseModel], data, source: str):
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_validation_message(exc)}") from None


def load_json(path, what: str):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from None


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=True) + "\n"


# ---------------------------------------------------------------------------
# schema and dataset CSV


class ColumnModel(_Strict):
    name: str = Field(min_length=1)
    role: Literal["id", "group", "outcome", "covariate"]
    type: Literal["continuous", "binary", "nominal"] = "continuous"
    time: float | None = None


class SchemaModel(_Strict):
    columns: list[ColumnModel] = Field(min_length=1)

    def to_columns(self) -> tuple[Column, ...]:
        try:
            return tuple(Column(c.name, c.role, c.type, c.time) for c in self.columns)
        except ConfigError as exc:
            raise ConfigError(f"schema: {exc}") from None


def schema_from_columns(columns) -> dict:
    out = []
    for c in columns:
        entry = {"name": c.name, "role": c.role, "type": c.kind}
        if c.time is not None:
            entry["time"] = c.time
        out.append(entry)
    return {"columns": out}


def _parse_cell(token: str, row: int, name: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"row {row}, column {name!r}: cannot parse {token!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {name!r}: non-finite value {token!r}")
    return value


def read_dataset_csv(path, schema: SchemaModel):
    """Read a wide dataset CSV.  Returns ``(dataset, raw_tokens)``.

    Every CSV column must appear in the schema and vice versa; the file's
    column order is kept.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"input file not found: {path}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    by_name = {c.name: c for c in schema.to_columns()}
    missing_in_schema = [h for h in header if h not in by_name]
    if missing_in_schema:
        raise ConfigError("columns not described by the schema: " + ", ".join(missing_in_schema))
    missing_in_file = [n for n in by_name if n not in header]
    if missing_in_file:
        raise DataError("schema columns absent from the file: " + ", ".join(missing_in_file))
    columns = tuple(by_name[h] for h in header)

    values = np.zeros((len(body), len(header)))
    mask = np.zeros((len(body), len(header)), dtype=bool)
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"row {i}: expected {len(header)} fields, found {len(r)}")
        for j, tok in enumerate(r):
            tok = tok.strip()
            if tok == "":
                mask[i - 2, j] = True
            else:
                values[i - 2, j] = _parse_cell(tok, i, header[j])
    d = LongitudinalDataset(columns, values, mask)
    problems = validate_dataset(d)
    if problems:
        raise DataError(f"{path}: " + "; ".join(problems))
    return d, [[t.strip() for t in r] for r in body]


def format_number(x: float) -> str:
    """Shortest text that reads back to exactly ``x``; integers without '.0'."""
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def dataset_csv_text(d: LongitudinalDataset, raw=None) -> str:
    """Render ``d``; cells observed in ``raw`` keep their original text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(d.names)
    for i in range(d.n_subjects):
        row = []
        for j in range(len(d.columns)):
            if d.mask[i, j]:
                row.append("")
            elif raw is not None and raw[i][j] != "":
                row.append(raw[i][j])
            else:
                row.append(format_number(d.values[i, j]))
        w.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# plan config


class NormalModel(_Strict):
    family: Literal["normal"]
    mean: float
    sd: float = Field(ge=0)


class UniformModel(_Strict):
    family: Literal["uniform"]
    lower: float
    upper: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.lower > self.upper:
            raise ValueError("lower must not exceed upper")
        return self


class PointModel(_Strict):
    family: Literal["point"]
    value: float


MultiplierModel = Annotated[Union[NormalModel, UniformModel, PointModel], Field(discriminator="family")]


def to_distribution(m) -> MultiplierDistribution:
    if isinstance(m, NormalModel):
        return MultiplierDistribution.normal(m.mean, m.sd)
    if isinstance(m, UniformModel):
        return MultiplierDistribution.uniform(m.lower, m.upper)
    return MultiplierDistribution.point(m.value)


class ImputerModel(_Strict):
    column_order: list[str] | None = None
    group_by: str | None = None
    predictors: list[str] = []
    sweeps: int = Field(10, ge=1)
    ridge_epsilon: float = Field(1e-8, ge=0)
    method: Literal["auto", "monotone", "chained"] = "auto"


class PlanModel(_Strict):
    m_models: int = Field(100, ge=2)
    n_per_model: int = Field(2, ge=1)
    multiplier: MultiplierModel
    round_to_observed: bool = False
    clamp_range: tuple[float, float] | None = None
    transform_columns: list[str] | None = None
    imputer: ImputerModel = ImputerModel()

    def build(self, d: LongitudinalDataset, seed: int) -> NestedImputationPlan:
        """Plan for dataset ``d``: unset imputer columns default to the
        outcomes (by time) and unset ``group_by`` to the group column."""
        imp = self.imputer
        order = imp.column_order or [c.name for c in d.outcome_columns]
        group_by = imp.group_by
        if group_by is None and d.group_column is not None:
            group_by = d.group_column.name
        cfg = ImputerConfig(tuple(order), group_by, tuple(imp.predictors), imp.sweeps, imp.ridge_epsilon, imp.method)
        for name in list(order) + list(imp.predictors) + ([group_by] if group_by else []):
            d.index(name)
        mech = MechanismSpec(to_distribution(self.multiplier), self.round_to_observed, self.clamp_range)
        return NestedImputationPlan(
            mech, cfg, self.m_models, self.n_per_model,
            tuple(self.transform_columns) if self.transform_columns is not None else None, seed,
        )


# ---------------------------------------------------------------------------
# simulation config


class TrialModel(_Strict):
    beta: tuple[float, float, float, float, float] = (25.0, -3.0, 0.0, -1.0, 1.5)
    re_cov: tuple[tuple[float, float], tuple[float, float]] = ((4.0, -0.1), (-0.1, 1.0))
    resid_var_nondrop: float = 9.0
    resid_var_drop: float = 16.0
    n_per_arm: int = 150
    n_dropouts_per_arm: int = 100
    timepoints: int = 5
    drop_hazard: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)

    def build(self) -> TrialGenParams:
        return TrialGenParams(**self.model_dump())


class CustomScenarioModel(_Strict):
    name: str = Field(min_length=1)
    multiplier: MultiplierModel


class SimulationModel(_Strict):
    grid: Literal["table1"] | None = None
    scenarios: list[str] | None = None
    custom_scenarios: list[CustomScenarioModel] = []
    replications: int = Field(200, ge=1)
    m_models: int = Field(100, ge=2)
    n_per_model: int = Field(2, ge=1)
    level: float = Field(0.95, gt=0, lt=1)
    trial: TrialModel = TrialModel()


# ---------------------------------------------------------------------------
# estimates and reports


def read_estimates_csv(path):
    """Rows of ``model, rep, q_hat, u``.  Returns a list of (model, rep, q, u)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"estimates file not found: {path}") from None
    reader = csv.DictReader(io.StringIO(text))
    need = ["model", "rep", "q_hat", "u"]
    if reader.fieldnames is None or any(c not in reader.fieldnames for c in need):
        raise DataError(f"{path}: header must contain columns {', '.join(need)}")
    out = []
    for i, row in enumerate(reader, start=2):
        try:
            model, rep = row["model"].strip(), row["rep"].strip()
            q, u = float(row["q_hat"]), float(row["u"])
        except (ValueError, AttributeError):
            raise DataError(f"{path}, row {i}: unparseable estimate") from None
        if not (math.isfinite(q) and math.isfinite(u)):
            raise DataError(f"{path}, row {i}: non-finite estimate")
        out.append((model, rep, q, u))
    if not out:
        raise DataError(f"{path}: no estimates")
    return out


def estimates_csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "rep", "q_hat", "u"])
    for model, rep, q, u in rows:
        w.writerow([model, rep, repr(float(q)), repr(float(u))])
    return buf.getvalue()


REPORT_COLUMNS = ("estimate", "se", "lci", "uci", "p_value", "gamma", "gamma_w", "gamma_b", "gamma_ratio",
                  "df", "q_bar", "u_bar", "w", "b", "t", "m", "n", "level")
REPORT_LABELS = ("Est.", "SE", "LCI", "UCI", "p-val.", "gamma", "gamma_w", "gamma_b", "gamma_b/gamma")


def report_row(p: PooledInference) -> dict:
    return {
        "estimate": p.q_bar, "se": p.se, "lci": p.ci[0], "uci": p.ci[1], "p_value": p.p_value,
        "gamma": p.gamma, "gamma_w": p.gamma_w, "gamma_b": p.gamma_b, "gamma_ratio": p.gamma_ratio,
        "df": p.df, "q_bar": p.q_bar, "u_bar": p.u_bar, "w": p.w, "b": p.b, "t": p.t,
        "m": p.m, "n": p.n, "level": p.level,
    }


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def report_csv_text(p: PooledInference, label: str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    row = report_row(p)
    head = (["label"] if label is not None else []) + list(REPORT_COLUMNS)
    w.writerow(head)
    w.writerow(([label] if label is not None else []) + [_cell(row[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def format_table(headers, rows) -> str:
    """Plain aligned text table; floats with 4 decimals."""
    def fmt(v):
        if isinstance(v, float):
            return "inf" if math.isinf(v) else ("nan" if math.isnan(v) else f"{v:.4f}")
        return str(v)

    cells = [[fmt(v) for v in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def report_table(p: PooledInference) -> str:
    row = report_row(p)
    values = [row[c] for c in REPORT_COLUMNS[:9]]
    return format_table(list(REPORT_LABELS), [values])
