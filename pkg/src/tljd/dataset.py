"""City-year indicator tables: file I/O, min-max scaling, split protocols and
a synthetic generator with a known regional mixture-of-experts structure."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LoadError, ProtocolError

TYPES = ("PJ", "DJ", "JE", "JC")


@dataclass(frozen=True)
class SampleRow:
    city_id: str
    year: int
    indicators: np.ndarray
    fdi: float


@dataclass(frozen=True, eq=False)
class IndicatorTable:
    """Immutable city x year table; column order follows ``schema``."""

    city_ids: tuple
    years: np.ndarray
    X: np.ndarray
    y: np.ndarray
    schema: tuple

    def __post_init__(self):
        object.__setattr__(self, "city_ids", tuple(str(c) for c in self.city_ids))
        object.__setattr__(self, "schema", tuple((str(n), str(t)) for n, t in self.schema))
        years = np.asarray(self.years, dtype=np.int64)
        X = np.array(self.X, dtype=np.float64, ndmin=2)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        n, k = len(self.city_ids), len(self.schema)
        if X.shape != (n, k) or years.shape != (n,) or y.shape != (n,):
            raise ValueError(
                f"table arrays disagree: {n} ids, years {years.shape}, X {X.shape}, y {y.shape}, K={k}"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("table contains non-finite values")
        names = [s[0] for s in self.schema]
        if len(set(names)) != k:
            raise ValueError("duplicate indicator names in schema")
        for name, kind in self.schema:
            if kind not in TYPES:
                raise ValueError(f"indicator {name!r} has unknown type {kind!r}")
        empty = [t for t in TYPES if t not in {s[1] for s in self.schema}]
        if empty:
            raise ValueError(f"indicator types without columns: {empty}")
        keys = set(zip(self.city_ids, years.tolist()))
        if len(keys) != n:
            raise ValueError("duplicate (city_id, year) rows")
        for arr in (years, X, y):
            arr.setflags(write=False)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.city_ids)

    @property
    def K(self):
        return len(self.schema)

    @property
    def indicator_names(self):
        return [s[0] for s in self.schema]

    @property
    def rows(self):
        return [SampleRow(c, int(yr), self.X[i], float(self.y[i]))
                for i, (c, yr) in enumerate(zip(self.city_ids, self.years))]

    def type_partition(self):
        """Column indices of each type, in canonical order."""
        return {t: [j for j, s in enumerate(self.schema) if s[1] == t] for t in TYPES}

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.intp)
        return IndicatorTable(
            [self.city_ids[i] for i in idx], self.years[idx], self.X[idx], self.y[idx], self.schema
        )


# ------------------------------------------------------------------ file I/O


def load_schema(schema_path):
    schema = []
    with open(schema_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["indicator", "type"]:
            raise LoadError(f"{schema_path}: header must be 'indicator,type', got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 2:
                raise LoadError(f"{schema_path}:{lineno}: expected 2 fields, got {len(rec)}")
            name, kind = rec[0].strip(), rec[1].strip()
            if kind not in TYPES:
                raise LoadError(
                    f"{schema_path}:{lineno}: indicator {name!r} has unknown type {kind!r} "
                    f"(expected one of {', '.join(TYPES)})"
                )
            schema.append((name, kind))
    names = [n for n, _ in schema]
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        raise LoadError(f"{schema_path}: duplicate indicators {dup}")
    return schema


def load_table(data_path, schema_path):
    """Read a data CSV and its schema CSV into an :class:`IndicatorTable`."""
    schema = load_schema(schema_path)
    with open(data_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise LoadError(f"{data_path}: empty file")
        header = [h.strip() for h in header]
        for required in ("city_id", "year", "fdi"):
            if required not in header:
                raise LoadError(f"{data_path}: missing column {required!r}")
        position = {h: i for i, h in enumerate(header)}
        missing = [n for n, _ in schema if n not in position]
        if missing:
            raise LoadError(f"{data_path}: missing indicator column(s) {missing}")
        extra = [h for h in header if h not in {"city_id", "year", "fdi"} and h not in dict(schema)]
        if extra:
            raise LoadError(f"{data_path}: column(s) {extra} not listed in schema {schema_path}")
        order = [position[n] for n, _ in schema]
        cities, years, X, y, seen = [], [], [], [], {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise LoadError(f"{data_path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            city = rec[position["city_id"]].strip()
            try:
                year = int(rec[position["year"]])
            except ValueError:
                raise LoadError(f"{data_path}:{lineno}: column 'year': not an integer {rec[position['year']]!r}")
            if (city, year) in seen:
                raise LoadError(
                    f"{data_path}:{lineno}: duplicate (city_id, year) = ({city}, {year}), "
                    f"first seen on line {seen[(city, year)]}"
                )
            seen[(city, year)] = lineno
            values = []
            for col in order + [position["fdi"]]:
                cell = rec[col]
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise LoadError(f"{data_path}:{lineno}: column {header[col]!r}: non-numeric value {cell!r}")
                values.append(v)
            cities.append(city)
            years.append(year)
            X.append(values[:-1])
            y.append(values[-1])
    X = np.array(X, dtype=np.float64).reshape(len(cities), len(schema))
    try:
        return IndicatorTable(cities, years, X, y, schema)
    except ValueError as exc:
        raise LoadError(f"{data_path}: {exc}") from exc


def write_schema(schema, schema_path):
    with open(schema_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["indicator", "type"])
        w.writerows(schema)


def write_table(table, data_path, schema_path=None):
    """Inverse of :func:`load_table`; floats are written in round-trip form."""
    with open(data_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["city_id", "year", *table.indicator_names, "fdi"])
        for i in range(len(table)):
            w.writerow([table.city_ids[i], int(table.years[i]),
                        *(repr(float(v)) for v in table.X[i]), repr(float(table.y[i]))])
    if schema_path is not None:
        write_schema(table.schema, schema_path)


# ------------------------------------------------------------------ scaling


@dataclass(frozen=True, eq=False)
class ColumnScaler:
    mins: np.ndarray
    maxs: np.ndarray

    def apply(self, X):
        """Min-max scale with training statistics, clamped to [0, 1].

        Constant training columns map to 0.
        """
        X = np.asarray(X, dtype=np.float64)
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        scaled = np.where(span > 0, (X - self.mins) / safe, 0.0)
        return np.clip(scaled, 0.0, 1.0)


def fit_scaler(table_or_X, train_indices):
    X = table_or_X.X if isinstance(table_or_X, IndicatorTable) else np.asarray(table_or_X, dtype=np.float64)
    idx = np.asarray(train_indices, dtype=np.intp)
    if idx.size == 0:
        raise ValueError("fit_scaler: empty training set")
    rows = X[idx]
    return ColumnScaler(rows.min(axis=0), rows.max(axis=0))


def apply_scaler(scaler, rows):
    return scaler.apply(rows)


# ------------------------------------------------------------------ splits


@dataclass(frozen=True)
class SplitProtocol:
    kind: str
    year: int | None = None

    KINDS = ("ccp_single_year", "ccp_mixed_year", "ctp")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ProtocolError(f"unknown protocol {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "ccp_single_year" and self.year is None:
            raise ProtocolError("ccp_single_year needs a year")

    @classmethod
    def parse(cls, spec):
        """Accept ``'ctp'``, ``'ccp_mixed_year'`` or ``'ccp_single_year:2018'``."""
        if isinstance(spec, cls):
            return spec
        if isinstance(spec, dict):
            return cls(spec["kind"], spec.get("year"))
        kind, _, year = str(spec).partition(":")
        return cls(kind, int(year) if year else None)

    def __str__(self):
        return f"{self.kind}:{self.year}" if self.kind == "ccp_single_year" else self.kind


@dataclass(frozen=True)
class SplitPlan:
    protocol: SplitProtocol
    seed: int
    train: tuple
    val: tuple
    test: tuple


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def make_split(table, protocol, seed):
    """Deterministic train/val/test assignment of row indices.

    CCP protocols shuffle the eligible rows and cut them 3:1:1.  CTP sends
    every final-year row to test and cuts the shuffled earlier rows 3:1.
    """
    protocol = SplitProtocol.parse(protocol)
    rng = np.random.default_rng(seed)
    years = np.asarray(table.years)
    if protocol.kind == "ctp":
        distinct = np.unique(years)
        if distinct.size < 2:
            raise ProtocolError(f"ctp needs at least 2 distinct years, table has {distinct.tolist()}")
        last = distinct[-1]
        test = np.flatnonzero(years == last)
        pool = rng.permutation(np.flatnonzero(years != last))
        n_train = _round_half_up(0.75 * pool.size)
        train, val = pool[:n_train], pool[n_train:]
    else:
        if protocol.kind == "ccp_single_year":
            eligible = np.flatnonzero(years == protocol.year)
            if eligible.size == 0:
                raise ProtocolError(f"no rows for year {protocol.year}")
        else:
            eligible = np.arange(len(years))
        pool = rng.permutation(eligible)
        n = pool.size
        n_train, n_val = _round_half_up(0.6 * n), _round_half_up(0.2 * n)
        train, val, test = pool[:n_train], pool[n_train:n_train + n_val], pool[n_train + n_val:]
    if min(len(train), len(val), len(test)) == 0:
        raise ProtocolError(
            f"{protocol}: too few rows for a split (train {len(train)}, val {len(val)}, test {len(test)})"
        )
    as_tuple = lambda a: tuple(int(i) for i in a)  # noqa: E731
    return SplitPlan(protocol, int(seed), as_tuple(train), as_tuple(val), as_tuple(test))


# ------------------------------------------------------------------ synthetic data


@dataclass(frozen=True)
class SynthConfig:
    cities: int = 200
    years: tuple = (2016, 2017, 2018, 2019)
    k: tuple = (10, 10, 10, 10)
    sigma: float = 0.1
    seed: int = 0
    n_regions: int = 4
    interactions: bool = True
    region_marker: bool = True
    dominant_weight: float = 0.55
    linear_scale: float = 2.0
    intercept_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        if len(self.k) != 4 or min(self.k) < 1:
            raise ConfigError(f"every indicator type needs at least one column, got k={self.k}")
        if self.cities < 1 or not self.years:
            raise ConfigError("need at least one city and one year")
        if not 1 <= self.n_regions <= 4:
            raise ConfigError(f"n_regions must be in 1..4, got {self.n_regions}")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if not 0.25 <= self.dominant_weight <= 1.0:
            raise ConfigError("dominant_weight must lie in [0.25, 1]")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})

    def to_dict(self):
        return {f: (list(v) if isinstance(v, tuple) else v) for f, v in self.__dict__.items()}


@dataclass
class SynthMetadata:
    """Ground truth behind a synthetic table.

    ``omega[r][t]`` is the weight region ``r`` gives type ``t``.  Each type's
    signal is ``intercept + linear . x[columns] + pair_weight * x[a] * x[b]``
    with ``(a, b) = pair`` (absolute column indices, ``pair`` None when off).
    """

    seed: int
    sigma: float
    omega: list
    regions: dict
    coefficients: dict
    marker_column: int | None = None
    format_version: int = 1
    config: dict = field(default_factory=dict)


def type_signal(X, coef):
    X = np.asarray(X, dtype=np.float64)
    out = coef["intercept"] + X[:, coef["columns"]] @ np.asarray(coef["linear"])
    if coef.get("pair") is not None:
        a, b = coef["pair"]
        out = out + coef["pair_weight"] * X[:, a] * X[:, b]
    return out


def _schema_for(k):
    return [(f"{t.lower()}_{i + 1:03d}", t) for t, n in zip(TYPES, k) for i in range(n)]


def generate_synthetic(config):
    """Build ``(table, metadata)`` with region-dependent expert weighting.

    Every city draws a region ``r``; indicators are Uniform[0, 1] and the
    target is ``sum_t omega[r][t] * f_t(x) + N(0, sigma^2)``, where the
    dominant type of region ``r`` gets ``dominant_weight`` and the rest share
    the remainder.  PJ and DJ signals include one pairwise product.  With
    ``region_marker`` the first JC column is replaced by a categorical region
    code ``(r + 0.5) / n_regions``, which makes the region observable.
    """
    if not isinstance(config, SynthConfig):
        config = SynthConfig.from_dict(config)
    rng = np.random.default_rng(config.seed)
    schema = _schema_for(config.k)
    K = len(schema)
    offsets = np.cumsum((0,) + config.k)

    rest = (1.0 - config.dominant_weight) / 3.0
    omega = [[config.dominant_weight if t == r else rest for t in range(4)] for r in range(4)]

    coefficients = {}
    for ti, t in enumerate(TYPES):
        columns = list(range(offsets[ti], offsets[ti + 1]))
        linear = rng.uniform(-1.0, 1.0, size=len(columns)) * config.linear_scale
        intercept = float(rng.uniform(-1.0, 1.0) * config.intercept_scale)
        coef = {"columns": columns, "linear": [float(v) for v in linear], "intercept": intercept,
                "pair": None, "pair_weight": 0.0}
        if config.interactions and t in ("PJ", "DJ"):
            a, b = (rng.choice(columns, size=2, replace=False) if len(columns) > 1 else (columns[0],) * 2)
            coef["pair"] = [int(a), int(b)]
            coef["pair_weight"] = float(rng.choice([-1.0, 1.0]) * rng.uniform(2.0, 4.0))
        coefficients[t] = coef

    city_ids = [f"C{c:04d}" for c in range(config.cities)]
    region_of = rng.integers(0, config.n_regions, size=config.cities)
    marker = offsets[3] if config.region_marker else None

    ids, years, blocks, regions_row = [], [], [], []
    for year in config.years:
        X = rng.uniform(0.0, 1.0, size=(config.cities, K))
        if marker is not None:
            X[:, marker] = (region_of + 0.5) / config.n_regions
        ids.extend(city_ids)
        years.extend([year] * config.cities)
        blocks.append(X)
        regions_row.append(region_of)
    X = np.vstack(blocks)
    regions_row = np.concatenate(regions_row)
    noise = rng.normal(0.0, config.sigma, size=len(ids)) if config.sigma > 0 else np.zeros(len(ids))

    signals = np.column_stack([type_signal(X, coefficients[t]) for t in TYPES])
    weights = np.asarray(omega)[regions_row]
    y = (weights * signals).sum(axis=1) + noise

    meta = SynthMetadata(
        seed=config.seed,
        sigma=config.sigma,
        omega=omega,
        regions={c: int(r) for c, r in zip(city_ids, region_of)},
        coefficients=coefficients,
        marker_column=None if marker is None else int(marker),
        config=config.to_dict(),
    )
    return IndicatorTable(ids, years, X, y, schema), meta


def write_metadata(meta, path):
    """Key-value text file, one ``key=value`` per line, values JSON-encoded."""
    lines = [
        f"format_version={meta.format_version}",
        f"seed={json.dumps(meta.seed)}",
        f"sigma={json.dumps(meta.sigma)}",
        f"types={json.dumps(list(TYPES))}",
        f"omega={json.dumps(meta.omega)}",
        f"marker_column={json.dumps(meta.marker_column)}",
        f"config={json.dumps(meta.config, sort_keys=True)}",
    ]
    for t in TYPES:
        for key in ("columns", "intercept", "linear", "pair", "pair_weight"):
            lines.append(f"coef.{t}.{key}={json.dumps(meta.coefficients[t][key])}")
    for city, r in meta.regions.items():
        lines.append(f"region.{city}={r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metadata(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, _, raw = line.partition("=")
                values[key] = json.loads(raw)
    coefficients = {t: {} for t in TYPES}
    regions = {}
    for key, v in values.items():
        if key.startswith("coef."):
            _, t, field_name = key.split(".", 2)
            coefficients[t][field_name] = v
        elif key.startswith("region."):
            regions[key[len("region."):]] = int(v)
    return SynthMetadata(
        seed=values["seed"], sigma=values["sigma"], omega=values["omega"], regions=regions,
        coefficients=coefficients, marker_column=values.get("marker_column"),
        format_version=values["format_version"], config=values.get("config", {}),
    )
