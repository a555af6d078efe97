"""Cohort data model: CSV ingestion, calibrated synthesis, folds, scaling, encoding.

A cohort is an ordered list of patient records, each carrying eight numeric
blood/clinical variables, three demographic attributes and a binary diagnosis
label. Two encoding protocols are supported: demographic-unaware (7 clinical
columns; age is demographic, not clinical) and demographic-aware (those 7 plus
gender, race one-hot and age = 13 columns).
"""

from __future__ import annotations

import csv
import datetime
import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import (
    DimensionMismatch,
    EmptyCohort,
    InfeasibleSpec,
    InvariantViolation,
    MissingColumn,
    TooFewSamples,
    UnexpectedColumn,
    UnparsableValue,
)

GENDERS = ("F", "M")
RACES = ("White", "Black", "Asian", "Other")
LABELS = ("NonITP", "ITP")  # index == numeric class, ITP is the positive class

NUMERIC_FIELDS = (
    "diagnosis_year",
    "age_last_seen",
    "alt",
    "dx_hb_ct",
    "dx_neutro_ct",
    "wbc_ct",
    "rbc_ct",
    "dx_plt_ct",
)
CSV_HEADER = NUMERIC_FIELDS + ("gender", "race", "label")

# Column layout of the two protocols. Age and the demographics are sensitive
# attributes; only the aware protocol feeds them to the models.
CLINICAL_COLUMNS = (
    "diagnosis_year",
    "alt",
    "dx_hb_ct",
    "dx_neutro_ct",
    "wbc_ct",
    "rbc_ct",
    "dx_plt_ct",
)
RACE_COLUMNS = tuple(f"race_{r.lower()}" for r in RACES)
AWARE_COLUMNS = CLINICAL_COLUMNS + ("gender",) + RACE_COLUMNS + ("age_last_seen",)

UNAWARE = "unaware"
AWARE = "aware"
PROTOCOLS = (AWARE, UNAWARE)

MIN_YEAR = 1900
MAX_YEAR = datetime.date.today().year

DEFAULT_AGE_EDGES = (45.0, 65.0)


@dataclass(frozen=True)
class PatientRecord:
    diagnosis_year: int
    age_last_seen: float
    alt: float
    dx_hb_ct: float
    dx_neutro_ct: float
    wbc_ct: float
    rbc_ct: float
    dx_plt_ct: float
    gender: str
    race: str
    label: str

    def __post_init__(self):
        for name in NUMERIC_FIELDS:
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvariantViolation(f"{name} must be finite and non-negative, got {v}")
        if not (MIN_YEAR <= self.diagnosis_year <= MAX_YEAR):
            raise InvariantViolation(f"diagnosis_year {self.diagnosis_year} outside [{MIN_YEAR}, {MAX_YEAR}]")
        if self.age_last_seen <= 0:
            raise InvariantViolation("age_last_seen must be positive")
        if self.gender not in GENDERS:
            raise InvariantViolation(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if self.race not in RACES:
            raise InvariantViolation(f"race must be one of {RACES}, got {self.race!r}")
        if self.label not in LABELS:
            raise InvariantViolation(f"label must be one of {LABELS}, got {self.label!r}")

    @property
    def y(self) -> int:
        return 1 if self.label == "ITP" else 0


@dataclass(frozen=True)
class Cohort:
    records: tuple[PatientRecord, ...]
    source: str
    n_itp: int = field(init=False)
    n_non_itp: int = field(init=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "n_itp", sum(r.y for r in records))
        object.__setattr__(self, "n_non_itp", len(records) - self.n_itp)

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([r.y for r in self.records], dtype=np.int64)


def _require_two_per_class(cohort: Cohort) -> Cohort:
    if len(cohort) == 0:
        raise EmptyCohort("cohort has no records")
    if cohort.n_itp < 2 or cohort.n_non_itp < 2:
        raise InvariantViolation(
            f"need at least 2 records per class, got ITP={cohort.n_itp}, NonITP={cohort.n_non_itp}"
        )
    return cohort


def subset_cohort(cohort: Cohort, indices) -> Cohort:
    """Row subset preserving order; fold subsets may hold < 2 of a class."""
    recs = tuple(cohort.records[int(i)] for i in indices)
    return Cohort(records=recs, source=cohort.source)


# ---------------------------------------------------------------------------
# CSV ingestion / emission
# ---------------------------------------------------------------------------

_GENDER_ALIASES = {"M": "M", "F": "F", "Male": "M", "Female": "F"}


def load_cohort_csv(path: str | Path) -> Cohort:
    """Read a cohort CSV (see CSV_HEADER) into validated records, order preserved."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = set(CSV_HEADER) - set(header)
        if missing:
            raise MissingColumn(missing)
        extra = set(header) - set(CSV_HEADER)
        if extra:
            raise UnexpectedColumn(extra)

        records = []
        for i, row in enumerate(reader, start=1):
            records.append(_parse_row(i, row))
    if not records:
        raise EmptyCohort(f"{path} has a header but no data rows")
    return _require_two_per_class(Cohort(records=tuple(records), source=f"csv:{path}"))


def _parse_row(row_no: int, row: dict) -> PatientRecord:
    values = {}
    for name in NUMERIC_FIELDS:
        raw = row.get(name)
        if raw is None:
            raise UnparsableValue(row_no, name, "")
        try:
            v = float(raw)
        except ValueError:
            raise UnparsableValue(row_no, name, raw) from None
        if name == "diagnosis_year":
            if not float(v).is_integer():
                raise UnparsableValue(row_no, name, raw)
            v = int(v)
        values[name] = v

    gender = _GENDER_ALIASES.get((row.get("gender") or "").strip())
    if gender is None:
        raise UnparsableValue(row_no, "gender", row.get("gender") or "")
    race = (row.get("race") or "").strip()
    if race not in RACES:
        raise UnparsableValue(row_no, "race", row.get("race") or "")
    label = (row.get("label") or "").strip()
    if label not in LABELS:
        raise UnparsableValue(row_no, "label", row.get("label") or "")

    try:
        return PatientRecord(gender=gender, race=race, label=label, **values)
    except InvariantViolation as exc:
        raise InvariantViolation(exc.reason, row=row_no) from None


def write_cohort_csv(cohort: Cohort, path: str | Path) -> Path:
    """Write records in canonical column order; floats round-trip exactly via repr."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in cohort.records:
            writer.writerow(
                [str(r.diagnosis_year)]
                + [repr(float(getattr(r, n))) for n in NUMERIC_FIELDS[1:]]
                + [r.gender, r.race, r.label]
            )
    return path


# ---------------------------------------------------------------------------
# Synthetic cohort generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatBlock:
    """Per-variable summary statistics; median/mean may be unpublished (None)."""

    lo: float
    hi: float
    median: float | None = None
    mean: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo > self.hi:
            raise InvariantViolation(f"invalid stat range [{self.lo}, {self.hi}]")
        for name in ("median", "mean"):
            v = getattr(self, name)
            if v is not None and not (self.lo <= v <= self.hi):
                raise InvariantViolation(f"{name} {v} outside [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class ClassSpec:
    size: int
    gender: dict[str, float]
    race: dict[str, float]
    variables: dict[str, StatBlock]

    def __post_init__(self):
        if self.size < 2:
            raise InvariantViolation(f"class size must be >= 2, got {self.size}")
        _check_proportions("gender", self.gender, GENDERS)
        _check_proportions("race", self.race, RACES)
        missing = set(NUMERIC_FIELDS) - set(self.variables)
        if missing:
            raise InvariantViolation(f"spec missing variable block(s): {sorted(missing)}")
        extra = set(self.variables) - set(NUMERIC_FIELDS)
        if extra:
            raise InvariantViolation(f"spec has unknown variable block(s): {sorted(extra)}")


def _check_proportions(what: str, probs: dict[str, float], allowed: tuple[str, ...]) -> None:
    unknown = set(probs) - set(allowed)
    if unknown:
        raise InvariantViolation(f"{what} proportions name unknown categories: {sorted(unknown)}")
    total = sum(probs.get(k, 0.0) for k in allowed)
    if abs(total - 1.0) > 1e-9:
        raise InvariantViolation(f"{what} proportions must sum to 1, got {total}")
    if any(p < 0 for p in probs.values()):
        raise InvariantViolation(f"{what} proportions must be non-negative")


@dataclass(frozen=True)
class CohortSpec:
    itp: ClassSpec
    non_itp: ClassSpec

    @property
    def n_itp(self) -> int:
        return self.itp.size

    @property
    def n_non_itp(self) -> int:
        return self.non_itp.size


# Tolerance contract of the generator: sample mean and median of each variable
# land within this fraction of (hi - lo) of the spec's targets.
MOMENT_TOLERANCE = 0.10
_RETRY_FRACTION = 0.9  # redraw while sample stats exceed this fraction of tolerance
_MAX_REDRAWS = 64


def _band_score(A, B, MU, CC, mu, t, n, z):
    """Worst sample-moment error predicted at z-sigma: order-statistic band
    around the distribution median, plus mean offset and CLT mean noise."""
    delta = min(z * 0.5 / np.sqrt(n), 0.49)
    q_lo = stats.beta.ppf(0.5 - delta, A, B)
    q_hi = stats.beta.ppf(0.5 + delta, A, B)
    med_err = np.maximum(np.abs(q_lo - t), np.abs(q_hi - t))
    mean_err = np.abs(MU - mu) + z * np.sqrt(MU * (1.0 - MU) / (CC + 1.0)) / np.sqrt(n)
    return np.maximum(med_err, mean_err)


@functools.lru_cache(maxsize=512)
def _match_beta_shapes(lo: float, hi: float, median: float | None, mean: float | None, n: int):
    """Pick Beta(a, b) on [lo, hi] whose samples honor the moment tolerance.

    The search runs over a small grid of mean offsets (the tolerance budget may
    be spent on the mean to reach an otherwise unreachable median) times a
    log-spaced concentration grid. Shapes are ranked by the 3-sigma band score;
    near-optimal candidates prefer an exact mean, then the widest spread.
    Feasibility is judged at 1 sigma: a spec whose *typical* draw cannot land
    within tolerance is rejected (the bounded resample in _sample_variable
    absorbs unlucky draws for feasible specs).
    """
    span = hi - lo
    if span == 0:
        return None  # constant variable
    if mean is None and median is None:
        return (1.0, 1.0)  # nothing to match: uniform
    if mean is None:
        mean = median
    if median is None:
        median = mean
    if not (lo < mean < hi):
        raise InfeasibleSpec(f"mean {mean} must lie strictly inside ({lo}, {hi})")

    mu = (mean - lo) / span
    t = (median - lo) / span
    mu_grid = np.clip(mu + np.linspace(-0.8, 0.8, 17) * MOMENT_TOLERANCE, 0.005, 0.995)
    cs = np.logspace(np.log10(0.5), np.log10(128.0), 64)
    MU, CC = np.meshgrid(mu_grid, cs, indexing="ij")
    A = CC * MU
    B = CC * (1.0 - MU)

    feasible = _band_score(A, B, MU, CC, mu, t, n, z=1.0)
    if float(feasible.min()) > 0.95 * MOMENT_TOLERANCE:
        raise InfeasibleSpec(
            f"cannot place sample median near {median} and mean near {mean} "
            f"on [{lo}, {hi}] with {n} samples"
        )
    score = _band_score(A, B, MU, CC, mu, t, n, z=3.0)
    smin = float(score.min())
    candidates = sorted(
        map(tuple, np.argwhere(score <= smin + 0.004)),
        key=lambda ij: (abs(mu_grid[ij[0]] - mu), ij[1]),
    )
    i, j = candidates[0]
    return (float(A[i, j]), float(B[i, j]))


def _sample_variable(block: StatBlock, n: int, rng: np.random.Generator) -> np.ndarray:
    shapes = _match_beta_shapes(float(block.lo), float(block.hi), block.median, block.mean, n)
    if shapes is None:
        return np.full(n, float(block.lo))
    a, b = shapes
    span = block.hi - block.lo
    tol = MOMENT_TOLERANCE * span

    for _ in range(_MAX_REDRAWS):
        x = block.lo + span * rng.beta(a, b, n)
        ok = True
        if block.mean is not None:
            ok &= abs(float(x.mean()) - block.mean) <= _RETRY_FRACTION * tol
        if block.median is not None:
            ok &= abs(float(np.median(x)) - block.median) <= _RETRY_FRACTION * tol
        if ok:
            return x
    raise InfeasibleSpec(
        f"could not realize sample moments for range [{block.lo}, {block.hi}] "
        f"(median={block.median}, mean={block.mean}, n={n})"
    )


def _allocate_categories(probs: dict[str, float], order: tuple[str, ...], n: int,
                         rng: np.random.Generator) -> list[str]:
    # Largest-remainder allocation keeps category counts exact, then a seeded
    # shuffle assigns them to records.
    quotas = [probs.get(k, 0.0) * n for k in order]
    counts = [int(np.floor(q)) for q in quotas]
    short = n - sum(counts)
    by_remainder = sorted(range(len(order)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in by_remainder[:short]:
        counts[i] += 1
    values = [k for k, c in zip(order, counts) for _ in range(c)]
    return [values[i] for i in rng.permutation(n)]


def synthesize_cohort(spec: CohortSpec, seed: int) -> Cohort:
    """Generate a cohort calibrated to the spec's per-class summary statistics.

    Deterministic given (spec, seed): variables are drawn class by class (ITP
    first) in canonical field order, then gender and race are allocated.
    """
    rng = np.random.default_rng(int(seed) % (2**64))
    records: list[PatientRecord] = []
    for label, cls in (("ITP", spec.itp), ("NonITP", spec.non_itp)):
        columns = {}
        for name in NUMERIC_FIELDS:
            x = _sample_variable(cls.variables[name], cls.size, rng)
            if name == "diagnosis_year":
                x = np.rint(x)
            columns[name] = x
        genders = _allocate_categories(cls.gender, GENDERS, cls.size, rng)
        races = _allocate_categories(cls.race, RACES, cls.size, rng)
        for i in range(cls.size):
            records.append(
                PatientRecord(
                    diagnosis_year=int(columns["diagnosis_year"][i]),
                    age_last_seen=float(columns["age_last_seen"][i]),
                    alt=float(columns["alt"][i]),
                    dx_hb_ct=float(columns["dx_hb_ct"][i]),
                    dx_neutro_ct=float(columns["dx_neutro_ct"][i]),
                    wbc_ct=float(columns["wbc_ct"][i]),
                    rbc_ct=float(columns["rbc_ct"][i]),
                    dx_plt_ct=float(columns["dx_plt_ct"][i]),
                    gender=genders[i],
                    race=races[i],
                    label=label,
                )
            )
    return _require_two_per_class(Cohort(records=tuple(records), source=f"synthetic:seed={int(seed)}"))


# ---------------------------------------------------------------------------
# Stratified folds
# ---------------------------------------------------------------------------


def stratified_kfold(cohort: Cohort, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Class-stratified k-fold split; test folds partition the index range.

    Per fold and class, the test count differs from n_class/k by less than 1.
    Deterministic given (cohort, k, seed); classes are processed ITP first.
    """
    if k < 2:
        raise TooFewSamples(f"k must be >= 2, got {k}")
    labels = cohort.labels()
    rng = np.random.default_rng(int(seed) % (2**64))
    test_parts: list[list[np.ndarray]] = [[] for _ in range(k)]
    for cls in (1, 0):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k:
            raise TooFewSamples(
                f"class {LABELS[cls]} has {len(idx)} records, needs at least k={k}"
            )
        perm = rng.permutation(idx)
        for fold_i, part in enumerate(np.array_split(perm, k)):
            test_parts[fold_i].append(part)

    all_idx = np.arange(len(labels))
    folds = []
    for parts in test_parts:
        test = np.sort(np.concatenate(parts))
        train = np.setdiff1d(all_idx, test, assume_unique=True)
        folds.append((train, test))
    return folds


# ---------------------------------------------------------------------------
# Min-max scaling and protocol encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scaler:
    """Per-column [min, max] learned on a fitting split."""

    mins: np.ndarray
    maxs: np.ndarray

    @property
    def n_columns(self) -> int:
        return self.mins.shape[0]


def fit_minmax(matrix: np.ndarray) -> Scaler:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {m.shape}")
    return Scaler(mins=m.min(axis=0), maxs=m.max(axis=0))


def apply_minmax(scaler: Scaler, matrix: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Map v -> (v - min) / (max - min); constant columns map to 0."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[1] != scaler.n_columns:
        raise DimensionMismatch(
            f"matrix has {m.shape[1] if m.ndim == 2 else '?'} columns, scaler expects {scaler.n_columns}"
        )
    span = scaler.maxs - scaler.mins
    safe = np.where(span > 0, span, 1.0)
    out = (m - scaler.mins) / safe
    out[:, span == 0] = 0.0
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out


@dataclass(frozen=True)
class SensitiveAttrs:
    """Raw demographic attributes kept beside the design matrix, never scaled."""

    gender: np.ndarray  # str array, F/M
    race: np.ndarray  # str array
    age: np.ndarray  # float years

    def __len__(self) -> int:
        return len(self.age)


@dataclass(frozen=True)
class FeatureMatrix:
    rows: np.ndarray
    column_names: tuple[str, ...]
    protocol: str
    labels: np.ndarray
    sensitive: SensitiveAttrs
    scaler: Scaler | None = None

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]


def encode_features(
    cohort: Cohort,
    protocol: str,
    scaler: Scaler | None = None,
    scale: bool = True,
    clamp: bool = True,
) -> FeatureMatrix:
    """Build the design matrix for a protocol.

    With ``scaler`` given, applies it (raising DimensionMismatch for a scaler
    fit under the other protocol); otherwise fits min-max here when ``scale``
    is on, or returns raw values when it is off.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    if len(cohort) == 0:
        raise EmptyCohort("cannot encode an empty cohort")

    recs = cohort.records
    clinical = np.array([[float(getattr(r, n)) for n in CLINICAL_COLUMNS] for r in recs])
    if protocol == UNAWARE:
        raw = clinical
        names = CLINICAL_COLUMNS
    else:
        gender = np.array([[1.0 if r.gender == "M" else 0.0] for r in recs])
        race = np.array([[1.0 if r.race == race_name else 0.0 for race_name in RACES] for r in recs])
        age = np.array([[float(r.age_last_seen)] for r in recs])
        raw = np.hstack([clinical, gender, race, age])
        names = AWARE_COLUMNS

    if scaler is not None:
        if scaler.n_columns != raw.shape[1]:
            raise DimensionMismatch(
                f"scaler expects {scaler.n_columns} columns but {protocol} encoding has {raw.shape[1]}"
            )
        rows = apply_minmax(scaler, raw, clamp=clamp)
    elif scale:
        scaler = fit_minmax(raw)
        rows = apply_minmax(scaler, raw, clamp=clamp)
    else:
        rows = raw

    sensitive = SensitiveAttrs(
        gender=np.array([r.gender for r in recs]),
        race=np.array([r.race for r in recs]),
        age=np.array([float(r.age_last_seen) for r in recs]),
    )
    return FeatureMatrix(
        rows=rows,
        column_names=names,
        protocol=protocol,
        labels=cohort.labels(),
        sensitive=sensitive,
        scaler=scaler,
    )


def bin_age(age: float, edges: tuple[float, ...] = DEFAULT_AGE_EDGES) -> int:
    """Half-open bin index: below the first edge -> 0, at/above the last -> len(edges)."""
    edges = tuple(edges)
    if any(a >= b for a, b in zip(edges, edges[1:])):
        raise InvariantViolation(f"age edges must be strictly increasing, got {edges}")
    return int(np.searchsorted(edges, age, side="right"))


def age_bin_labels(edges: tuple[float, ...] = DEFAULT_AGE_EDGES) -> tuple[str, ...]:
    edges = tuple(edges)
    labels = [f"<{edges[0]:g}"]
    labels += [f"{a:g}-<{b:g}" for a, b in zip(edges, edges[1:])]
    labels.append(f">={edges[-1]:g}")
    return tuple(labels)
