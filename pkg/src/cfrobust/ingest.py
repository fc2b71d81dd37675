"""
Load real-world CSV files into :class:`~cfrobust.core.Dataset`.

Categorical columns become *full* one-hot polytope groups (row-sum exactly 1); continuous
columns are median-imputed and z-scored with statistics of the training rows, keeping the
center/scale so counterfactuals can be reported in raw units::

    cfg = ingest_preset("adult_income", "data/adult.csv")
    data = load_dataset(cfg, test_fraction=0.3, split_seed=0)
    train, test = train_test_split(data, 0.3, seed=0)
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from cfrobust.core import ColumnSpec, Dataset, FeatureSchema, PolytopeGroup
from cfrobust.errors import DegenerateColumnError, IngestError, ParameterError, StratificationError
from cfrobust.tags import ColumnKind

logger = logging.getLogger(__name__)

MISSING = "__missing"
OTHER = "__other"


@dataclass(frozen=True)
class IngestConfig:
    path: str
    target_column: str
    positive_label: str
    categorical_columns: tuple[str, ...] = ()
    min_category_frequency: int = 0
    subsample_fraction: float = 1.0
    seed: int = 0
    standardize: bool = True
    drop_columns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "categorical_columns", tuple(self.categorical_columns))
        object.__setattr__(self, "drop_columns", tuple(self.drop_columns))
        object.__setattr__(self, "positive_label", str(self.positive_label))
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ParameterError(
                f"subsample_fraction must be in (0, 1], got {self.subsample_fraction}"
            )
        if self.min_category_frequency < 0:
            raise ParameterError(
                f"min_category_frequency must be nonnegative, got {self.min_category_frequency}"
            )


_GERMAN_CATEGORICAL = (
    "checking_status", "credit_history", "purpose", "savings_status", "employment",
    "personal_status", "other_parties", "property_magnitude", "other_payment_plans", "housing",
    "job", "own_telephone", "foreign_worker",
)
_ADULT_CATEGORICAL = (
    "workclass", "education", "marital-status", "occupation", "relationship", "race", "sex",
    "native-country",
)

# Keyword arguments of IngestConfig minus the path, per shipped dataset.
INGEST_PRESETS: dict[str, dict[str, Any]] = {
    "german_credit": dict(
        target_column="class",
        positive_label="good",
        categorical_columns=_GERMAN_CATEGORICAL,
    ),
    "adult_income": dict(
        target_column="income",
        positive_label=">50K",
        categorical_columns=_ADULT_CATEGORICAL,
        min_category_frequency=300,
        subsample_fraction=0.2,
    ),
    "give_me_some_credit": dict(
        target_column="SeriousDlqin2yrs",
        positive_label="0",
        drop_columns=("Unnamed: 0",),
        subsample_fraction=0.1,
    ),
}


def ingest_preset(name: str, path: str | Path, **overrides: Any) -> IngestConfig:
    try:
        base = INGEST_PRESETS[name]
    except KeyError:
        raise ParameterError(
            f"unknown dataset preset {name!r}; expected one of {sorted(INGEST_PRESETS)}"
        ) from None
    return IngestConfig(path=str(path), **{**base, **overrides})


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawTable:
    """A CSV file with numeric columns parsed and every other column kept as strings."""
    frame: pd.DataFrame
    numeric_columns: tuple[str, ...]
    categorical_columns: tuple[str, ...]
    target_column: str
    path: str = field(default="")

    @property
    def n_rows(self) -> int:
        return int(len(self.frame))

    @property
    def feature_columns(self) -> tuple[str, ...]:
        return tuple(c for c in self.frame.columns if c != self.target_column)


def load_csv(cfg: IngestConfig) -> RawTable:
    path = Path(cfg.path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    frame = pd.read_csv(
        path, dtype=str, skipinitialspace=True, na_values=["?"], keep_default_na=True
    )
    frame.columns = [str(c).strip() for c in frame.columns]
    frame = frame.drop(columns=[c for c in cfg.drop_columns if c in frame.columns])
    if cfg.target_column not in frame.columns:
        raise IngestError(f"{path}: target column {cfg.target_column!r} not found")
    missing = [c for c in cfg.categorical_columns if c not in frame.columns]
    if missing:
        raise IngestError(f"{path}: categorical columns {missing} not found")

    for c in frame.columns:
        frame[c] = frame[c].str.strip()

    numeric: list[str] = []
    for c in frame.columns:
        if c == cfg.target_column or c in cfg.categorical_columns:
            continue
        parsed = pd.to_numeric(frame[c], errors="coerce")
        bad = parsed.isna() & frame[c].notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise IngestError(
                f"{path}: row {row}, column {c!r}: cannot parse {frame[c].iloc[row]!r} as a number"
            )
        frame[c] = parsed.astype(float)
        numeric.append(c)

    logger.info("loaded %d rows x %d columns from %s", len(frame), frame.shape[1], path)
    return RawTable(
        frame=frame,
        numeric_columns=tuple(numeric),
        categorical_columns=tuple(cfg.categorical_columns),
        target_column=cfg.target_column,
        path=str(path),
    )


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def _labels(target: pd.Series, positive: str) -> np.ndarray:
    as_number = pd.to_numeric(target, errors="coerce")
    if not as_number.isna().any():
        try:
            return (as_number.to_numpy(dtype=float) == float(positive)).astype(np.int64)
        except ValueError:
            pass
    return (target.astype(str).to_numpy() == positive).astype(np.int64)


def merge_rare_categories(values: pd.Series, min_frequency: int) -> pd.Series:
    """Replace categories seen fewer than *min_frequency* times by ``"__other"``."""
    if min_frequency <= 0:
        return values
    counts = values.value_counts()
    rare = set(counts.index[counts < min_frequency])
    if not rare:
        return values
    return values.where(~values.isin(rare), OTHER)


def _ordered_categories(values: pd.Series) -> list[str]:
    counts = values.value_counts()
    return sorted(counts.index, key=lambda c: (-int(counts[c]), str(c)))


def subsample_rows(n: int, fraction: float, seed: int) -> np.ndarray:
    """Sorted positions of a seeded ``floor(fraction * n)`` subsample."""
    if fraction >= 1.0:
        return np.arange(n)
    m = math.floor(round(fraction * n, 9))
    if m < 1:
        raise ParameterError(f"subsample_fraction {fraction} keeps no rows out of {n}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=m, replace=False))


def _select_rows(
    raw: RawTable, cfg: IngestConfig
) -> tuple[pd.DataFrame, np.ndarray, np.ndarray]:
    frame = raw.frame
    keep = frame[raw.target_column].notna().to_numpy()
    if not keep.all():
        logger.info("dropping %d rows with a missing target", int((~keep).sum()))
    frame = frame.loc[keep]
    ids = frame.index.to_numpy(dtype=np.int64)

    rows = subsample_rows(len(frame), cfg.subsample_fraction, cfg.seed)
    frame = frame.iloc[rows]
    ids = ids[rows]
    y = _labels(frame[raw.target_column], cfg.positive_label)
    return frame, ids, y


def preprocess(
    raw: RawTable, cfg: IngestConfig, fit_rows: np.ndarray | None = None
) -> Dataset:
    """Encode *raw* into a dataset.

    The median used for imputation and the center/scale of each continuous column are
    estimated on the rows at positions *fit_rows* (all rows when None) and applied to every
    row.  Positions count rows after the missing-target drop and the subsample.
    """
    frame, ids, y = _select_rows(raw, cfg)
    fit = np.arange(len(frame)) if fit_rows is None else np.asarray(fit_rows, dtype=np.int64)
    if not len(fit):
        raise ParameterError("fit_rows selects no rows")

    columns: list[ColumnSpec] = []
    groups: list[PolytopeGroup] = []
    blocks: list[np.ndarray] = []
    for name in raw.feature_columns:
        if name in raw.categorical_columns:
            values = frame[name].fillna(MISSING).astype(str)
            values = merge_rare_categories(values, cfg.min_category_frequency)
            cats = _ordered_categories(values)
            if len(cats) < 2:
                raise DegenerateColumnError(
                    f"categorical column {name!r} collapses to the single category {cats[0]!r}"
                )
            start = len(columns)
            for c in cats:
                columns.append(
                    ColumnSpec(f"{name}={c}", ColumnKind.INDICATOR, group_id=name, category=c)
                )
            groups.append(
                PolytopeGroup(
                    name, tuple(range(start, start + len(cats))), False, tuple(cats), source=name
                )
            )
            blocks.append((values.to_numpy()[:, None] == np.array(cats)[None, :]).astype(float))
        else:
            v = frame[name].to_numpy(dtype=float)
            present = ~np.isnan(v)
            known = v[fit][present[fit]]
            if not known.size:
                raise DegenerateColumnError(f"numeric column {name!r} has no values")
            v = np.where(present, v, np.median(known))
            center, scale = 0.0, 1.0
            if cfg.standardize:
                center = float(v[fit].mean())
                scale = float(v[fit].std())
                if scale == 0.0:
                    logger.warning("numeric column %r is constant; left unscaled", name)
                    scale = 1.0
                v = (v - center) / scale
            lo, hi = float(v.min()), float(v.max())
            columns.append(
                ColumnSpec(name, bounds=(lo, hi) if lo < hi else None, center=center, scale=scale)
            )
            blocks.append(v[:, None])

    x = np.hstack(blocks) if blocks else np.zeros((len(frame), 0))
    data = Dataset(x, y, ids, FeatureSchema(tuple(columns), tuple(groups)))
    logger.info(
        "preprocessed %s: %d rows, %d encoded columns, %d groups, positive fraction %.3f",
        raw.path or "table", data.n, data.d, len(groups), float(y.mean()) if len(y) else 0.0,
    )
    return data


def load_dataset(
    cfg: IngestConfig, *, test_fraction: float | None = None, split_seed: int = 0
) -> Dataset:
    """Load and encode *cfg*.

    With *test_fraction*, imputation and scaling are fitted on the training rows of
    ``train_test_split(data, test_fraction, split_seed)``; calling that split on the result
    gives back the same partition.
    """
    raw = load_csv(cfg)
    if test_fraction is None:
        return preprocess(raw, cfg)
    _, _, y = _select_rows(raw, cfg)
    train, _ = split_positions(y, test_fraction, split_seed)
    return preprocess(raw, cfg, fit_rows=train)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def _allocate(total: int, sizes: list[int]) -> list[int]:
    # largest remainder, ties to the earlier class
    n = sum(sizes)
    quotas = [total * s / n for s in sizes]
    alloc = [math.floor(q) for q in quotas]
    order = sorted(range(len(sizes)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[: total - sum(alloc)]:
        alloc[i] += 1
    return alloc


def split_positions(
    y: np.ndarray, test_fraction: float, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Sorted train and test positions of a stratified split of the labels *y*."""
    y = np.asarray(y)
    n = len(y)
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    classes = [c for c in (0, 1) if np.any(y == c)]
    sizes = [int(np.sum(y == c)) for c in classes]
    for c, s in zip(classes, sizes):
        if s < 2:
            raise StratificationError(f"class {c} has {s} row(s); stratification needs 2")
    n_test = int(math.floor(test_fraction * n + 0.5))
    alloc = _allocate(n_test, sizes)
    if any(a == 0 or a == s for a, s in zip(alloc, sizes)):
        raise StratificationError(
            f"{n} rows are too few for a stratified {test_fraction:.0%} test split"
        )

    rng = np.random.default_rng(seed)
    test_rows: list[np.ndarray] = []
    for c, a in zip(classes, alloc):
        pos = rng.permutation(np.flatnonzero(y == c))
        test_rows.append(pos[:a])
    test = np.sort(np.concatenate(test_rows))
    train = np.setdiff1d(np.arange(n), test)
    return train, test


def train_test_split(d: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split with ``round(test_fraction * n)`` test rows."""
    train, test = split_positions(d.y, test_fraction, seed)
    return d.take(train), d.take(test)
