"""
Domain types shared by every stage of a robustness experiment.

A :class:`Dataset` is an encoded feature matrix plus binary labels and stable instance ids.
Its :class:`FeatureSchema` says which columns are continuous and which columns form a
one-hot *polytope* group encoding one categorical feature::

    schema = FeatureSchema(
        columns=(
            ColumnSpec("age"),
            ColumnSpec("color=green", ColumnKind.INDICATOR, group_id="color", category="green"),
            ColumnSpec("color=blue", ColumnKind.INDICATOR, group_id="color", category="blue"),
        ),
        groups=(
            PolytopeGroup("color", (1, 2), drop_one=True, categories=("red", "green", "blue")),
        ),
    )
    schema.encode_category("color", "red")   # array([0., 0.])  (the dropped baseline)

A drop-one group with ``k`` columns encodes ``k + 1`` categories and its row-sum is 0 or 1;
a full group with ``k`` columns encodes ``k`` categories and its row-sum is exactly 1.

All types are frozen and their arrays are read-only, so they can be shared across workers.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from cfrobust.errors import ParameterError
from cfrobust.tags import ColumnKind, NoiseKind

logger = logging.getLogger(__name__)

LABEL_COLUMN = "__label"
ID_COLUMN = "__id"

_TOL = 1e-9


def _frozen(a: Any, dtype: Any) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnSpec:
    """One encoded column.

    ``center``/``scale`` map a standardized continuous value back to raw units
    (``raw = center + scale * value``); they are identity for synthetic data.
    """
    name: str
    kind: str = ColumnKind.CONTINUOUS
    bounds: tuple[float, float] | None = None
    group_id: str | None = None
    category: str | None = None
    center: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ColumnKind:
            raise ParameterError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == ColumnKind.INDICATOR and self.group_id is None:
            raise ParameterError(f"indicator column {self.name!r} needs a group_id")
        if self.kind == ColumnKind.CONTINUOUS and self.group_id is not None:
            raise ParameterError(f"continuous column {self.name!r} cannot belong to a group")
        if self.bounds is not None:
            lo, hi = (float(b) for b in self.bounds)
            if not lo < hi:
                raise ParameterError(
                    f"column {self.name!r}: bounds must satisfy lo < hi, got {self.bounds}"
                )
            object.__setattr__(self, "bounds", (lo, hi))
        if not self.scale > 0:
            raise ParameterError(f"column {self.name!r}: scale must be positive")

    @property
    def is_continuous(self) -> bool:
        return self.kind == ColumnKind.CONTINUOUS

    def decode(self, value: float) -> float:
        return self.center + self.scale * float(value)


@dataclass(frozen=True)
class PolytopeGroup:
    """Mutually exclusive indicator columns encoding one categorical feature.

    For a drop-one group ``categories[0]`` is the implicit baseline (all members zero)
    and ``categories[i + 1]`` is encoded by ``members[i]``.
    """
    group_id: str
    members: tuple[int, ...]
    drop_one: bool
    categories: tuple[str, ...]
    source: str | None = None
    bin_edges: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.bin_edges is not None:
            object.__setattr__(self, "bin_edges", tuple(float(e) for e in self.bin_edges))
        if not self.members:
            raise ParameterError(f"group {self.group_id!r} has no member columns")
        expected = len(self.members) + (1 if self.drop_one else 0)
        if len(self.categories) != expected:
            raise ParameterError(
                f"group {self.group_id!r}: {len(self.members)} columns need {expected} "
                f"categories, got {len(self.categories)}"
            )

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def options(self) -> np.ndarray:
        """Every admissible member assignment, one row per category (in category order)."""
        k = len(self.members)
        eye = np.eye(k)
        return np.vstack([np.zeros((1, k)), eye]) if self.drop_one else eye

    def encode(self, category: str) -> np.ndarray:
        try:
            return self.options()[self.categories.index(str(category))].copy()
        except ValueError:
            raise KeyError(f"{category!r} is not a category of group {self.group_id!r}") from None

    def decode(self, values: Sequence[float]) -> str:
        v = np.asarray(values, dtype=float)
        if self.drop_one and not np.any(v > 0.5):
            return self.categories[0]
        return self.categories[int(np.argmax(v)) + (1 if self.drop_one else 0)]


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[ColumnSpec, ...]
    groups: tuple[PolytopeGroup, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "groups", tuple(self.groups))
        d = len(self.columns)

        names = [c.name for c in self.columns]
        if len(set(names)) != d:
            raise ParameterError("column names must be unique")
        group_ids = [g.group_id for g in self.groups]
        if len(set(group_ids)) != len(group_ids):
            raise ParameterError("group ids must be unique")

        owner: dict[int, str] = {}
        for g in self.groups:
            for m in g.members:
                if not 0 <= m < d:
                    raise ParameterError(f"group {g.group_id!r} references column {m} (d={d})")
                if m in owner:
                    raise ParameterError(
                        f"column {m} belongs to both {owner[m]!r} and {g.group_id!r}"
                    )
                owner[m] = g.group_id
        for j, col in enumerate(self.columns):
            if col.kind == ColumnKind.INDICATOR and owner.get(j) != col.group_id:
                raise ParameterError(
                    f"indicator column {col.name!r} is not a member of group {col.group_id!r}"
                )
            if col.is_continuous and j in owner:
                raise ParameterError(
                    f"continuous column {col.name!r} is listed in group {owner[j]!r}"
                )

    # ---- lookup ----

    @property
    def d(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def continuous_indices(self) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.columns) if c.is_continuous], dtype=int)

    @property
    def categorical_indices(self) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.columns) if not c.is_continuous], dtype=int)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"{name!r} is not a column of the schema") from None

    def group(self, group_id: str) -> PolytopeGroup:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(f"{group_id!r} is not a polytope group")

    def group_of(self, index: int) -> PolytopeGroup | None:
        for g in self.groups:
            if index in g.members:
                return g
        return None

    def feature_blocks(self) -> list[tuple[int, ...]]:
        """Columns grouped into whole features: each continuous column alone, each group once."""
        blocks: list[tuple[int, ...]] = []
        seen: set[str] = set()
        for j, col in enumerate(self.columns):
            if col.is_continuous:
                blocks.append((j,))
            elif col.group_id not in seen:
                seen.add(col.group_id)  # type: ignore[arg-type]
                blocks.append(self.group(col.group_id).members)  # type: ignore[arg-type]
        return blocks

    def n_assignments(self) -> int:
        """Number of joint categorical assignments admitted by the groups."""
        total = 1
        for g in self.groups:
            total *= g.n_categories
        return total

    # ---- encoding ----

    def encode_category(self, group_id: str, category: str) -> np.ndarray:
        return self.group(group_id).encode(category)

    def decode_group(self, row: Sequence[float], group_id: str) -> str:
        g = self.group(group_id)
        return g.decode(np.asarray(row, dtype=float)[list(g.members)])

    def decode_row(self, row: Sequence[float]) -> dict[str, Any]:
        """Map an encoded row to feature name -> raw value or category label."""
        r = np.asarray(row, dtype=float)
        out: dict[str, Any] = {}
        for block in self.feature_blocks():
            col = self.columns[block[0]]
            if col.is_continuous:
                out[col.name] = col.decode(r[block[0]])
            else:
                g = self.group(col.group_id)  # type: ignore[arg-type]
                out[g.source or g.group_id] = g.decode(r[list(g.members)])
        return out

    # ---- restructuring ----

    def drop_columns(self, indices: Iterable[int]) -> FeatureSchema:
        """Remove continuous columns, re-indexing group members."""
        drop = sorted({int(i) for i in indices})
        for i in drop:
            if not self.columns[i].is_continuous:
                raise ParameterError(f"column {self.columns[i].name!r} is part of a polytope group")
        keep = [j for j in range(self.d) if j not in drop]
        remap = {old: new for new, old in enumerate(keep)}
        groups = tuple(
            PolytopeGroup(
                g.group_id,
                tuple(remap[m] for m in g.members),
                g.drop_one,
                g.categories,
                g.source,
                g.bin_edges,
            )
            for g in self.groups
        )
        return FeatureSchema(tuple(self.columns[j] for j in keep), groups)

    # ---- serialization ----

    def to_dict(self) -> dict[str, Any]:
        return {
            "columns": [
                {
                    "name": c.name,
                    "kind": c.kind,
                    "bounds": list(c.bounds) if c.bounds is not None else None,
                    "group_id": c.group_id,
                    "category": c.category,
                    "center": c.center,
                    "scale": c.scale,
                }
                for c in self.columns
            ],
            "groups": [
                {
                    "group_id": g.group_id,
                    "members": list(g.members),
                    "drop_one": g.drop_one,
                    "categories": list(g.categories),
                    "source": g.source,
                    "bin_edges": list(g.bin_edges) if g.bin_edges is not None else None,
                }
                for g in self.groups
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FeatureSchema:
        columns = tuple(
            ColumnSpec(
                name=c["name"],
                kind=c["kind"],
                bounds=_bounds_from_json(c.get("bounds")),
                group_id=c.get("group_id"),
                category=c.get("category"),
                center=float(c.get("center", 0.0)),
                scale=float(c.get("scale", 1.0)),
            )
            for c in data["columns"]
        )
        groups = tuple(
            PolytopeGroup(
                group_id=g["group_id"],
                members=tuple(g["members"]),
                drop_one=bool(g["drop_one"]),
                categories=tuple(g["categories"]),
                source=g.get("source"),
                bin_edges=tuple(g["bin_edges"]) if g.get("bin_edges") is not None else None,
            )
            for g in data.get("groups", [])
        )
        return cls(columns, groups)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> FeatureSchema:
        return cls.from_dict(json.loads(text))


def continuous_schema(names: Sequence[str]) -> FeatureSchema:
    """Schema with only unbounded continuous columns."""
    return FeatureSchema(tuple(ColumnSpec(str(n)) for n in names))


# ---------------------------------------------------------------------------
# Dataset and friends
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    schema: FeatureSchema

    def __post_init__(self) -> None:
        x = _frozen(self.x, float)
        if x.ndim != 2:
            raise ParameterError(f"x must be a 2-D matrix, got shape {x.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", _frozen(self.y, np.int64))
        object.__setattr__(self, "ids", _frozen(self.ids, np.int64))
        if self.y.shape != (x.shape[0],) or self.ids.shape != (x.shape[0],):
            raise ParameterError(
                f"x has {x.shape[0]} rows but y/ids have shapes {self.y.shape}/{self.ids.shape}"
            )

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def d(self) -> int:
        return int(self.x.shape[1])

    def take(self, rows: np.ndarray | Sequence[int]) -> Dataset:
        """Row subset by integer positions or boolean mask."""
        r = np.asarray(rows)
        return Dataset(self.x[r], self.y[r], self.ids[r], self.schema)

    def with_x(self, x: np.ndarray, schema: FeatureSchema | None = None) -> Dataset:
        return Dataset(x, self.y, self.ids, schema or self.schema)

    def with_y(self, y: np.ndarray) -> Dataset:
        return Dataset(self.x, y, self.ids, self.schema)

    def positions(self, ids: Iterable[int]) -> np.ndarray:
        """Row positions of *ids*, in the order given."""
        where = {int(i): p for p, i in enumerate(self.ids)}
        try:
            return np.array([where[int(i)] for i in ids], dtype=int)
        except KeyError as e:
            raise KeyError(f"instance id {e.args[0]} is not in the dataset") from None

    def by_ids(self, ids: Iterable[int]) -> Dataset:
        return self.take(self.positions(ids))

    def row(self, instance_id: int) -> np.ndarray:
        return self.x[self.positions([instance_id])[0]]


@dataclass(frozen=True)
class NoiseSpec:
    """Noise applied to produce one level of a schedule.

    ``feature_sigma`` is in standardized feature units; for ``student_t`` noise it is the
    target standard deviation (``df > 2``) or the scale (``df <= 2``).
    """
    level: int
    feature_sigma: float = 0.0
    label_flip_rate: float = 0.0
    noise_kind: str = NoiseKind.GAUSSIAN
    df: float | None = None
    omitted_columns: frozenset[int] = field(default_factory=frozenset)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "omitted_columns", frozenset(int(c) for c in self.omitted_columns))
        if self.level < 0:
            raise ParameterError(f"noise level must be nonnegative, got {self.level}")
        if not self.feature_sigma >= 0:
            raise ParameterError(f"feature_sigma must be nonnegative, got {self.feature_sigma}")
        if not 0.0 <= self.label_flip_rate <= 1.0:
            raise ParameterError(f"label_flip_rate must be in [0, 1], got {self.label_flip_rate}")
        if self.noise_kind not in NoiseKind:
            raise ParameterError(f"unknown noise kind {self.noise_kind!r}")
        if self.noise_kind == NoiseKind.STUDENT_T and not (self.df is not None and self.df > 0):
            raise ParameterError("student_t noise needs df > 0")
        if self.level == 0 and (self.feature_sigma or self.label_flip_rate or self.omitted_columns):
            raise ParameterError("level 0 must be noise free")


@dataclass(frozen=True)
class WeightVector:
    """Per-column weights of the weighted l1 distance."""
    w: np.ndarray
    reference_split_id: str = "train"
    degenerate: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        w = _frozen(self.w, float)
        if w.ndim != 1:
            raise ParameterError("weights must be a vector")
        if not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise ParameterError("weights must be finite and strictly positive")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "degenerate", tuple(int(j) for j in self.degenerate))

    def __len__(self) -> int:
        return int(self.w.shape[0])

    def scaled(self, factor: float) -> WeightVector:
        return WeightVector(self.w * factor, self.reference_split_id, self.degenerate)

    def take(self, indices: Sequence[int]) -> WeightVector:
        idx = list(indices)
        degenerate = tuple(idx.index(j) for j in self.degenerate if j in idx)
        return WeightVector(self.w[idx], self.reference_split_id, degenerate)


@dataclass(frozen=True)
class Counterfactual:
    """A counterfactual attempt for one instance.

    ``cost`` is the weighted l1 distance from ``original`` to ``point`` (NaN when invalid).
    ``evaluations`` counts classifier evaluations or solver subproblems consumed.
    """
    id: int
    original: np.ndarray
    point: np.ndarray
    method: str
    valid: bool
    cost: float
    evaluations: int = 0
    reason: str = ""
    original_class: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "original", _frozen(self.original, float))
        object.__setattr__(self, "point", _frozen(self.point, float))

    @classmethod
    def invalid(
        cls,
        instance_id: int,
        original: np.ndarray,
        method: str,
        reason: str,
        *,
        evaluations: int = 0,
        original_class: int | None = None,
    ) -> Counterfactual:
        return cls(
            id=int(instance_id),
            original=original,
            point=original,
            method=method,
            valid=False,
            cost=float("nan"),
            evaluations=evaluations,
            reason=reason,
            original_class=original_class,
        )


# ---------------------------------------------------------------------------
# Validation and pairing
# ---------------------------------------------------------------------------

def validate_rows(
    x: np.ndarray,
    schema: FeatureSchema,
    *,
    row_labels: Sequence[Any] | None = None,
    check_bounds: bool = True,
) -> list[str]:
    """Check indicator domains, polytope sums and continuous bounds row by row."""
    m = np.atleast_2d(np.asarray(x, dtype=float))
    labels = list(row_labels) if row_labels is not None else list(range(m.shape[0]))
    problems: list[str] = []
    if m.shape[1] != schema.d:
        return [f"rows have {m.shape[1]} columns but the schema has {schema.d}"]

    for j, col in enumerate(schema.columns):
        v = m[:, j]
        if col.is_continuous:
            if check_bounds and col.bounds is not None:
                lo, hi = col.bounds
                bad = np.flatnonzero((v < lo - _TOL) | (v > hi + _TOL))
                for i in bad:
                    problems.append(
                        f"row {labels[i]}: column {col.name!r} value {float(v[i])!r} "
                        f"outside [{lo}, {hi}]"
                    )
        else:
            bad = np.flatnonzero((v != 0.0) & (v != 1.0))
            for i in bad:
                problems.append(
                    f"row {labels[i]}: indicator column {col.name!r} has value {float(v[i])!r}"
                )

    for g in schema.groups:
        sums = m[:, list(g.members)].sum(axis=1)
        if g.drop_one:
            bad = np.flatnonzero(~(np.isclose(sums, 0.0) | np.isclose(sums, 1.0)))
        else:
            bad = np.flatnonzero(~np.isclose(sums, 1.0))
        for i in bad:
            problems.append(f"row {labels[i]}: group {g.group_id!r} sums to {float(sums[i])!r}")
    return problems


def validate_dataset(d: Dataset) -> list[str]:
    """Return every violated dataset invariant; an empty list means valid."""
    problems: list[str] = []
    if d.d != d.schema.d:
        return [f"x has {d.d} columns but the schema has {d.schema.d}"]
    if len(np.unique(d.ids)) != d.n:
        problems.append("instance ids are not unique")
    if not np.all(np.isin(d.y, (0, 1))):
        problems.append("labels are not binary")
    if not np.all(np.isfinite(d.x)):
        problems.append("x contains non-finite values")
    labels = [f"{p} (id {i})" for p, i in enumerate(d.ids)]
    problems.extend(validate_rows(d.x, d.schema, row_labels=labels))
    return problems


def pair_instances(
    base: Sequence[Counterfactual],
    noisy: Sequence[Counterfactual],
) -> list[tuple[int, Counterfactual, Counterfactual]]:
    """Pair baseline and noisy counterfactuals of the same instance.

    Only ids that are valid on both sides are kept, sorted by id.
    """
    base_valid = {cf.id: cf for cf in base if cf.valid}
    noisy_valid = {cf.id: cf for cf in noisy if cf.valid}
    common = sorted(base_valid.keys() & noisy_valid.keys())
    return [(i, base_valid[i], noisy_valid[i]) for i in common]


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def dataset_frame(d: Dataset) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(d.x), columns=list(d.schema.names))
    frame[LABEL_COLUMN] = np.asarray(d.y)
    frame[ID_COLUMN] = np.asarray(d.ids)
    return frame


def write_dataset_csv(d: Dataset, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    dataset_frame(d).to_csv(p, index=False)
    return p


def read_dataset_csv(path: str | Path, schema: FeatureSchema) -> Dataset:
    frame = pd.read_csv(path)
    expected = [*schema.names, LABEL_COLUMN, ID_COLUMN]
    if list(frame.columns) != expected:
        raise ParameterError(
            f"{path}: header {list(frame.columns)} does not match schema {expected}"
        )
    return Dataset(
        frame[list(schema.names)].to_numpy(dtype=float),
        frame[LABEL_COLUMN].to_numpy(dtype=np.int64),
        frame[ID_COLUMN].to_numpy(dtype=np.int64),
        schema,
    )


def _bounds_from_json(raw: Any) -> tuple[float, float] | None:
    if raw is None:
        return None
    lo, hi = raw
    return float(lo), float(hi)


def write_schema_json(schema: FeatureSchema, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(schema.to_json(), encoding="utf-8")
    return p


def read_schema_json(path: str | Path) -> FeatureSchema:
    return FeatureSchema.from_json(Path(path).read_text(encoding="utf-8"))
