"""
Synthetic classification data and controlled noise injection.

Mock datasets are built in two steps so that noise can reach categorical features the
same way it reaches continuous ones::

    latent = make_latent(spec)                  # continuous, standardized
    clean = encode_mock(latent, spec)           # some latents discretized into polytopes
    noisy_latent = inject_aleatoric(latent, noise)
    noisy = rediscretize(noisy_latent, clean.schema)   # same bin edges, categories move

Every random draw is keyed by ``(seed, level, column name, instance id)``: the noise an
individual receives does not depend on row order or on which other rows are present.
"""
from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from cfrobust.core import (
    ColumnSpec,
    Dataset,
    FeatureSchema,
    NoiseSpec,
    PolytopeGroup,
    continuous_schema,
)
from cfrobust.errors import DegenerateBinningError, ParameterError, UnsupportedOmissionError
from cfrobust.tags import ColumnKind, NoiseKind

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Mock specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MockSpec:
    """Shape of a synthetic dataset.

    ``n_features`` and ``n_categorical`` count *encoded* columns: ``n_categorical``
    indicator columns are spread over ``n_polytopes`` drop-one groups, each coming from
    one latent continuous feature.  ``class_balance`` is the fraction of class 0.
    """
    n_samples: int = 3000
    n_features: int = 2
    n_informative: int = 2
    n_categorical: int = 0
    n_polytopes: int = 0
    non_iid: bool = False
    missing_variables: bool = False
    class_balance: float = 0.6
    class_separation: float = 1.0
    seed: int = 0

    def validate(self) -> MockSpec:
        for name in ("n_samples", "n_features", "n_informative", "n_categorical", "n_polytopes"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.n_samples < 2:
            raise ParameterError(f"n_samples must be at least 2, got {self.n_samples}")
        if self.n_features < 1:
            raise ParameterError("n_features must be at least 1")
        if self.n_informative > self.n_features:
            raise ParameterError(
                f"n_informative ({self.n_informative}) exceeds n_features ({self.n_features})"
            )
        if self.n_categorical > self.n_features:
            raise ParameterError(
                f"n_categorical ({self.n_categorical}) exceeds n_features ({self.n_features})"
            )
        if self.n_polytopes > self.n_categorical:
            raise ParameterError(
                f"n_polytopes ({self.n_polytopes}) exceeds n_categorical ({self.n_categorical})"
            )
        if (self.n_polytopes == 0) != (self.n_categorical == 0):
            raise ParameterError("categorical columns need at least one polytope and vice versa")
        if not 0.0 < self.class_balance < 1.0:
            raise ParameterError(f"class_balance must be in (0, 1), got {self.class_balance}")
        if not self.class_separation > 0:
            raise ParameterError(f"class_separation must be positive, got {self.class_separation}")
        return self

    @property
    def n_latent(self) -> int:
        return self.n_features - self.n_categorical + self.n_polytopes

    @property
    def n_informative_latent(self) -> int:
        if self.n_informative == 0:
            return 0
        k = int(round(self.n_informative * self.n_latent / self.n_features))
        return min(max(k, 1), self.n_latent)

    def group_sizes(self) -> list[int]:
        """Indicator columns per polytope, as even as possible, larger groups first."""
        if self.n_polytopes == 0:
            return []
        base, extra = divmod(self.n_categorical, self.n_polytopes)
        return [base + (1 if i < extra else 0) for i in range(self.n_polytopes)]


MOCK_PRESETS: dict[str, MockSpec] = {
    "mock1": MockSpec(3000, 2, 2, 0, 0),
    "mock2": MockSpec(3000, 12, 10, 0, 0),
    "mock3": MockSpec(3000, 10, 10, 5, 2),
    "mock4": MockSpec(5000, 40, 40, 20, 10),
    "mock5": MockSpec(3000, 10, 10, 5, 2, non_iid=True),
    "mock6": MockSpec(3000, 7, 7, 4, 1, missing_variables=True),
}


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _latent_name(i: int) -> str:
    return f"x{i}"


def make_latent(spec: MockSpec) -> Dataset:
    """Continuous latent features drawn from class-conditional Gaussian clusters, z-scored."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, n_latent, k = spec.n_samples, spec.n_latent, spec.n_informative_latent

    n_majority = int(round(spec.class_balance * n))
    y = np.ones(n, dtype=np.int64)
    y[:n_majority] = 0
    y = rng.permutation(y)

    vertex = rng.choice([-1.0, 1.0], size=k)
    centers = np.outer(2.0 * y - 1.0, vertex) * (spec.class_separation / 2.0)
    if spec.non_iid and k:
        # cluster centers drift smoothly along the sample index
        direction = rng.standard_normal(k)
        direction /= np.linalg.norm(direction)
        drift = spec.class_separation * (np.arange(n) / max(n - 1, 1) - 0.5)
        centers = centers + np.outer(drift, direction)

    x = rng.standard_normal((n, n_latent))
    x[:, :k] += centers
    std = x.std(axis=0)
    x = (x - x.mean(axis=0)) / np.where(std > 0, std, 1.0)

    schema = continuous_schema([_latent_name(i) for i in range(n_latent)])
    return Dataset(x, y, np.arange(n, dtype=np.int64), schema)


def encode_mock(latent: Dataset, spec: MockSpec) -> Dataset:
    """Discretize the first ``n_polytopes`` latents into drop-one polytopes."""
    out = latent
    for i, size in enumerate(spec.group_sizes()):
        out = discretize_to_polytopes(out, [out.schema.index(_latent_name(i))], size + 1)
    return out


def make_classification(spec: MockSpec) -> Dataset:
    return encode_mock(make_latent(spec), spec)


def default_omission(spec: MockSpec, schema: FeatureSchema) -> tuple[str, ...]:
    """Continuous column hidden from the models of a ``missing_variables`` mock."""
    if not spec.missing_variables:
        return ()
    cont = schema.continuous_indices
    if len(cont) == 0:
        raise ParameterError("missing_variables needs at least one continuous column")
    return (schema.columns[int(cont[-1])].name,)


# ---------------------------------------------------------------------------
# Polytopes
# ---------------------------------------------------------------------------

def _quantile_edges(values: np.ndarray, n_bins: int, name: str) -> np.ndarray:
    n_distinct = len(np.unique(values))
    if n_distinct < n_bins:
        raise DegenerateBinningError(
            f"column {name!r} has {n_distinct} distinct values, fewer than {n_bins} bins"
        )
    edges = np.quantile(values, np.arange(1, n_bins) / n_bins)
    if np.any(np.diff(edges) <= 0):
        raise DegenerateBinningError(f"column {name!r} has tied quantile edges {edges.tolist()}")
    return edges


def _discretize_one(
    d: Dataset, j: int, n_bins: int, edges: np.ndarray | None
) -> Dataset:
    col = d.schema.columns[j]
    if not col.is_continuous:
        raise ParameterError(f"column {col.name!r} is not continuous")
    values = d.x[:, j]
    e = _quantile_edges(values, n_bins, col.name) if edges is None else np.asarray(edges, float)
    if len(e) != n_bins - 1:
        raise ParameterError(f"{n_bins} bins need {n_bins - 1} edges, got {len(e)}")

    # bin b holds e[b-1] < v <= e[b]
    bins = np.searchsorted(e, values, side="left")
    indicators = (bins[:, None] == np.arange(1, n_bins)[None, :]).astype(float)

    k = n_bins - 1
    new_cols = [
        ColumnSpec(f"{col.name}=b{c}", ColumnKind.INDICATOR, group_id=col.name, category=f"b{c}")
        for c in range(1, n_bins)
    ]
    columns = [*d.schema.columns[:j], *new_cols, *d.schema.columns[j + 1:]]

    def shift(m: int) -> int:
        return m if m < j else m + k - 1

    groups = [
        PolytopeGroup(g.group_id, tuple(shift(m) for m in g.members), g.drop_one, g.categories,
                      g.source, g.bin_edges)
        for g in d.schema.groups
    ]
    groups.append(
        PolytopeGroup(
            group_id=col.name,
            members=tuple(range(j, j + k)),
            drop_one=True,
            categories=tuple(f"b{c}" for c in range(n_bins)),
            source=col.name,
            bin_edges=tuple(e),
        )
    )
    x = np.hstack([d.x[:, :j], indicators, d.x[:, j + 1:]])
    return Dataset(x, d.y, d.ids, FeatureSchema(tuple(columns), tuple(groups)))


def discretize_to_polytopes(
    d: Dataset,
    columns: Sequence[int],
    n_bins: int,
    *,
    edges: Sequence[Sequence[float]] | None = None,
) -> Dataset:
    """Replace each continuous column by a drop-one group of ``n_bins`` quantile bins.

    Edges are computed on *d* unless given; they are stored on the new group so the
    same binning can be reapplied to noisy copies.
    """
    if n_bins < 2:
        raise ParameterError(f"n_bins must be at least 2, got {n_bins}")
    names = [d.schema.columns[j].name for j in columns]
    out = d
    for pos, name in enumerate(names):
        e = None if edges is None else np.asarray(edges[pos], dtype=float)
        out = _discretize_one(out, out.schema.index(name), n_bins, e)
    return out


def rediscretize(latent: Dataset, template: FeatureSchema) -> Dataset:
    """Apply the bin edges stored in *template* to a latent dataset."""
    out = latent
    for g in template.groups:
        if g.bin_edges is None or g.source is None:
            raise ParameterError(f"group {g.group_id!r} carries no bin edges")
        j = out.schema.index(g.source)
        out = _discretize_one(out, j, len(g.bin_edges) + 1, np.asarray(g.bin_edges))
    return out


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

def _stream(seed: int, level: int, key: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(level), zlib.crc32(key.encode("utf-8"))])


def _check_ids(ids: np.ndarray) -> int:
    if len(ids) and ids.min() < 0:
        raise ParameterError("instance ids must be nonnegative for keyed noise streams")
    return int(ids.max()) + 1 if len(ids) else 0


def _keyed_normal(seed: int, level: int, key: str, ids: np.ndarray) -> np.ndarray:
    size = _check_ids(ids)
    return _stream(seed, level, key).standard_normal(size)[ids]


def _keyed_student_t(seed: int, level: int, key: str, ids: np.ndarray, df: float) -> np.ndarray:
    size = _check_ids(ids)
    return _stream(seed, level, key).standard_t(df, size)[ids]


def _keyed_uniform(seed: int, level: int, key: str, ids: np.ndarray) -> np.ndarray:
    size = _check_ids(ids)
    return _stream(seed, level, key).random(size)[ids]


def _flip_labels(d: Dataset, spec: NoiseSpec) -> np.ndarray:
    y = np.array(d.y)
    if spec.label_flip_rate > 0:
        flip = _keyed_uniform(spec.seed, spec.level, "__label", d.ids) < spec.label_flip_rate
        y[flip] = 1 - y[flip]
    return y


def inject_aleatoric(d: Dataset, spec: NoiseSpec) -> Dataset:
    """Additive Gaussian noise on continuous columns plus independent label flips."""
    if spec.noise_kind != NoiseKind.GAUSSIAN or spec.omitted_columns:
        raise ParameterError("aleatoric injection takes gaussian noise without omitted columns")
    x = np.array(d.x)
    if spec.feature_sigma > 0:
        for j in d.schema.continuous_indices:
            name = d.schema.columns[j].name
            x[:, j] += spec.feature_sigma * _keyed_normal(spec.seed, spec.level, name, d.ids)
    return Dataset(x, _flip_labels(d, spec), d.ids, d.schema)


def omit_columns(d: Dataset, indices: Iterable[int]) -> Dataset:
    drop = sorted({int(i) for i in indices})
    for j in drop:
        g = d.schema.group_of(j)
        if g is not None:
            raise UnsupportedOmissionError(
                f"column {d.schema.columns[j].name!r} belongs to polytope group {g.group_id!r}"
            )
    keep = [j for j in range(d.d) if j not in drop]
    return Dataset(d.x[:, keep], d.y, d.ids, d.schema.drop_columns(drop))


def inject_epistemic(d: Dataset, spec: NoiseSpec) -> Dataset:
    """Heavy-tailed feature noise and/or omitted continuous columns.

    Label flips of the spec are applied too, so a schedule can combine both kinds of
    uncertainty.
    """
    if spec.noise_kind != NoiseKind.STUDENT_T and not spec.omitted_columns:
        raise ParameterError("epistemic injection needs student_t noise or omitted columns")
    x = np.array(d.x)
    if spec.noise_kind == NoiseKind.STUDENT_T and spec.feature_sigma > 0:
        df = float(spec.df)  # type: ignore[arg-type]
        scale = spec.feature_sigma * math.sqrt((df - 2.0) / df) if df > 2 else spec.feature_sigma
        for j in d.schema.continuous_indices:
            name = d.schema.columns[j].name
            x[:, j] += scale * _keyed_student_t(spec.seed, spec.level, name, d.ids, df)
    elif spec.feature_sigma > 0:
        for j in d.schema.continuous_indices:
            name = d.schema.columns[j].name
            x[:, j] += spec.feature_sigma * _keyed_normal(spec.seed, spec.level, name, d.ids)
    out = Dataset(x, _flip_labels(d, spec), d.ids, d.schema)
    return omit_columns(out, spec.omitted_columns) if spec.omitted_columns else out


def corrupt_categories(d: Dataset, spec: NoiseSpec) -> Dataset:
    """Resample each row's category uniformly with probability ``label_flip_rate`` per group."""
    p = spec.label_flip_rate
    if p == 0 or not d.schema.groups:
        return d
    x = np.array(d.x)
    for g in d.schema.groups:
        hit = _keyed_uniform(spec.seed, spec.level, f"__group:{g.group_id}", d.ids) < p
        pick = np.floor(
            _keyed_uniform(spec.seed, spec.level, f"__pick:{g.group_id}", d.ids) * g.n_categories
        ).astype(int)
        options = g.options()
        rows = np.flatnonzero(hit)
        x[np.ix_(rows, list(g.members))] = options[pick[rows]]
    return Dataset(x, d.y, d.ids, d.schema)


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

def build_noise_schedule(
    n_levels: int,
    max_sigma: float = 2.0,
    max_flip: float = 0.3,
    *,
    seed: int = 0,
) -> list[NoiseSpec]:
    """Linearly increasing Gaussian feature noise and label flips; level 0 is clean."""
    if n_levels < 2:
        raise ParameterError(f"n_levels must be at least 2, got {n_levels}")
    if max_sigma < 0 or not 0 <= max_flip <= 1:
        raise ParameterError("max_sigma must be >= 0 and max_flip in [0, 1]")
    last = n_levels - 1
    return [
        NoiseSpec(
            level=k,
            feature_sigma=max_sigma * k / last,
            label_flip_rate=max_flip * k / last,
            seed=seed,
        )
        for k in range(n_levels)
    ]


def build_epistemic_schedule(
    n_levels: int,
    max_sigma: float = 2.0,
    max_flip: float = 0.3,
    *,
    df: float | None = 3.0,
    omit: Sequence[int] = (),
    seed: int = 0,
) -> list[NoiseSpec]:
    """Like :func:`build_noise_schedule`, with student-t noise and omitted columns past level 0.

    ``df=None`` keeps Gaussian noise and only omits columns.
    """
    if df is None and not omit:
        raise ParameterError("an epistemic schedule needs student_t noise or omitted columns")
    clean = build_noise_schedule(n_levels, max_sigma, max_flip, seed=seed)
    out = [clean[0]]
    for spec in clean[1:]:
        out.append(
            replace(
                spec,
                noise_kind=NoiseKind.GAUSSIAN if df is None else NoiseKind.STUDENT_T,
                df=df,
                omitted_columns=frozenset(omit),
            )
        )
    return out
