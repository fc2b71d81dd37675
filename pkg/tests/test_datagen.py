"""Tests for ``cfrobust.datagen``: mock generation, polytopes and noise injection."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import kurtosis, spearmanr

from cfrobust.core import Dataset, NoiseSpec, continuous_schema, validate_dataset
from cfrobust.datagen import (
    MOCK_PRESETS,
    MockSpec,
    build_epistemic_schedule,
    build_noise_schedule,
    corrupt_categories,
    default_omission,
    discretize_to_polytopes,
    encode_mock,
    inject_aleatoric,
    inject_epistemic,
    make_classification,
    make_latent,
    omit_columns,
    rediscretize,
)
from cfrobust.errors import DegenerateBinningError, ParameterError, UnsupportedOmissionError
from cfrobust.ingest import train_test_split
from cfrobust.models import accuracy, fit_logistic
from cfrobust.tags import NoiseKind


# ===================================================================
# Fixtures
# ===================================================================

def small(name: str, n: int = 300) -> MockSpec:
    return replace(MOCK_PRESETS[name], n_samples=n)


def ladder() -> Dataset:
    """One continuous column holding 1..6."""
    x = np.arange(1.0, 7.0)[:, None]
    return Dataset(x, np.array([0, 0, 0, 1, 1, 1]), np.arange(6), continuous_schema(["v"]))


# ===================================================================
# Mock specifications
# ===================================================================

class TestMockSpec:
    @pytest.mark.parametrize(
        "changes, match",
        [
            ({"n_samples": 1}, "at least 2"),
            ({"n_informative": 5}, "exceeds n_features"),
            ({"n_categorical": 1, "n_polytopes": 0}, "at least one polytope"),
            ({"n_categorical": 1, "n_polytopes": 2}, "exceeds n_categorical"),
            ({"class_balance": 1.0}, "class_balance"),
            ({"class_separation": 0.0}, "class_separation"),
        ],
    )
    def test_rejects(self, changes, match):
        with pytest.raises(ParameterError, match=match):
            replace(MockSpec(n_features=2, n_informative=2), **changes).validate()

    def test_latent_count(self):
        spec = MOCK_PRESETS["mock3"]
        assert spec.n_latent == 7
        assert spec.group_sizes() == [3, 2]

    def test_presets_valid(self):
        for spec in MOCK_PRESETS.values():
            assert spec.validate() is spec


# ===================================================================
# Generation
# ===================================================================

class TestMakeLatent:
    def test_class_balance_exact(self):
        d = make_latent(MockSpec(n_samples=100, class_balance=0.6))
        assert int((d.y == 0).sum()) == 60

    def test_standardized(self):
        d = make_latent(small("mock2"))
        np.testing.assert_allclose(d.x.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(d.x.std(axis=0), 1.0, atol=1e-9)

    def test_deterministic(self):
        a = make_latent(small("mock1"))
        b = make_latent(small("mock1"))
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)

    def test_seed_changes_data(self):
        a = make_latent(small("mock1"))
        b = make_latent(replace(small("mock1"), seed=1))
        assert not np.array_equal(a.x, b.x)

    def test_non_iid_differs_from_iid(self):
        iid = make_latent(replace(small("mock5"), non_iid=False))
        drift = make_latent(small("mock5"))
        assert not np.allclose(iid.x, drift.x)

    def test_informative_features_separate_classes(self):
        d = make_latent(MockSpec(n_samples=2000, class_separation=3.0))
        gap = np.abs(d.x[d.y == 1].mean(axis=0) - d.x[d.y == 0].mean(axis=0))
        assert np.all(gap > 1.0)


class TestMakeClassification:
    def test_mock3_layout(self):
        d = make_classification(small("mock3"))
        assert d.d == 10
        assert [g.group_id for g in d.schema.groups] == ["x0", "x1"]
        assert d.schema.group("x0").members == (0, 1, 2)
        assert d.schema.group("x1").members == (3, 4)
        assert d.schema.group("x0").categories == ("b0", "b1", "b2", "b3")
        assert validate_dataset(d) == []

    def test_all_continuous_presets(self):
        d = make_classification(small("mock2"))
        assert d.d == 12 and d.schema.groups == ()

    def test_default_omission(self):
        spec = small("mock6")
        d = make_classification(spec)
        assert default_omission(spec, d.schema) == ("x3",)
        assert default_omission(small("mock3"), d.schema) == ()


# ===================================================================
# Polytopes
# ===================================================================

class TestPolytopes:
    def test_quantile_bins(self):
        d = discretize_to_polytopes(ladder(), [0], 3)
        assert d.schema.names == ("v=b1", "v=b2")
        assert d.x.tolist() == [[0, 0], [0, 0], [1, 0], [1, 0], [0, 1], [0, 1]]
        assert d.schema.group("v").source == "v"
        assert len(d.schema.group("v").bin_edges) == 2

    def test_given_edges(self):
        d = discretize_to_polytopes(ladder(), [0], 2, edges=[[5.0]])
        assert d.x[:, 0].tolist() == [0, 0, 0, 0, 0, 1]

    def test_edge_count_checked(self):
        with pytest.raises(ParameterError, match="need 2 edges"):
            discretize_to_polytopes(ladder(), [0], 3, edges=[[1.0]])

    def test_too_few_values(self):
        d = Dataset(np.ones((6, 1)), np.zeros(6), np.arange(6), continuous_schema(["v"]))
        with pytest.raises(DegenerateBinningError, match="fewer than 3 bins"):
            discretize_to_polytopes(d, [0], 3)

    def test_single_bin_rejected(self):
        with pytest.raises(ParameterError, match="at least 2"):
            discretize_to_polytopes(ladder(), [0], 1)

    def test_rediscretize_reproduces_clean(self):
        spec = small("mock3")
        latent = make_latent(spec)
        clean = encode_mock(latent, spec)
        again = rediscretize(latent, clean.schema)
        np.testing.assert_array_equal(again.x, clean.x)
        assert again.schema == clean.schema


# ===================================================================
# Noise
# ===================================================================

class TestAleatoric:
    def test_level_zero_identity(self):
        d = make_latent(small("mock1"))
        out = inject_aleatoric(d, NoiseSpec(level=0))
        np.testing.assert_array_equal(out.x, d.x)
        np.testing.assert_array_equal(out.y, d.y)

    def test_noise_keyed_by_id(self):
        d = make_latent(small("mock2"))
        spec = NoiseSpec(level=3, feature_sigma=0.5, label_flip_rate=0.2, seed=4)
        rows = np.array([5, 17, 200, 2])
        full = inject_aleatoric(d, spec)
        part = inject_aleatoric(d.take(rows), spec)
        np.testing.assert_array_equal(part.x, full.x[rows])
        np.testing.assert_array_equal(part.y, full.y[rows])

    def test_levels_draw_fresh_noise(self):
        d = make_latent(small("mock1"))
        a = inject_aleatoric(d, NoiseSpec(level=1, feature_sigma=1.0))
        b = inject_aleatoric(d, NoiseSpec(level=2, feature_sigma=1.0))
        assert not np.allclose(a.x - d.x, b.x - d.x)

    def test_full_flip(self):
        d = make_latent(small("mock1"))
        out = inject_aleatoric(d, NoiseSpec(level=1, label_flip_rate=1.0))
        np.testing.assert_array_equal(out.y, 1 - d.y)

    def test_indicators_untouched(self):
        d = make_classification(small("mock3"))
        out = inject_aleatoric(d, NoiseSpec(level=1, feature_sigma=1.0))
        cat = d.schema.categorical_indices
        np.testing.assert_array_equal(out.x[:, cat], d.x[:, cat])

    def test_rejects_epistemic_spec(self):
        d = make_latent(small("mock1"))
        with pytest.raises(ParameterError, match="aleatoric"):
            inject_aleatoric(d, NoiseSpec(level=1, omitted_columns=frozenset({0})))


class TestEpistemic:
    def test_student_t_noise(self):
        d = make_latent(small("mock2"))
        spec = NoiseSpec(level=1, feature_sigma=1.0, noise_kind=NoiseKind.STUDENT_T, df=3.0)
        out = inject_epistemic(d, spec)
        assert out.d == d.d
        assert not np.allclose(out.x, d.x)

    def test_large_df_is_nearly_gaussian(self):
        d = make_latent(MOCK_PRESETS["mock2"])
        spec = NoiseSpec(level=1, feature_sigma=1.0, noise_kind=NoiseKind.STUDENT_T, df=1000.0)
        noise = (inject_epistemic(d, spec).x - d.x).ravel()
        assert abs(kurtosis(noise, fisher=True)) < 0.2
        assert noise.std() == pytest.approx(1.0, abs=0.02)

    def test_omission_drops_column(self):
        d = make_latent(small("mock2"))
        out = inject_epistemic(d, NoiseSpec(level=1, omitted_columns=frozenset({11})))
        assert out.d == 11
        assert "x11" not in out.schema.names
        np.testing.assert_array_equal(out.x, d.x[:, :11])

    def test_requires_epistemic_component(self):
        d = make_latent(small("mock1"))
        with pytest.raises(ParameterError, match="epistemic"):
            inject_epistemic(d, NoiseSpec(level=1, feature_sigma=0.5))

    def test_omitting_indicator_rejected(self):
        d = make_classification(small("mock3"))
        with pytest.raises(UnsupportedOmissionError, match="polytope group 'x0'"):
            omit_columns(d, [1])


class TestCorruptCategories:
    def test_rows_stay_valid(self):
        d = make_classification(small("mock3"))
        out = corrupt_categories(d, NoiseSpec(level=1, label_flip_rate=1.0))
        assert validate_dataset(out) == []
        assert not np.array_equal(out.x, d.x)

    def test_zero_rate_is_identity(self):
        d = make_classification(small("mock3"))
        assert corrupt_categories(d, NoiseSpec(level=1, feature_sigma=0.1)) is d

    def test_continuous_untouched(self):
        d = make_classification(small("mock3"))
        out = corrupt_categories(d, NoiseSpec(level=2, label_flip_rate=0.5))
        cont = d.schema.continuous_indices
        np.testing.assert_array_equal(out.x[:, cont], d.x[:, cont])


# ===================================================================
# Schedules
# ===================================================================

class TestSchedules:
    def test_linear_ramp(self):
        sched = build_noise_schedule(11, 2.0, 0.3)
        assert [s.level for s in sched] == list(range(11))
        assert sched[0].feature_sigma == 0.0 and sched[0].label_flip_rate == 0.0
        assert sched[10].feature_sigma == pytest.approx(2.0)
        assert sched[10].label_flip_rate == pytest.approx(0.3)
        assert sched[5].feature_sigma == pytest.approx(1.0)

    def test_too_few_levels(self):
        with pytest.raises(ParameterError, match="at least 2"):
            build_noise_schedule(1)

    @pytest.mark.slow
    def test_accuracy_degrades_with_level(self):
        d = make_latent(MOCK_PRESETS["mock2"])
        train0, test0 = train_test_split(d, 0.3, seed=0)
        scores = []
        for spec in build_noise_schedule(11, 2.0, 0.3):
            noisy = inject_aleatoric(d, spec)
            model = fit_logistic(noisy.by_ids(train0.ids))
            scores.append(accuracy(model, noisy.by_ids(test0.ids)))
        rho = spearmanr(np.arange(11), scores)[0]
        assert rho <= -0.9

    def test_epistemic_keeps_clean_level(self):
        sched = build_epistemic_schedule(4, df=3.0, omit=[2])
        assert sched[0].noise_kind == NoiseKind.GAUSSIAN
        assert not sched[0].omitted_columns
        assert all(s.noise_kind == NoiseKind.STUDENT_T for s in sched[1:])
        assert all(s.omitted_columns == frozenset({2}) for s in sched[1:])

    def test_epistemic_omission_only(self):
        sched = build_epistemic_schedule(3, df=None, omit=[0])
        assert all(s.noise_kind == NoiseKind.GAUSSIAN for s in sched)

    def test_epistemic_needs_component(self):
        with pytest.raises(ParameterError, match="student_t noise or omitted"):
            build_epistemic_schedule(3, df=None)
