import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossmil.clustering import cluster_dataset
from crossmil.data import SyntheticSpec, generate_synthetic
from crossmil.errors import ContractError, MetricError
from crossmil.evaluation import (
    _structural_components,
    auc,
    average_precision,
    bootstrap_test,
    compare_models,
    delong_test,
    evaluate,
    pr_points,
    read_scores,
    report_from_scores,
    roc_points,
    write_scores,
)
from crossmil.models import ModelConfig, init_params
from crossmil.training import TrainedModel


def pair_counting_auc(scores, labels):
    """Exhaustive Mann-Whitney count: 1 per win, 0.5 per tie."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_worked_example(self):
        scores = [0.8, 0.35, 0.1, 0.4]
        labels = [1, 1, 0, 0]
        assert auc(scores, labels) == 0.75

    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_ties_give_half(self):
        assert auc([0.5] * 6, [1, 1, 1, 0, 0, 0]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(MetricError):
            auc([0.1, 0.9], [1, 1])

    def test_equals_pair_counting_on_random_instances(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n = int(rng.integers(2, 60))
            labels = rng.integers(0, 2, size=n)
            if labels.sum() in (0, n):
                continue
            # quantized scores force plenty of ties
            scores = np.round(rng.uniform(0, 1, size=n), 1)
            assert auc(scores, labels) == pair_counting_auc(scores, labels)

    def test_invariant_under_strictly_increasing_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(-3, 3, size=40)
        labels = rng.integers(0, 2, size=40)
        labels[0], labels[1] = 0, 1
        logistic = 1.0 / (1.0 + np.exp(-scores))
        assert auc(scores, labels) == auc(logistic, labels)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_monotone_invariance_property(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 30))
        labels = np.r_[1, 0, rng.integers(0, 2, size=n - 2)]
        scores = np.round(rng.uniform(0, 1, size=n), 2)
        assert auc(scores, labels) == pair_counting_auc(scores, labels)
        assert auc(3.0 * scores + 2.0, labels) == auc(scores, labels)


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_hand_enumerated_case(self):
        assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)

    def test_single_positive_ranked_last(self):
        for n in (3, 5, 10):
            scores = np.linspace(1.0, 0.1, n)
            labels = np.zeros(n, dtype=int)
            labels[-1] = 1
            assert average_precision(scores, labels) == pytest.approx(1 / n, abs=1e-15)

    def test_no_positives_rejected(self):
        with pytest.raises(MetricError):
            average_precision([0.4, 0.6], [0, 0])

    def test_ties_grouped_at_one_threshold(self):
        # both items share one threshold: single PR point at (1.0, 0.5)
        assert average_precision([0.5, 0.5], [1, 0]) == 0.5


class TestCurves:
    def test_roc_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(0, 1, 30)
        labels = np.r_[1, 0, rng.integers(0, 2, 28)]
        pts = roc_points(scores, labels)
        assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
        assert all(a[0] <= b[0] and a[1] <= b[1] for a, b in zip(pts, pts[1:]))

    def test_pr_recall_monotone(self):
        rng = np.random.default_rng(3)
        scores = rng.uniform(0, 1, 30)
        labels = np.r_[1, 0, rng.integers(0, 2, 28)]
        pts = pr_points(scores, labels)
        assert all(a[0] <= b[0] for a, b in zip(pts, pts[1:]))
        assert pts[-1][0] == 1.0


def delong_oracle(scores_a, scores_b, labels):
    """Direct double-loop structural components and test statistic."""
    sa, sb, y = map(np.asarray, (scores_a, scores_b, labels))

    def psi(x, yv):
        return 1.0 if x > yv else (0.5 if x == yv else 0.0)

    def components(s):
        pos = s[y == 1]
        neg = s[y == 0]
        v10 = np.array([np.mean([psi(p, n) for n in neg]) for p in pos])
        v01 = np.array([np.mean([psi(p, n) for p in pos]) for n in neg])
        return v10, v01, v10.mean()

    v10a, v01a, auc_a = components(sa)
    v10b, v01b, auc_b = components(sb)
    m, n = len(v10a), len(v01a)
    # singleton classes carry no variance estimate
    s10 = np.cov(np.stack([v10a, v10b]), ddof=1) if m > 1 else np.zeros((2, 2))
    s01 = np.cov(np.stack([v01a, v01b]), ddof=1) if n > 1 else np.zeros((2, 2))
    cov = s10 / m + s01 / n
    var = cov[0, 0] + cov[1, 1] - 2 * cov[0, 1]
    if var <= 0:
        return (v10a, v01a, auc_a), (v10b, v01b, auc_b), None, None
    z = (auc_a - auc_b) / math.sqrt(var)
    return (v10a, v01a, auc_a), (v10b, v01b, auc_b), z, math.erfc(abs(z) / math.sqrt(2))


class TestDelong:
    def test_identical_scores_give_p_one(self):
        scores = [0.9, 0.7, 0.3, 0.4, 0.2]
        labels = [1, 1, 0, 1, 0]
        result = delong_test(scores, scores, labels)
        assert result.p_value == 1.0 and result.z == 0.0

    def test_structural_components_match_double_loop_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(4, 13))
            labels = np.r_[1, 0, rng.integers(0, 2, n - 2)]
            sa = np.round(rng.uniform(0, 1, n), 1)
            sb = np.round(rng.uniform(0, 1, n), 1)
            (v10o, v01o, auc_o), _, z_o, p_o = delong_oracle(sa, sb, labels)
            v10, v01, auc_mid = _structural_components(
                np.asarray(sa, dtype=float), np.asarray(labels)
            )
            np.testing.assert_allclose(v10, v10o, rtol=0, atol=1e-12)
            np.testing.assert_allclose(v01, v01o, rtol=0, atol=1e-12)
            assert abs(auc_mid - auc_o) <= 1e-12
            result = delong_test(sa, sb, labels)
            if z_o is not None:
                assert abs(result.z - z_o) <= 1e-9
                assert abs(result.p_value - p_o) <= 1e-12

    def test_separated_vs_chance_is_significant(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            labels = np.r_[np.ones(100, dtype=int), np.zeros(100, dtype=int)]
            strong = labels + rng.normal(0, 0.05, 200)
            chance = rng.uniform(0, 1, 200)
            assert delong_test(strong, chance, labels).p_value < 0.01

    def test_mismatched_labels_rejected(self):
        with pytest.raises(ContractError):
            delong_test([0.1, 0.9], [0.2, 0.8], [0, 1, 1])


class TestBootstrap:
    def test_identical_scores_give_p_one(self):
        rng = np.random.default_rng(5)
        labels = np.r_[np.ones(10, dtype=int), np.zeros(10, dtype=int)]
        scores = rng.uniform(0, 1, 20)
        assert bootstrap_test(scores, scores, labels, n_boot=200, seed=0) == 1.0

    def test_one_sided_dominance_hits_floor(self):
        # a is perfectly separated, b anti-separated: every replicate has d > 0
        labels = np.r_[np.ones(8, dtype=int), np.zeros(8, dtype=int)]
        a = np.r_[np.full(8, 0.9), np.full(8, 0.1)]
        b = np.r_[np.full(8, 0.1), np.full(8, 0.9)]
        p = bootstrap_test(a, b, labels, metric="auc", n_boot=500, seed=1)
        assert p == pytest.approx(2 / 500)

    def test_agrees_with_delong_direction(self):
        rng = np.random.default_rng(6)
        labels = np.r_[np.ones(50, dtype=int), np.zeros(50, dtype=int)]
        strong = labels + rng.normal(0, 0.1, 100)
        chance = rng.uniform(0, 1, 100)
        d = delong_test(strong, chance, labels)
        p_boot = bootstrap_test(strong, chance, labels, metric="auc", n_boot=500, seed=2)
        assert d.auc_a > d.auc_b and p_boot < 0.05 and d.p_value < 0.05

    def test_small_replicate_count_rejected(self):
        with pytest.raises(ContractError):
            bootstrap_test([0.1, 0.9], [0.2, 0.8], [0, 1], n_boot=50)

    def test_deterministic_by_seed(self):
        rng = np.random.default_rng(7)
        labels = np.r_[np.ones(10, dtype=int), np.zeros(10, dtype=int)]
        a, b = rng.uniform(0, 1, 20), rng.uniform(0, 1, 20)
        assert bootstrap_test(a, b, labels, seed=3, n_boot=300) == bootstrap_test(
            a, b, labels, seed=3, n_boot=300
        )


class TestEvaluate:
    def test_report_from_two_patient_scores(self):
        report = report_from_scores([0.9, 0.1], [1, 0])
        assert report.auc == 1.0 and report.accuracy == 1.0
        assert report.n_pos == 1 and report.n_neg == 1

    def test_end_to_end_fields_populated(self):
        ds = generate_synthetic(
            SyntheticSpec(n_patients_per_class=4, n_locations=8, dim=8, seed=20)
        )
        cm = cluster_dataset(ds, "5x", k=3, seed=20)
        cfg = ModelConfig(embed_dim=8, encoder_dim=6, attention_hidden=4,
                          n_clusters=3, n_scales=3)
        models = [TrainedModel(init_params(cfg, seed=s), s, 0) for s in range(2)]
        report, scored = evaluate(models, ds, cm, bag_size=4, seed=20)
        assert 0.0 <= report.auc <= 1.0
        assert 0.0 <= report.ap <= 1.0
        assert 0.0 <= report.accuracy <= 1.0
        assert report.n_pos == 4 and report.n_neg == 4
        assert len(scored) == 8
        assert all(0.0 <= s.score <= 1.0 for s in scored)
        assert report.roc_curve[0] == (0.0, 0.0) and report.roc_curve[-1] == (1.0, 1.0)

    def test_evaluate_is_deterministic(self):
        ds = generate_synthetic(
            SyntheticSpec(n_patients_per_class=3, n_locations=6, dim=8, seed=21)
        )
        cm = cluster_dataset(ds, "5x", k=3, seed=21)
        cfg = ModelConfig(embed_dim=8, encoder_dim=6, attention_hidden=4,
                          n_clusters=3, n_scales=3)
        models = [TrainedModel(init_params(cfg, seed=0), 0, 0)]
        _, a = evaluate(models, ds, cm, bag_size=4, seed=5)
        _, b = evaluate(models, ds, cm, bag_size=4, seed=5)
        assert [(s.patient_id, s.score) for s in a] == [(s.patient_id, s.score) for s in b]

    def test_per_split_mode_averages_model_metrics(self):
        ds = generate_synthetic(
            SyntheticSpec(n_patients_per_class=3, n_locations=6, dim=8, seed=22)
        )
        cm = cluster_dataset(ds, "5x", k=3, seed=22)
        cfg = ModelConfig(embed_dim=8, encoder_dim=6, attention_hidden=4,
                          n_clusters=3, n_scales=3)
        models = [TrainedModel(init_params(cfg, seed=s), s, 0) for s in range(3)]
        report, _ = evaluate(models, ds, cm, bag_size=4, seed=22, mode="per_split")
        assert 0.0 <= report.auc <= 1.0

    def test_scores_file_round_trip(self, tmp_path):
        report = report_from_scores([0.9, 0.1], [1, 0])
        from crossmil.evaluation import ScoredPatient

        scored = [ScoredPatient("a", 1, 0.9, 1), ScoredPatient("b", 0, 0.1, 0)]
        path = write_scores(scored, tmp_path / "scores.csv")
        ids, labels, values = read_scores(path)
        assert ids == ["a", "b"]
        np.testing.assert_array_equal(labels, [1, 0])
        np.testing.assert_array_equal(values, [0.9, 0.1])

    def test_compare_models_returns_both_pvalues(self):
        rng = np.random.default_rng(8)
        labels = np.r_[np.ones(20, dtype=int), np.zeros(20, dtype=int)]
        a, b = rng.uniform(0, 1, 40), rng.uniform(0, 1, 40)
        test = compare_models("a", a, "b", b, labels, n_boot=200, seed=0)
        assert 0.0 <= test.p_auc <= 1.0 and 0.0 <= test.p_ap <= 1.0
