import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilearn.errors import DataError
from dilearn.metrics import (
    LWLRAP,
    MetricsReport,
    accuracy,
    average_over_domains,
    build_report,
    forgetting,
    lwlrap,
    method_comparison_table,
)


def lwlrap_bruteforce(scores, labels):
    """Per positive pair: rank every class explicitly, count positives at or above."""
    total, count = 0.0, 0
    n, c = scores.shape
    for i in range(n):
        # rank position of class j: classes with a higher score, or equal score and lower index, come first
        def position(j):
            return sum(1 for k in range(c) if scores[i, k] > scores[i, j] or (scores[i, k] == scores[i, j] and k < j))

        for j in range(c):
            if not labels[i, j]:
                continue
            pj = position(j)
            hits = sum(1 for k in range(c) if labels[i, k] and position(k) <= pj)
            total += hits / (pj + 1)
            count += 1
    return total / count


class TestAccuracy:
    def test_half(self):
        assert accuracy([0, 1, 2, 2], [0, 1, 1, 0]) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            accuracy([0, 1], [0])

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy([], [])


class TestLwlrap:
    def test_perfect_ranking(self):
        scores = np.array([[0.9, 0.1, 0.8], [0.1, 0.7, 0.2]])
        labels = np.array([[1, 0, 1], [0, 1, 0]])
        assert lwlrap(scores, labels) == 1.0

    def test_worst_single_label(self):
        assert lwlrap(np.array([[0.9, 0.5, 0.1]]), np.array([[0, 0, 1]])) == pytest.approx(1 / 3)

    def test_ties_rank_lower_index_first(self):
        # both tied; class 0 ranks first
        assert lwlrap(np.array([[0.5, 0.5]]), np.array([[0, 1]])) == 0.5
        assert lwlrap(np.array([[0.5, 0.5]]), np.array([[1, 0]])) == 1.0

    def test_no_positives(self):
        with pytest.raises(DataError):
            lwlrap(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_matches_bruteforce_with_ties(self):
        rng = np.random.default_rng(11)
        scores = rng.integers(0, 3, (8, 5)).astype(float)
        labels = rng.integers(0, 2, (8, 5))
        labels[0, 0] = 1
        assert lwlrap(scores, labels) == pytest.approx(lwlrap_bruteforce(scores, labels), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**30), n=st.integers(1, 6), c=st.integers(1, 7))
    def test_bounded(self, seed, n, c):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, (n, c))
        labels[0, 0] = 1
        assert 0 < lwlrap(rng.random((n, c)), labels) <= 1

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**30))
    def test_invariant_under_monotone_transform(self, seed):
        rng = np.random.default_rng(seed)
        scores, labels = rng.standard_normal((5, 6)), rng.integers(0, 2, (5, 6))
        labels[0, 0] = 1
        assert lwlrap(np.exp(scores) * 3 + 1, labels) == pytest.approx(lwlrap(scores, labels), abs=1e-12)


class TestForgetting:
    def test_table_value(self):
        assert forgetting({(1, 1): 49.7, (2, 1): 34.1, (2, 2): 60.0}, 2) == 15.6

    def test_mean_over_previous(self):
        m = {(1, 1): 90.0, (2, 1): 80.0, (2, 2): 70.0, (3, 1): 60.0, (3, 2): 50.0, (3, 3): 99.0}
        assert forgetting(m, 3) == 25.0

    def test_negative_means_backward_transfer(self):
        assert forgetting({(1, 1): 50.0, (2, 1): 55.0}, 2) == -5.0

    def test_first_step_undefined(self):
        with pytest.raises(ValueError):
            forgetting({(1, 1): 1.0}, 1)

    def test_average_exact(self):
        assert average_over_domains([0.1, 0.2]) == 0.15


def square_report():
    scores = {(1, 1): 90.0, (2, 1): 85.0, (2, 2): 70.0, (3, 1): 80.0, (3, 2): 60.0, (3, 3): 75.0}
    return build_report(scores, ["a", "b", "c"])


class TestReport:
    def test_build(self):
        r = square_report()
        assert r.averages == {1: 90.0, 2: 77.5, 3: 215.0 / 3}
        assert r.forgetting == {2: 5.0, 3: 10.0}

    def test_missing_cell(self):
        with pytest.raises(DataError, match="step 2, domain 1"):
            build_report({(1, 1): 1.0, (2, 2): 1.0}, ["a", "b"])

    def test_json_round_trip(self):
        r = square_report()
        back = MetricsReport.from_json(r.to_json())
        assert back.matrix == r.matrix and back.averages == r.averages and back.forgetting == r.forgetting
        assert back.to_json() == r.to_json()

    def test_csv_one_row_per_cell(self):
        lines = square_report().to_csv().strip().splitlines()
        assert len(lines) == 7
        assert lines[1].startswith("1,a,1,a,90.0,90.0,")

    def test_current_domain_table(self):
        lines = square_report().current_domain_table().strip().splitlines()
        assert lines[1:] == ["1,a,90.0,", "2,b,70.0,5.0", "3,c,75.0,10.0"]

    def test_summary_has_every_step(self):
        text = square_report().summary()
        assert len(text.splitlines()) == 4 and "77.5" in text

    def test_metric_label_kept(self):
        r = build_report({(1, 1): 50.0}, ["x"], LWLRAP)
        assert MetricsReport.from_json(r.to_json()).metric == LWLRAP

    def test_comparison_table(self):
        text = method_comparison_table({"ft": square_report()})
        assert text.splitlines()[2] == "ft,2,b,70.0,77.5"
