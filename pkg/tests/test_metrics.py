import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import prf_oracle
from shelterfl import metrics
from shelterfl import reports

cms = st.lists(st.lists(st.integers(0, 50), min_size=3, max_size=3), min_size=3, max_size=3)


def test_confusion_axes():
    cm = metrics.confusion_matrix([0, 0, 1, 2, 2], [0, 1, 1, 2, 0])
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 1]]
    assert cm.sum() == 5


def test_diagonal_is_perfect():
    cm = np.diag([5, 3, 2])
    pc = metrics.per_class_metrics(cm)
    assert pc["precision"].tolist() == pc["recall"].tolist() == pc["f1"].tolist() == [1, 1, 1]
    assert metrics.macro_metrics(cm) == {"precision": 1.0, "recall": 1.0, "f1": 1.0}


def test_absent_class_scores_zero():
    cm = np.array([[4, 1, 0], [2, 3, 0], [0, 0, 0]])
    pc = metrics.per_class_metrics(cm)
    assert pc["recall"][2] == 0 and pc["precision"][2] == 0 and pc["f1"][2] == 0


def test_two_class_style_hand_case():
    cm = np.array([[3, 1, 0], [1, 3, 0], [0, 0, 0]])
    m = metrics.macro_metrics(cm)
    assert m["precision"] == pytest.approx(0.5) and m["recall"] == pytest.approx(0.5)
    w = metrics.weighted_metrics(cm)
    assert w["recall"] == pytest.approx(0.75)


@given(cms)
def test_per_class_matches_oracle(cm):
    pc = metrics.per_class_metrics(np.array(cm))
    for c, (p, r, f) in enumerate(prf_oracle(cm)):
        assert pc["precision"][c] == pytest.approx(p, abs=1e-15)
        assert pc["recall"][c] == pytest.approx(r, abs=1e-15)
        assert pc["f1"][c] == pytest.approx(f, abs=1e-15)
    m = metrics.macro_metrics(np.array(cm))
    assert m["recall"] == pytest.approx(sum(r for _, r, _ in prf_oracle(cm)) / 3)
    for k in ("precision", "recall", "f1"):
        assert 0 <= m[k] <= 1
    assert (pc["f1"] <= np.maximum(pc["precision"], pc["recall"]) + 1e-15).all()


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_agency_slices_pool_to_aggregate(seed, k):
    rng = np.random.default_rng(seed)
    n = 200
    y, p = rng.integers(0, 3, n), rng.integers(0, 3, n)
    agencies = rng.choice([str(i) for i in range(k)], n)
    per = metrics.agency_confusions(y, p, agencies)
    assert np.array_equal(metrics.pool(per.values()), metrics.confusion_matrix(y, p))
    for a, cm in per.items():
        rows = agencies == a
        assert np.array_equal(cm, metrics.confusion_matrix(y[rows], p[rows]))
    report = metrics.per_agency_report(per)
    assert sum(r["n_test"] for r in report) == n


def test_single_agency_report_equals_aggregate():
    y, p = [0, 1, 2, 1], [0, 2, 2, 1]
    per = metrics.agency_confusions(y, p, ["7"] * 4)
    (row,) = metrics.per_agency_report(per, {"7": 40})
    assert row["clients"] == 40
    agg = metrics.macro_metrics(metrics.confusion_matrix(y, p))
    assert {k: row[k] for k in agg} == agg


def test_agency_ids_sort_numerically():
    assert sorted(["330", "4", "13", "x"], key=metrics.agency_sort_key) == ["4", "13", "330", "x"]


def test_summary_shape():
    s = metrics.summarize(np.diag([1, 1, 1]))
    assert s["n"] == 3 and set(s["per_class"]) == {"transitional", "episodic", "chronic"}


def test_tables_render():
    rows = [{"a": "x", "b": 0.5}, {"a": "yy", "b": 1 / 3}]
    text = metrics.format_table(rows, ["a", "b"])
    assert text.splitlines()[2] == " x  0.5000"
    assert metrics.to_csv(rows, ["a", "b"]).splitlines() == ["a,b", "x,0.5", "yy,0.3333333333333333"]


# -- report checks ----------------------------------------------------------------


def test_ordering_check_margins():
    ok = reports.ordering_check({"centralized": 0.70, "federated": 0.66, "isolated": 0.60})
    assert ok.passed
    assert not reports.ordering_check({"centralized": 0.70, "federated": 0.64, "isolated": 0.60}).passed
    assert not reports.ordering_check({"centralized": 0.80, "federated": 0.70, "isolated": 0.60}).passed
    assert not reports.ordering_check({"centralized": 0.65, "federated": 0.66, "isolated": 0.60}).passed


def test_equity_check_population():
    def pa(f1, n):
        return {"precision": f1, "recall": f1, "f1": f1, "n_test": n}

    means = {
        "federated": {"per_agency": {"big": pa(0.5, 9000), "small": pa(0.6, 800), "tiny": pa(0.1, 40)}},
        "isolated": {"per_agency": {"big": pa(0.9, 9000), "small": pa(0.4, 800), "tiny": pa(0.9, 40)}},
    }
    check = reports.equity_check(means, {"big": 20_000, "small": 3000, "tiny": 100})
    assert check.passed and list(check.detail["agencies"]) == ["small"]
    means["isolated"]["per_agency"]["small"] = pa(0.6, 800)
    assert not reports.equity_check(means, {"big": 20_000, "small": 3000, "tiny": 100}).passed


def sweep_rows(recall):
    return [
        {"T_b": b, "T_o": o, "T_p": p, "recall": recall(b, o, p)}
        for b in (5, 10)
        for o in (60, 90, 120)
        for p in (548, 730, 913)
    ]


def test_sweep_sort_report_layout():
    rows = reports.sweep_sort(sweep_rows(lambda b, o, p: 0.5))
    assert len(rows) == 18
    assert [(r["T_b"], r["T_o"], r["T_p"]) for r in rows[:4]] == [(5, 120, 913), (5, 120, 730), (5, 120, 548), (5, 90, 913)]


def test_trend_checks_allow_one_violation_in_nine():
    rows = sweep_rows(lambda b, o, p: o / 1000 - p / 10_000)
    assert all(c.passed for c in reports.trend_checks(rows))
    assert all(c.detail["comparisons"] == 9 and c.detail["required"] == 8 for c in reports.trend_checks(rows))
    # one flipped pair still passes, two do not
    bumped = [dict(r, recall=r["recall"] + (0.2 if (r["T_b"], r["T_o"], r["T_p"]) == (5, 60, 913) else 0)) for r in rows]
    res = {c.name: c for c in reports.trend_checks(bumped)}
    assert not res["recall_nonincreasing_in_T_p[T_b=5]"].passed
    assert res["recall_nonincreasing_in_T_p[T_b=10]"].passed


def test_trend_checks_single_cell():
    rows = [{"T_b": 10, "T_o": 90, "T_p": 548, "recall": 0.6}]
    assert all(c.passed and c.detail["comparisons"] == 0 for c in reports.trend_checks(rows))
