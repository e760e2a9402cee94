"""Report tables and the property checks run on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .metrics import CLASS_NAMES, agency_sort_key

# scenario-ordering tolerances
MIN_FED_OVER_ISO = 0.05
MAX_CENTRAL_OVER_FED = 0.08
# equity check population
EQUITY_MAX_CLIENTS = 10_000
EQUITY_MIN_TEST = 500
# sweep trends must hold in at least this share of comparisons
TREND_SHARE = 8 / 9


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: dict

    def to_dict(self) -> dict:
        return {"passed": self.passed, **self.detail}


# -- compare ------------------------------------------------------------------

AGGREGATE_COLUMNS = ("scenario", "precision", "recall", "f1", "recall_std", "w_precision", "w_recall", "w_f1")
PER_CLASS_COLUMNS = ("scenario", "class", "precision", "recall", "f1")
PER_AGENCY_COLUMNS = ("agency", "clients", "n_test", "scenario", "precision", "recall", "f1")


def aggregate_rows(means: Mapping[str, dict], stds: Mapping[str, dict]) -> list[dict]:
    rows = []
    for sc, m in means.items():
        rows.append(
            {
                "scenario": sc,
                "precision": m["macro"]["precision"],
                "recall": m["macro"]["recall"],
                "f1": m["macro"]["f1"],
                "recall_std": stds[sc]["macro"]["recall"],
                "w_precision": m["weighted"]["precision"],
                "w_recall": m["weighted"]["recall"],
                "w_f1": m["weighted"]["f1"],
            }
        )
    return rows


def per_class_rows(means: Mapping[str, dict]) -> list[dict]:
    return [
        {"scenario": sc, "class": name, **{k: m["per_class"][name][k] for k in ("precision", "recall", "f1")}}
        for sc, m in means.items()
        for name in CLASS_NAMES
    ]


def per_agency_rows(means: Mapping[str, dict], client_counts: Mapping[str, int]) -> list[dict]:
    rows = []
    agencies = sorted({a for m in means.values() for a in m.get("per_agency", {})}, key=agency_sort_key)
    for a in agencies:
        for sc, m in means.items():
            pa = m.get("per_agency", {}).get(a)
            if pa is None:
                continue
            rows.append(
                {
                    "agency": a,
                    "clients": int(client_counts.get(a, 0)),
                    "n_test": int(round(pa["n_test"])),
                    "scenario": sc,
                    "precision": pa["precision"],
                    "recall": pa["recall"],
                    "f1": pa["f1"],
                }
            )
    return rows


def f1_chart_rows(means: Mapping[str, dict]) -> list[dict]:
    """(agency, scenario, F1) triples for the per-agency bar chart."""
    return [
        {"agency": r["agency"], "scenario": r["scenario"], "f1": r["f1"]} for r in per_agency_rows(means, {})
    ]


def ordering_check(macro_recall: Mapping[str, float]) -> Check:
    """centralized >= federated >= isolated, with the required margins."""
    c, f, i = (macro_recall[k] for k in ("centralized", "federated", "isolated"))
    parts = {
        "central_ge_federated": c >= f,
        "federated_ge_isolated": f >= i,
        "federated_minus_isolated_ge_0.05": f - i >= MIN_FED_OVER_ISO,
        "central_minus_federated_le_0.08": c - f <= MAX_CENTRAL_OVER_FED,
    }
    detail = {"recall": dict(macro_recall), "conditions": parts}
    return Check("scenario_ordering", all(parts.values()), detail)


def equity_check(means: Mapping[str, dict], client_counts: Mapping[str, int]) -> Check:
    """Federated macro-F1 beats isolated for every small agency with enough test records."""
    fed = means["federated"].get("per_agency", {})
    iso = means["isolated"].get("per_agency", {})
    checked = {}
    for a in sorted(client_counts, key=agency_sort_key):
        if client_counts[a] >= EQUITY_MAX_CLIENTS or a not in fed:
            continue
        if fed[a]["n_test"] < EQUITY_MIN_TEST:
            continue
        f1_iso = iso.get(a, {}).get("f1", 0.0)
        checked[a] = {"federated_f1": fed[a]["f1"], "isolated_f1": f1_iso, "passed": fed[a]["f1"] > f1_iso}
    return Check("equity", all(v["passed"] for v in checked.values()), {"agencies": checked})


# -- sweep --------------------------------------------------------------------

SWEEP_COLUMNS = ("T_b", "T_o", "T_p", "precision", "recall", "f1", "recall_std")


def sweep_sort(rows: Sequence[dict]) -> list[dict]:
    """Report order of the window grid: T_b ascending, then T_o and T_p descending."""
    return sorted(rows, key=lambda r: (r["T_b"], -r["T_o"], -r["T_p"]))


def _pairs(rows, fixed, vary):
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in fixed), []).append(r)
    for key in sorted(groups):
        g = sorted(groups[key], key=lambda r: r[vary])
        for i in range(len(g)):
            for j in range(i + 1, len(g)):
                yield key, g[i], g[j]


def trend_checks(rows: Sequence[dict]) -> list[Check]:
    """Per T_b: recall non-increasing in T_p (fixed T_o) and non-decreasing in T_o
    (fixed T_p), each over all pairs of grid values."""
    checks = []
    for name, fixed, vary, ok in (
        ("recall_nonincreasing_in_T_p", ("T_b", "T_o"), "T_p", lambda lo, hi: hi["recall"] <= lo["recall"]),
        ("recall_nondecreasing_in_T_o", ("T_b", "T_p"), "T_o", lambda lo, hi: hi["recall"] >= lo["recall"]),
    ):
        by_bins: dict[int, list[bool]] = {}
        for key, lo, hi in _pairs(rows, fixed, vary):
            by_bins.setdefault(key[0], []).append(ok(lo, hi))
        for n_bins in sorted({r["T_b"] for r in rows}):
            results = by_bins.get(n_bins, [])
            need = math.ceil(TREND_SHARE * len(results) - 1e-9)
            held = sum(results)
            checks.append(
                Check(
                    f"{name}[T_b={n_bins}]",
                    held >= need,
                    {"held": held, "comparisons": len(results), "required": need},
                )
            )
    return checks
