"""
Centralized, federated and isolated training
============================================

One cohort, one shared test set, three ways of training. Training is cut
short so the script finishes in seconds; the CLI ``compare``
command runs the full protocol.
"""

from shelterfl import fedsim, metrics
from shelterfl.domain import FedConfig, TrainConfig, WindowConfig
from shelterfl.synthgen import CohortSpec, gen_cohort

cohort = gen_cohort(CohortSpec(n_clients=4000, seed=3))
exp = fedsim.prepare_experiment(cohort, WindowConfig(), seed=3)
print(f"{len(exp.test)} test records, digest {exp.test.digest()[:12]}")

train = TrainConfig(epochs=40, seed=0)
fed = FedConfig(rounds=8, local_epochs=5)


def show_round(log):
    print(f"  round {log.round}: macro recall {log.test_metrics['recall']:.3f}")


results = {}
for scenario in fedsim.SCENARIOS:
    print(scenario)
    results[scenario] = fedsim.run_scenario(scenario, exp, train, fed, on_round=show_round)

rows = [{"scenario": sc, **r.macro} for sc, r in results.items()]
print()
print(metrics.format_table(rows, ("scenario", "precision", "recall", "f1")))

# per-agency F1: where pooling data helps the small agencies
rows = []
for a in sorted(exp.client_counts, key=metrics.agency_sort_key):
    row = {"agency": a, "clients": exp.client_counts[a]}
    for sc, r in results.items():
        cm = r.agency_confusions.get(a)
        row[sc] = metrics.macro_metrics(cm)["f1"] if cm is not None else float("nan")
    rows.append(row)
print()
print(metrics.format_table(rows, ("agency", "clients", *fedsim.SCENARIOS)))
