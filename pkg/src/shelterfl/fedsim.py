"""Centralized, federated and isolated training scenarios over one cohort.

``prepare_experiment`` is the only place that sees both the linked data and
the record provenance. It hands each scenario exactly what that scenario is
allowed to hold:

* centralized: merged per-person histories;
* federated / isolated: per-agency unlinked records plus the local ids that
  belong to the training split.

All three are scored on the same pooled test set, whose labels come from
clustering the merged data.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import features as feat
from . import labeling, metrics, nnet
from .domain import (
    AgencyDataset,
    ClientHistory,
    FeatureVector,
    FedConfig,
    Label,
    LabelCentroids,
    ModelParameters,
    TrainConfig,
    WindowConfig,
)
from .seeding import derive_seed
from .synthgen import merge_linked, primary_agency, unlink

logger = logging.getLogger(__name__)

CENTRAL = "centralized"
FEDERATED = "federated"
ISOLATED = "isolated"
SCENARIOS = (CENTRAL, FEDERATED, ISOLATED)


# -- inputs -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TestSet:
    """Pooled held-out records: raw features, synchronized labels, owning agency."""

    x: np.ndarray
    labels: np.ndarray
    agency_ids: np.ndarray
    client_ids: tuple[str, ...]

    def __post_init__(self):
        for name in ("x", "labels", "agency_ids"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return int(self.labels.size)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.x, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype=np.int64).tobytes())
        h.update("\n".join(self.agency_ids.tolist()).encode())
        return h.hexdigest()

    def agency_slice(self, agency_id: str) -> np.ndarray:
        return np.flatnonzero(self.agency_ids == agency_id)


@dataclass(frozen=True)
class AgencyView:
    """Everything one agency holds: its own records and its training ids."""

    data: AgencyDataset
    train_ids: frozenset[str]

    def train_histories(self) -> list[ClientHistory]:
        return [h for h in self.data if h.client_id in self.train_ids]


@dataclass
class Experiment:
    window: WindowConfig
    seed: int
    label_seed: int
    linked: list[ClientHistory]
    linked_train_ids: frozenset[str]
    central_centroids: LabelCentroids
    agencies: dict[str, AgencyView]
    test: TestSet
    client_counts: dict[str, int]
    truth: dict[str, Label] = field(default_factory=dict)


def prepare_experiment(
    linked_view: Mapping[str, AgencyDataset],
    window: WindowConfig,
    seed: int = 0,
    train_fraction: float = 0.8,
    truth: Mapping[str, Label] | None = None,
) -> Experiment:
    """Label the merged data, split people 80/20 and build every scenario's inputs.

    The split is drawn over people, stratified by (primary agency, label); all
    of a person's per-agency records follow that person into train or test.
    """
    label_seed = derive_seed(seed, "labeling")
    linked = merge_linked(linked_view)
    tuples = feat.tuple_matrix(linked, window)
    central_centroids, central_labels = labeling.centralized_labeling(tuples, seed=label_seed)
    label_of = {h.client_id: int(l) for h, l in zip(linked, central_labels)}

    home = primary_agency(linked_view)
    linked_x = feat.feature_matrix(linked, window)
    people = [
        FeatureVector(row, h.client_id, home[h.client_id], Label(label_of[h.client_id]))
        for h, row in zip(linked, linked_x)
    ]
    train_people, _ = feat.stratified_split(people, train_fraction, seed=derive_seed(seed, "split"))
    train_set = frozenset(v.client_id for v in train_people)

    unlinked, provenance = unlink(linked_view, return_provenance=True)
    agencies = {}
    test_x, test_y, test_agency, test_ids = [], [], [], []
    for agency_id in sorted(unlinked):
        ds = unlinked[agency_id]
        train_ids = frozenset(
            h.client_id for h in ds if provenance[(agency_id, h.client_id)] in train_set
        )
        agencies[agency_id] = AgencyView(ds, train_ids)
        held_out = [h for h in ds if h.client_id not in train_ids]
        if held_out:
            test_x.append(feat.feature_matrix(held_out, window))
            test_y.extend(label_of[provenance[(agency_id, h.client_id)]] for h in held_out)
            test_agency.extend([agency_id] * len(held_out))
            test_ids.extend(h.client_id for h in held_out)
    test = TestSet(
        np.concatenate(test_x) if test_x else np.zeros((0, window.n_features)),
        np.asarray(test_y, dtype=np.int64),
        np.asarray(test_agency, dtype=str),
        tuple(test_ids),
    )
    return Experiment(
        window=window,
        seed=seed,
        label_seed=label_seed,
        linked=linked,
        linked_train_ids=train_set,
        central_centroids=central_centroids,
        agencies=agencies,
        test=test,
        client_counts={a: v.data.m for a, v in agencies.items()},
        truth=dict(truth or {}),
    )


# -- results ------------------------------------------------------------------


@dataclass
class RoundLog:
    round: int
    local_loss: dict[str, float]
    test_metrics: dict[str, float]
    wall_time: float = 0.0

    def record(self) -> dict:
        """Stable-order record for the metrics file (wall time excluded)."""
        return {
            "round": self.round,
            "local_loss": {k: self.local_loss[k] for k in sorted(self.local_loss)},
            "test_macro": {k: self.test_metrics[k] for k in ("precision", "recall", "f1")},
        }


@dataclass
class ScenarioResult:
    scenario: str
    seed: int
    models: dict[str, nnet.MlpModel]
    normalization: dict[str, feat.NormalizationParams]
    centroids: dict[str, LabelCentroids]
    confusion: np.ndarray
    agency_confusions: dict[str, np.ndarray]
    test_digest: str
    round_logs: list[RoundLog] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        out = metrics.summarize(self.confusion)
        out["per_agency"] = {
            a: metrics.macro_metrics(cm) | {"n_test": int(cm.sum())}
            for a, cm in sorted(self.agency_confusions.items())
        }
        return out

    @property
    def macro(self) -> dict[str, float]:
        return metrics.macro_metrics(self.confusion)


def fedavg_aggregate(local: Mapping[str, tuple[ModelParameters, int]]) -> ModelParameters:
    """Size-weighted entry-wise mean of agency parameters (sorted reduction)."""
    if not local:
        raise ValueError("nothing to aggregate")
    keys = sorted(local)
    ref = local[keys[0]][0]
    sizes = np.array([local[k][1] for k in keys], dtype=np.float64)
    if np.any(sizes <= 0):
        raise ValueError("agency sizes must be positive")
    for k in keys:
        if not local[k][0].same_shape(ref):
            raise ValueError(f"agency {k!r} parameter shapes differ")
    weights = sizes / sizes.sum()
    out = []
    for j, base in enumerate(ref.arrays()):
        acc = np.zeros_like(base)
        for k, wk in zip(keys, weights):
            acc += wk * local[k][0].arrays()[j]
        out.append(acc)
    return ModelParameters.from_arrays(out)


# -- helpers ------------------------------------------------------------------


def _train_seed(cfg: TrainConfig) -> int:
    return derive_seed(cfg.seed, "train")


def _fresh_model(cfg: TrainConfig, input_dim: int) -> nnet.MlpModel:
    return nnet.init_model(
        input_dim,
        derive_seed(cfg.seed, "init"),
        dropout_rates=cfg.dropout_rates,
        output_activation=cfg.output_activation,
        dtype=np.dtype(cfg.dtype),
    )


def _evaluate(model, norm, test: TestSet, rows=None) -> np.ndarray:
    rows = np.arange(len(test)) if rows is None else rows
    if rows.size == 0:
        return np.zeros(0, dtype=np.int64)
    return nnet.predict(model, feat.apply_normalization(test.x[rows], norm))


def _snapshot(y_true, y_pred) -> dict[str, float]:
    return metrics.macro_metrics(metrics.confusion_matrix(y_true, y_pred))


# -- scenarios ----------------------------------------------------------------


def run_centralized(
    linked: Sequence[ClientHistory],
    train_ids: frozenset[str],
    test: TestSet,
    window: WindowConfig,
    train_cfg: TrainConfig,
    label_seed: int = 0,
) -> ScenarioResult:
    """One model on the merged data of the people in ``train_ids``."""
    tuples = feat.tuple_matrix(linked, window)
    centroids, labels = labeling.centralized_labeling(tuples, seed=label_seed)
    rows = [i for i, h in enumerate(linked) if h.client_id in train_ids]
    x = feat.feature_matrix([linked[i] for i in rows], window)
    y = labels[rows]
    norm = feat.fit_normalization(x)
    model = _fresh_model(train_cfg, window.n_features)
    model = nnet.agency_training(
        model, feat.apply_normalization(x, norm), y, replace(train_cfg, seed=_train_seed(train_cfg))
    )
    pred = _evaluate(model, norm, test)
    return ScenarioResult(
        scenario=CENTRAL,
        seed=train_cfg.seed,
        models={"global": model},
        normalization={"global": norm},
        centroids={"global": centroids},
        confusion=metrics.confusion_matrix(test.labels, pred),
        agency_confusions=metrics.agency_confusions(test.labels, pred, test.agency_ids),
        test_digest=test.digest(),
    )


def run_federated(
    agencies: Mapping[str, AgencyView],
    test: TestSet,
    window: WindowConfig,
    train_cfg: TrainConfig,
    fed_cfg: FedConfig,
    label_seed: int = 0,
    on_round: Callable[[RoundLog], None] | None = None,
) -> ScenarioResult:
    """Decentralized labeling, then ``fed_cfg.rounds`` rounds of FedAvg.

    Each round every agency starts from the broadcast global model, trains
    ``fed_cfg.local_epochs`` epochs on its own training records, and uploads
    its parameters; the server takes the training-size-weighted mean.
    """
    ids = sorted(fed_cfg.agencies) if fed_cfg.agencies else sorted(agencies)

    # step 1: labels from averaged per-agency centroids
    tuples = {a: feat.tuple_matrix(list(agencies[a].data), window) for a in ids}
    centroids = labeling.decentralized_labeling(tuples, seed=label_seed)

    data = {}
    for a in ids:
        hs = agencies[a].train_histories()
        if not hs:
            logger.warning("agency %s has no training records; skipped", a)
            continue
        data[a] = (
            feat.feature_matrix(hs, window),
            labeling.label_tuples(feat.tuple_matrix(hs, window), centroids),
        )
    if not data:
        raise ValueError("no agency has training data")

    if fed_cfg.normalization == "global":
        shared = feat.params_from_moments(feat.merge_moments(feat.column_moments(x) for x, _ in data.values()))
        norms = {a: shared for a in data}
    else:
        norms = {a: feat.fit_normalization(x) for a, (x, _) in data.items()}
    scaled = {a: (feat.apply_normalization(x, norms[a]), y) for a, (x, y) in data.items()}

    def evaluate(model) -> np.ndarray:
        if fed_cfg.normalization == "global":
            return _evaluate(model, norms[next(iter(norms))], test)
        pred = np.zeros(len(test), dtype=np.int64)
        pooled = feat.params_from_moments(feat.merge_moments(feat.column_moments(x) for x, _ in data.values()))
        for a in np.unique(test.agency_ids):
            rows = test.agency_slice(a)
            pred[rows] = _evaluate(model, norms.get(a, pooled), test, rows)
        return pred

    model = _fresh_model(train_cfg, window.n_features)
    local_cfg = replace(train_cfg, epochs=fed_cfg.local_epochs, seed=_train_seed(train_cfg), optimizer_reset_every=0)
    logs = []
    for t in range(1, fed_cfg.rounds + 1):
        started = time.perf_counter()
        uploads, losses = {}, {}
        for a in sorted(scaled):
            x, y = scaled[a]
            hist: list[float] = []
            local = nnet.agency_training(
                model, x, y, local_cfg, epoch_offset=(t - 1) * fed_cfg.local_epochs, losses=hist
            )
            uploads[a] = (local.params, x.shape[0])
            losses[a] = hist[-1] if hist else float("nan")
        model = nnet.MlpModel(fedavg_aggregate(uploads), model.dropout_rates, model.output_activation)
        log = RoundLog(t, losses, _snapshot(test.labels, evaluate(model)), time.perf_counter() - started)
        logs.append(log)
        if on_round is not None:
            on_round(log)

    pred = evaluate(model)
    return ScenarioResult(
        scenario=FEDERATED,
        seed=train_cfg.seed,
        models={"global": model},
        normalization=dict(norms),
        centroids={"global": centroids},
        confusion=metrics.confusion_matrix(test.labels, pred),
        agency_confusions=metrics.agency_confusions(test.labels, pred, test.agency_ids),
        test_digest=test.digest(),
        round_logs=logs,
        excluded=[a for a in ids if a not in data],
    )


def run_isolated(
    agencies: Mapping[str, AgencyView],
    test: TestSet,
    window: WindowConfig,
    train_cfg: TrainConfig,
    label_seed: int = 0,
) -> ScenarioResult:
    """Each agency labels, normalizes and trains alone, and is scored on its
    own slice of the pooled test set."""
    models, norms, cents, excluded = {}, {}, {}, []
    cms = {}
    for a in sorted(agencies):
        view = agencies[a]
        try:
            centroids = labeling.local_centroids(feat.tuple_matrix(list(view.data), window), seed=label_seed)
        except labeling.DegenerateClustering as exc:
            logger.warning("agency %s cannot label its data (%s); excluded", a, exc)
            excluded.append(a)
            continue
        hs = view.train_histories()
        if not hs:
            logger.warning("agency %s has no training records; excluded", a)
            excluded.append(a)
            continue
        x = feat.feature_matrix(hs, window)
        y = labeling.label_tuples(feat.tuple_matrix(hs, window), centroids)
        norm = feat.fit_normalization(x)
        model = nnet.agency_training(
            _fresh_model(train_cfg, window.n_features),
            feat.apply_normalization(x, norm),
            y,
            replace(train_cfg, seed=_train_seed(train_cfg)),
        )
        rows = test.agency_slice(a)
        cms[a] = metrics.confusion_matrix(test.labels[rows], _evaluate(model, norm, test, rows))
        models[a], norms[a], cents[a] = model, norm, centroids
    if excluded:
        logger.warning("isolated scenario excluded agencies: %s", ", ".join(excluded))
    return ScenarioResult(
        scenario=ISOLATED,
        seed=train_cfg.seed,
        models=models,
        normalization=norms,
        centroids=cents,
        confusion=metrics.pool(cms.values()),
        agency_confusions=cms,
        test_digest=test.digest(),
        excluded=excluded,
    )


def run_scenario(
    scenario: str,
    exp: Experiment,
    train_cfg: TrainConfig,
    fed_cfg: FedConfig | None = None,
    on_round: Callable[[RoundLog], None] | None = None,
) -> ScenarioResult:
    """Dispatch one scenario, passing it only the inputs it may see."""
    if scenario == CENTRAL:
        return run_centralized(exp.linked, exp.linked_train_ids, exp.test, exp.window, train_cfg, exp.label_seed)
    if scenario == FEDERATED:
        return run_federated(
            exp.agencies, exp.test, exp.window, train_cfg, fed_cfg or FedConfig(), exp.label_seed, on_round
        )
    if scenario == ISOLATED:
        return run_isolated(exp.agencies, exp.test, exp.window, train_cfg, exp.label_seed)
    raise ValueError(f"unknown scenario {scenario!r}")


# -- repeats ------------------------------------------------------------------


@dataclass
class AveragedResult:
    scenario: str
    seeds: list[int]
    runs: list[dict]
    mean: dict
    std: dict
    results: list[ScenarioResult] = field(default_factory=list, repr=False)


def _numeric_leaves(d, prefix=()):
    for k, v in d.items():
        if isinstance(v, dict):
            yield from _numeric_leaves(v, prefix + (k,))
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            yield prefix + (k,), float(v)


def _nest(flat: dict) -> dict:
    out: dict = {}
    for path, v in flat.items():
        node = out
        for k in path[:-1]:
            node = node.setdefault(k, {})
        node[path[-1]] = v
    return out


def repeat_and_average(
    runner: Callable[[int], ScenarioResult], n_repeats: int = 10, seed_base: int = 0, keep_results: bool = False
) -> AveragedResult:
    """Run ``runner(seed)`` for ``seed_base .. seed_base + n_repeats - 1`` and
    report the mean and (population) standard deviation of every metric."""
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    seeds = list(range(seed_base, seed_base + n_repeats))
    results = [runner(s) for s in seeds]
    runs = [r.summary() for r in results]
    paths = {}
    for run in runs:
        for path, _ in _numeric_leaves(run):
            paths.setdefault(path, None)
    mean, std = {}, {}
    for path in paths:
        vals = []
        for run in runs:
            node = run
            for k in path:
                node = node.get(k) if isinstance(node, dict) else None
                if node is None:
                    break
            if node is not None:
                vals.append(float(node))
        mean[path] = float(np.mean(vals))
        std[path] = float(np.std(vals))
    return AveragedResult(
        scenario=results[0].scenario,
        seeds=seeds,
        runs=runs,
        mean=_nest(mean),
        std=_nest(std),
        results=results if keep_results else [],
    )
