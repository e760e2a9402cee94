"""Feature engineering: binned observation-window counts, stay/episode
tuples, z-scoring, and the stratified train/test split."""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import ClientHistory, FeatureVector, Label, StayTuple, WindowConfig

logger = logging.getLogger(__name__)


def count_episodes(stays, window_start: int, window_days: int, gap: int = 30) -> int:
    """Number of episodes among stays in ``[window_start, window_start + window_days)``.

    A new episode starts whenever two consecutive stay-days are ``gap`` or
    more days apart.
    """
    s = np.asarray(stays, dtype=np.int64)
    s = s[(s >= window_start) & (s < window_start + window_days)]
    if s.size == 0:
        return 0
    return 1 + int(np.count_nonzero(np.diff(s) >= gap))


def bin_edges(cfg: WindowConfig) -> np.ndarray:
    """Offsets (relative to the first day) of the ``T_b + 1`` bin boundaries.

    Bins are ``floor(T_o / T_b)`` days wide; the last bin absorbs any remainder.
    """
    width = cfg.observation_days // cfg.n_bins
    if width < 1:
        raise ValueError("observation window shorter than the number of bins")
    edges = np.arange(cfg.n_bins + 1, dtype=np.int64) * width
    edges[-1] = cfg.observation_days
    return edges


def extract_features(h: ClientHistory, cfg: WindowConfig, agency_id: str = "") -> FeatureVector:
    rel = h.stays - h.first_day
    rel = rel[rel < cfg.observation_days]
    edges = bin_edges(cfg)
    bins = np.histogram(rel, bins=edges)[0] if rel.size else np.zeros(cfg.n_bins, np.int64)
    n_ep = count_episodes(h.stays, h.first_day, cfg.observation_days, cfg.episode_gap)
    values = np.concatenate([bins, [rel.size, n_ep]]).astype(np.float64)
    return FeatureVector(values, h.client_id, agency_id)


def extract_tuple(h: ClientHistory, cfg: WindowConfig) -> StayTuple:
    rel = h.stays - h.first_day
    n_s = int(np.count_nonzero(rel < cfg.prediction_days))
    n_e = count_episodes(h.stays, h.first_day, cfg.prediction_days, cfg.episode_gap)
    return StayTuple(n_s, n_e)


# -- batch versions, used on whole cohorts ---------------------------------


def _flatten(histories: Sequence[ClientHistory]):
    lengths = np.fromiter((len(h) for h in histories), dtype=np.int64, count=len(histories))
    if lengths.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), lengths
    owner = np.repeat(np.arange(len(histories)), lengths)
    days = np.concatenate([h.stays for h in histories])
    firsts = np.fromiter((h.first_day for h in histories), dtype=np.int64, count=len(histories))
    return days - firsts[owner], owner, lengths


def _window_counts(rel, owner, n, window_days, gap):
    """Per-owner stay count and episode count for offsets in [0, window_days)."""
    keep = rel < window_days
    rel, owner = rel[keep], owner[keep]
    stays = np.bincount(owner, minlength=n)
    new_ep = np.ones(rel.size, dtype=bool)
    if rel.size > 1:
        same = owner[1:] == owner[:-1]
        new_ep[1:] = ~same | (np.diff(rel) >= gap)
    episodes = np.bincount(owner[new_ep], minlength=n)
    return stays, episodes, rel, owner


def feature_matrix(histories: Sequence[ClientHistory], cfg: WindowConfig) -> np.ndarray:
    """Raw ``(m, T_b + 2)`` feature matrix, rows in input order."""
    n = len(histories)
    rel, owner, _ = _flatten(histories)
    stays, episodes, rel, owner = _window_counts(
        rel, owner, n, cfg.observation_days, cfg.episode_gap
    )
    edges = bin_edges(cfg)
    b = np.searchsorted(edges, rel, side="right") - 1
    bins = np.bincount(owner * cfg.n_bins + b, minlength=n * cfg.n_bins).reshape(n, cfg.n_bins)
    out = np.empty((n, cfg.n_features), dtype=np.float64)
    out[:, : cfg.n_bins] = bins
    out[:, -2] = stays
    out[:, -1] = episodes
    return out


def tuple_matrix(histories: Sequence[ClientHistory], cfg: WindowConfig) -> np.ndarray:
    """``(m, 2)`` integer array of (N_S, N_E) over each client's prediction window."""
    n = len(histories)
    rel, owner, _ = _flatten(histories)
    stays, episodes, _, _ = _window_counts(rel, owner, n, cfg.prediction_days, cfg.episode_gap)
    return np.stack([stays, episodes], axis=1).astype(np.int64).reshape(n, 2)


# -- z-scoring --------------------------------------------------------------


@dataclass(frozen=True)
class Moments:
    """Sufficient statistics for column z-scoring; what an agency uploads."""

    count: int
    total: np.ndarray
    total_sq: np.ndarray

    def __add__(self, other: "Moments") -> "Moments":
        return Moments(self.count + other.count, self.total + other.total, self.total_sq + other.total_sq)


@dataclass(frozen=True)
class NormalizationParams:
    means: np.ndarray
    stds: np.ndarray

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}


def column_moments(x: np.ndarray) -> Moments:
    x = np.asarray(x, dtype=np.float64)
    return Moments(x.shape[0], x.sum(axis=0), (x * x).sum(axis=0))


def merge_moments(parts: Iterable[Moments]) -> Moments:
    parts = list(parts)
    if not parts:
        raise ValueError("no moments to merge")
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out


def params_from_moments(mom: Moments) -> NormalizationParams:
    if mom.count < 1:
        raise ValueError("cannot normalize with zero rows")
    means = mom.total / mom.count
    var = np.maximum(mom.total_sq / mom.count - means * means, 0.0)
    degenerate = var <= 1e-12 * (means * means + 1.0)
    if np.any(degenerate):
        logger.info("zero-variance feature columns %s; std set to 1", np.flatnonzero(degenerate).tolist())
    stds = np.where(degenerate, 1.0, np.sqrt(var))
    return NormalizationParams(means, stds)


def fit_normalization(train: np.ndarray) -> NormalizationParams:
    """Column means and population standard deviations of ``train``."""
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] == 0:
        raise ValueError("training matrix must be non-empty and 2-D")
    return params_from_moments(column_moments(train))


def apply_normalization(x: np.ndarray, params: NormalizationParams) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - params.means) / params.stds


def invert_normalization(z: np.ndarray, params: NormalizationParams) -> np.ndarray:
    return np.asarray(z) * params.stds + params.means


# -- splitting --------------------------------------------------------------


def stratified_split(
    vectors: Sequence[FeatureVector], fraction: float = 0.8, seed: int = 0
) -> tuple[list[FeatureVector], list[FeatureVector]]:
    """Split stratified on (agency, label); each stratum keeps ``round(fraction * size)``
    rows for training. A stratum of one client always goes to training."""
    if not vectors:
        raise ValueError("cannot split an empty collection")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    strata: dict[tuple[str, int], list[FeatureVector]] = defaultdict(list)
    for v in vectors:
        if v.label is None or not v.agency_id:
            raise ValueError(f"vector {v.client_id!r} lacks agency or label")
        strata[(v.agency_id, int(v.label))].append(v)

    rng = np.random.default_rng(seed)
    train, test = [], []
    for key in sorted(strata):
        members = sorted(strata[key], key=lambda v: v.client_id)
        n_train = int(np.floor(fraction * len(members) + 0.5))
        order = rng.permutation(len(members))
        train.extend(members[i] for i in order[:n_train])
        test.extend(members[i] for i in order[n_train:])
    train.sort(key=lambda v: (v.agency_id, v.client_id))
    test.sort(key=lambda v: (v.agency_id, v.client_id))
    return train, test


# -- export -----------------------------------------------------------------


def feature_header(n_bins: int) -> list[str]:
    return [f"bin_{i}" for i in range(n_bins)] + [
        "total_stays", "total_episodes", "label", "agency_id", "client_id",
    ]


def write_feature_matrix(path, vectors: Sequence[FeatureVector]) -> None:
    if not vectors:
        raise ValueError("nothing to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(feature_header(vectors[0].n_bins))
        for v in vectors:
            label = "" if v.label is None else str(Label(v.label))
            w.writerow([f"{x:g}" for x in v.values] + [label, v.agency_id, v.client_id])


def read_feature_matrix(path) -> list[FeatureVector]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        n_bins = len(header) - 5
        for row in r:
            values = [float(x) for x in row[: n_bins + 2]]
            label = Label.parse(row[n_bins + 2]) if row[n_bins + 2] else None
            out.append(FeatureVector(values, row[n_bins + 4], row[n_bins + 3], label))
    return out
