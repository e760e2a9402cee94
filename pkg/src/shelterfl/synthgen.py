"""Synthetic multi-agency shelter-stay cohorts.

Each client follows one of three stay processes:

* transitional: a single short run of stays;
* episodic: several short runs separated by gaps of at least 30 days;
* chronic: one to three long runs covering most of the first year or so.

Every client may also return for short, unpredictable episodes later on.
A run is a block of consecutive days on which the client is present with
probability ``presence`` (the first day of a run is always a stay).

Runs are cut into blocks and each block is attributed to one of the
client's agencies, which is how one person ends up as several unrelated
records once the agencies' data are unlinked.

Agencies are not interchangeable. The primary agency is drawn with
class-specific tilts (by default chronic clients are never based at the
small agencies) and sets a length-of-stay multiplier for the client's
non-chronic runs. Secondary agencies are drawn from the plain weights.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .domain import AgencyDataset, ClientHistory, Label, day_from_iso

logger = logging.getLogger(__name__)

#: Reference client counts per agency (an eight-agency system); used as the
#: default agency size skew.
REFERENCE_AGENCY_SIZES = {
    "4": 2386,
    "13": 7063,
    "55": 12017,
    "188": 15065,
    "213": 293,
    "225": 1207,
    "330": 28523,
    "333": 11713,
}


def _reference_weights():
    total = sum(REFERENCE_AGENCY_SIZES.values())
    return {k: v / total for k, v in REFERENCE_AGENCY_SIZES.items()}


#: Chronic clients never have one of the small agencies as their primary
#: shelter; they only pass through them.
DEFAULT_AFFINITY = {"chronic": {"4": 0.0, "13": 0.0, "213": 0.0, "225": 0.0}}

#: Length-of-stay differences between agencies (bed policies). Roughly
#: balanced around 1 when weighted by agency size.
DEFAULT_INTENSITY = {"4": 1.3, "13": 0.7, "55": 1.3, "188": 0.7, "225": 0.7, "330": 1.3, "333": 0.7}


@dataclass(frozen=True)
class ClassParams:
    """Stay-process parameters. Means are in days unless noted."""

    presence: float = 0.9
    transitional_mean_run: float = 12.0
    episodic_mean_episodes: float = 6.0
    episodic_mean_run: float = 8.0
    episodic_mean_extra_gap: float = 45.0  # added to the 30-day minimum gap
    chronic_mean_stays: float = 300.0
    chronic_sd_stays: float = 20.0
    chronic_max_episodes: int = 3
    chronic_mean_extra_gap: float = 20.0
    relapse_per_year: float = 0.4  # late short returns, all classes
    relapse_mean_run: float = 5.0
    min_gap: int = 30
    # agency attribution
    agencies_per_client: tuple[float, ...] = (0.6, 0.25, 0.15)  # P(1), P(2), P(3) agencies
    primary_share: float = 0.9
    switch_mean_days: float = 30.0
    # per-class multiplicative tilt on the primary-agency weights,
    # {label name: {agency: factor}}; secondary agencies use the base weights
    agency_affinity: Mapping[str, Mapping[str, float]] = field(default_factory=lambda: dict(DEFAULT_AFFINITY))
    # per-agency run-length multiplier applied through the client's primary agency
    agency_intensity: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_INTENSITY))


@dataclass(frozen=True)
class CohortSpec:
    n_clients: int = 50_000
    class_mix: tuple[float, float, float] = (0.85, 0.09, 0.06)  # Label order
    agency_weights: Mapping[str, float] = field(default_factory=_reference_weights)
    horizon_days: int = 913
    class_params: ClassParams = field(default_factory=ClassParams)
    start_day: int = day_from_iso("2009-01-01")
    entry_spread_days: int = 3104
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 0:
            raise ValueError("n_clients must be >= 0")
        if len(self.class_mix) != 3 or abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ValueError("class_mix must be three probabilities summing to 1")
        if not self.agency_weights or abs(sum(self.agency_weights.values()) - 1.0) > 1e-9:
            raise ValueError("agency_weights must sum to 1")
        if any(w < 0 for w in self.agency_weights.values()):
            raise ValueError("agency weights must be non-negative")
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be >= 1")
        p = self.class_params.agencies_per_client
        if abs(sum(p) - 1.0) > 1e-9:
            raise ValueError("agencies_per_client must sum to 1")

    @property
    def agency_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.agency_weights))


# -- one client ---------------------------------------------------------------


def _run(start: int, length: int, presence: float, rng) -> np.ndarray:
    present = rng.random(length) < presence
    present[0] = True
    return start + np.flatnonzero(present)


def _client_runs(spec: CohortSpec, true_class: Label, rng, intensity: float = 1.0) -> list[np.ndarray]:
    """Stay-days (relative to entry) grouped by run.

    ``intensity`` scales transitional, episodic and relapse run lengths.
    """
    p = spec.class_params
    runs: list[tuple[int, int]] = []  # (start, length)
    if true_class == Label.TRANSITIONAL:
        runs.append((0, int(rng.geometric(1.0 / (p.transitional_mean_run * intensity)))))
    elif true_class == Label.EPISODIC:
        n_ep = max(2, int(round(p.episodic_mean_episodes)) - 2 + int(rng.binomial(4, 0.5)))
        t = 0
        for _ in range(n_ep):
            length = int(rng.geometric(1.0 / (p.episodic_mean_run * intensity)))
            runs.append((t, length))
            t += length - 1 + p.min_gap + int(rng.geometric(1.0 / (p.episodic_mean_extra_gap + 1)))
    else:
        n_ep = int(rng.integers(1, p.chronic_max_episodes + 1))
        total = rng.normal(p.chronic_mean_stays, p.chronic_sd_stays) / p.presence
        total = int(max(n_ep * 20, round(total)))
        shares = rng.dirichlet(np.full(n_ep, 4.0))
        lengths = np.maximum(1, np.round(shares * total).astype(int))
        t = 0
        for length in lengths:
            runs.append((t, int(length)))
            t += int(length) - 1 + p.min_gap + int(rng.geometric(1.0 / (p.chronic_mean_extra_gap + 1)))

    # late returns: Poisson process after the core pattern
    t = runs[-1][0] + runs[-1][1] - 1 + p.min_gap
    rate = p.relapse_per_year / 365.0
    while rate > 0:
        t += int(rng.exponential(1.0 / rate))
        if t >= spec.horizon_days:
            break
        length = int(rng.geometric(1.0 / (p.relapse_mean_run * intensity)))
        runs.append((t, length))
        t += length - 1 + p.min_gap

    out = []
    for start, length in runs:
        if start >= spec.horizon_days:
            break
        length = min(length, spec.horizon_days - start)
        out.append(_run(start, length, p.presence, rng))
    return out


def gen_client(spec: CohortSpec, true_class: Label, rng, client_id: str = "") -> ClientHistory:
    """One synthetic history on days ``[0, horizon_days)``.

    Structure that does not fit in the horizon is truncated.
    """
    runs = _client_runs(spec, Label(true_class), rng)
    return ClientHistory(client_id, np.concatenate(runs))


# -- cohorts ------------------------------------------------------------------


class Cohort(Mapping):
    """Linked view: ``agency_id -> AgencyDataset`` keyed by global client ids.

    ``truth`` maps each global client id to the class it was generated from
    and must only be used for evaluation.
    """

    def __init__(self, datasets: dict[str, AgencyDataset], truth: dict[str, Label] | None = None):
        self._datasets = dict(sorted(datasets.items()))
        self.truth = dict(truth or {})

    def __getitem__(self, key):
        return self._datasets[key]

    def __iter__(self):
        return iter(self._datasets)

    def __len__(self):
        return len(self._datasets)

    def n_records(self) -> int:
        return sum(ds.n_stays() for ds in self._datasets.values())


def _agency_weight_matrix(spec: CohortSpec) -> np.ndarray:
    ids = spec.agency_ids
    base = np.array([spec.agency_weights[a] for a in ids], dtype=np.float64)
    rows = []
    for label in Label:
        tilt = spec.class_params.agency_affinity.get(label.name.lower(), {})
        w = base * np.array([tilt.get(a, 1.0) for a in ids])
        if w.sum() <= 0:
            logger.warning("affinity removes every agency for %s; using plain weights", label)
            w = base
        rows.append(w / w.sum())
    return np.array(rows)


def _pick_agencies(primary_w: np.ndarray, base: np.ndarray, n: int, rng) -> np.ndarray:
    """Primary agency from the class-tilted weights, the rest from the base weights."""
    first = int(rng.choice(primary_w.size, p=primary_w))
    if n == 1:
        return np.array([first])
    w = base.copy()
    w[first] = 0.0
    n = min(n - 1, np.count_nonzero(w))
    rest = rng.choice(w.size, size=n, replace=False, p=w / w.sum())
    return np.concatenate([[first], rest])


def _attribute(runs, home: np.ndarray, p: ClassParams, rng) -> list[tuple[int, np.ndarray]]:
    """Split runs into blocks and pick an agency (index into ``home``) per block."""
    if home.size == 1:
        return [(int(home[0]), np.concatenate(runs))]
    blocks = []
    for days in runs:
        span = days[-1] - days[0] + 1
        cuts = []
        pos = int(rng.geometric(1.0 / p.switch_mean_days))
        while pos < span:
            cuts.append(days[0] + pos)
            pos += int(rng.geometric(1.0 / p.switch_mean_days))
        for part in np.split(days, np.searchsorted(days, cuts)):
            if part.size == 0:
                continue
            if rng.random() < p.primary_share:
                j = 0
            else:
                j = 1 + int(rng.integers(home.size - 1))
            blocks.append((int(home[j]), part))
    return blocks


def gen_cohort(spec: CohortSpec) -> Cohort:
    """Generate the linked multi-agency view. Deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    ids = spec.agency_ids
    weights = _agency_weight_matrix(spec)
    base = np.array([spec.agency_weights[a] for a in ids], dtype=np.float64)
    p = spec.class_params
    n_home_p = np.asarray(p.agencies_per_client, dtype=np.float64)
    width = max(6, len(str(max(spec.n_clients - 1, 0))))

    per_agency: dict[str, list[ClientHistory]] = {a: [] for a in ids}
    truth: dict[str, Label] = {}
    for i in range(spec.n_clients):
        cid = f"c{i:0{width}d}"
        label = Label(int(rng.choice(3, p=spec.class_mix)))
        entry = spec.start_day + int(rng.integers(spec.entry_spread_days + 1))
        n_home = min(1 + int(rng.choice(n_home_p.size, p=n_home_p)), len(ids))
        home = _pick_agencies(weights[label], base, n_home, rng)
        intensity = p.agency_intensity.get(ids[home[0]], 1.0)
        runs = [entry + r for r in _client_runs(spec, label, rng, intensity)]
        by_agency: dict[int, list[np.ndarray]] = {}
        for j, days in _attribute(runs, home, p, rng):
            by_agency.setdefault(j, []).append(days)
        for j, parts in by_agency.items():
            per_agency[ids[j]].append(ClientHistory(cid, np.sort(np.concatenate(parts))))
        truth[cid] = label

    datasets = {a: AgencyDataset(a, tuple(hs)) for a, hs in per_agency.items()}
    return Cohort(datasets, truth)


# -- linked / unlinked views -------------------------------------------------


def merge_linked(linked: Mapping[str, AgencyDataset]) -> list[ClientHistory]:
    """Merged per-person histories (the central service's view), sorted by id."""
    days: dict[str, list[np.ndarray]] = {}
    for ds in linked.values():
        for h in ds:
            days.setdefault(h.client_id, []).append(h.stays)
    return [ClientHistory(cid, np.unique(np.concatenate(parts))) for cid, parts in sorted(days.items())]


def primary_agency(linked: Mapping[str, AgencyDataset]) -> dict[str, str]:
    """Agency holding most of each person's stays (ties: earliest, then id)."""
    best: dict[str, tuple] = {}
    for agency_id in sorted(linked):
        for h in linked[agency_id]:
            key = (-len(h), h.first_day, agency_id)
            if h.client_id not in best or key < best[h.client_id]:
                best[h.client_id] = key
    return {cid: key[2] for cid, key in best.items()}


def unlink(linked: Mapping[str, AgencyDataset], return_provenance: bool = False):
    """Per-agency records with fresh, unrelated client ids.

    Every (person, agency) pair becomes its own client. New ids keep the
    relative order of the original ids within an agency. With
    ``return_provenance`` the ``(agency_id, new_id) -> original id`` map is
    returned as well; it is meant for evaluation code only.
    """
    out: dict[str, AgencyDataset] = {}
    provenance: dict[tuple[str, str], str] = {}
    for agency_id in sorted(linked):
        clients = []
        for i, h in enumerate(linked[agency_id].clients):
            new_id = f"{agency_id}-{i:07d}"
            clients.append(ClientHistory(new_id, h.stays))
            provenance[(agency_id, new_id)] = h.client_id
        out[agency_id] = AgencyDataset(agency_id, tuple(clients))
    if return_provenance:
        return out, provenance
    return out
