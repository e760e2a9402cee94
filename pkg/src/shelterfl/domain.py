"""Core data types shared across the package.

Dates are integer day numbers (days since 1970-01-01). Every type here is
treated as immutable once built; array fields are flagged read-only.
"""

from __future__ import annotations

import datetime as _dt
import enum
from dataclasses import dataclass, field, fields
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

EPOCH = _dt.date(1970, 1, 1)

#: Hidden layer widths of the prediction network.
HIDDEN_SIZES = (512, 128, 16)
N_CLASSES = 3


class Label(enum.IntEnum):
    """Shelter-use pattern. Integer order fixes confusion-matrix axes."""

    TRANSITIONAL = 0
    EPISODIC = 1
    CHRONIC = 2

    @classmethod
    def parse(cls, text: str) -> "Label":
        return cls[text.strip().upper()]

    def __str__(self) -> str:
        return self.name.lower()


def day_from_iso(text: str) -> int:
    return (_dt.date.fromisoformat(text.strip()) - EPOCH).days


def day_to_iso(day: int) -> str:
    return (EPOCH + _dt.timedelta(days=int(day))).isoformat()


def _frozen_int_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.int64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StayRecord:
    client_id: str
    agency_id: str
    date: int

    def __post_init__(self):
        if not self.client_id or not self.agency_id:
            raise ValueError("client_id and agency_id must be non-empty")
        if not isinstance(self.date, (int, np.integer)):
            raise TypeError(f"date must be an integer day, got {self.date!r}")


@dataclass(frozen=True, eq=False)
class ClientHistory:
    """Sorted, de-duplicated sleep days of one client."""

    client_id: str
    stays: np.ndarray

    def __post_init__(self):
        stays = _frozen_int_array(self.stays)
        if stays.size == 0:
            raise ValueError(f"client {self.client_id!r} has no stays")
        if np.any(np.diff(stays) <= 0):
            raise ValueError("stays must be strictly increasing")
        object.__setattr__(self, "stays", stays)

    @classmethod
    def from_days(cls, client_id: str, days: Iterable[int]) -> "ClientHistory":
        """Build from unordered days; repeated days collapse to one sleep-day."""
        return cls(client_id, np.unique(np.fromiter(days, dtype=np.int64)))

    @property
    def first_day(self) -> int:
        return int(self.stays[0])

    def __len__(self) -> int:
        return int(self.stays.size)

    def __eq__(self, other):
        if not isinstance(other, ClientHistory):
            return NotImplemented
        return self.client_id == other.client_id and np.array_equal(self.stays, other.stays)

    def __hash__(self):
        return hash((self.client_id, self.stays.tobytes()))


@dataclass(frozen=True)
class AgencyDataset:
    """One agency's horizontal partition of client histories."""

    agency_id: str
    clients: tuple[ClientHistory, ...] = ()

    def __post_init__(self):
        clients = tuple(sorted(self.clients, key=lambda h: h.client_id))
        ids = [h.client_id for h in clients]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate client ids in agency {self.agency_id!r}")
        object.__setattr__(self, "clients", clients)

    @property
    def m(self) -> int:
        return len(self.clients)

    def __len__(self) -> int:
        return len(self.clients)

    def __iter__(self) -> Iterator[ClientHistory]:
        return iter(self.clients)

    def records(self) -> Iterator[StayRecord]:
        for h in self.clients:
            for d in h.stays:
                yield StayRecord(h.client_id, self.agency_id, int(d))

    def n_stays(self) -> int:
        return sum(len(h) for h in self.clients)


class StayTuple(NamedTuple):
    """(total stays, total episodes) inside the prediction window."""

    n_stays: int
    n_episodes: int


@dataclass(frozen=True)
class WindowConfig:
    observation_days: int = 90
    n_bins: int = 10
    prediction_days: int = 548
    episode_gap: int = 30

    def __post_init__(self):
        for name in ("observation_days", "n_bins", "prediction_days", "episode_gap"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.observation_days > self.prediction_days:
            raise ValueError("observation window cannot exceed the prediction window")

    @property
    def n_features(self) -> int:
        return self.n_bins + 2


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Raw (unnormalized) features: bin counts, total stays, total episodes."""

    values: np.ndarray
    client_id: str
    agency_id: str
    label: Label | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size < 3:
            raise ValueError("feature vector needs at least one bin plus two totals")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_bins(self) -> int:
        return self.values.size - 2

    def with_label(self, label: Label) -> "FeatureVector":
        return FeatureVector(self.values, self.client_id, self.agency_id, Label(label))

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (
            self.client_id == other.client_id
            and self.agency_id == other.agency_id
            and self.label == other.label
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class LabelCentroids:
    """Role-tagged cluster centres in (stays, episodes) space."""

    chronic: tuple[float, float]
    episodic: tuple[float, float]
    transitional: tuple[float, float]

    def __post_init__(self):
        for role in ("chronic", "episodic", "transitional"):
            object.__setattr__(self, role, tuple(float(v) for v in getattr(self, role)))
        pts = [self.chronic, self.episodic, self.transitional]
        if len(set(pts)) != 3:
            raise ValueError("label centroids must be pairwise distinct")
        if self.chronic[0] < max(self.episodic[0], self.transitional[0]):
            raise ValueError("chronic centroid must have the largest stay count")
        if self.episodic[1] < self.transitional[1]:
            raise ValueError("episodic centroid must have more episodes than transitional")

    def as_array(self) -> np.ndarray:
        """3x2 array ordered by Label (transitional, episodic, chronic)."""
        return np.array([self.transitional, self.episodic, self.chronic], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "LabelCentroids":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(chronic=tuple(arr[2]), episodic=tuple(arr[1]), transitional=tuple(arr[0]))

    def to_dict(self) -> dict:
        return {
            "transitional": list(self.transitional),
            "episodic": list(self.episodic),
            "chronic": list(self.chronic),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelCentroids":
        return cls(chronic=d["chronic"], episodic=d["episodic"], transitional=d["transitional"])


class ModelParameters:
    """Ordered (weight, bias) pairs of a dense network.

    Weights are stored ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.
    """

    __slots__ = ("layers",)

    def __init__(self, layers: Sequence[tuple[np.ndarray, np.ndarray]]):
        checked = []
        prev = None
        for w, b in layers:
            w = np.asarray(w)
            b = np.asarray(b)
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
                raise ValueError(f"bad layer shapes {w.shape} / {b.shape}")
            if prev is not None and w.shape[0] != prev:
                raise ValueError("consecutive layer shapes do not chain")
            prev = w.shape[1]
            checked.append((w, b))
        if not checked:
            raise ValueError("a model needs at least one layer")
        self.layers = checked

    @property
    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        return [(w.shape, b.shape) for w, b in self.layers]

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.layers[0][0].shape[0],) + tuple(w.shape[1] for w, _ in self.layers)

    @property
    def dtype(self):
        return self.layers[0][0].dtype

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "ModelParameters":
        it = iter(arrays)
        return cls(list(zip(it, it)))

    def copy(self) -> "ModelParameters":
        return ModelParameters([(w.copy(), b.copy()) for w, b in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vec: np.ndarray) -> "ModelParameters":
        """Parameters with this object's shapes filled from ``vec``."""
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[pos : pos + a.size], dtype=a.dtype).reshape(a.shape).copy())
            pos += a.size
        if pos != vec.size:
            raise ValueError("vector length does not match parameter count")
        return ModelParameters.from_arrays(out)

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def same_shape(self, other: "ModelParameters") -> bool:
        return self.shapes == other.shapes

    def __eq__(self, other):
        if not isinstance(other, ModelParameters):
            return NotImplemented
        return self.same_shape(other) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )

    __hash__ = None

    def __repr__(self):
        return f"ModelParameters(sizes={self.sizes})"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    batch_size: int = 500
    epochs: int = 200
    dropout_rates: tuple[float, ...] = (0.4, 0.2, 0.1)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    output_activation: str = "softmax"
    # 0 keeps one Adam state for the whole call; k>0 restarts it every k epochs
    optimizer_reset_every: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "dropout_rates", tuple(float(r) for r in self.dropout_rates))
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.output_activation not in ("softmax", "sigmoid-normalized"):
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")


@dataclass(frozen=True)
class FedConfig:
    rounds: int = 75
    local_epochs: int = 15
    agencies: tuple[str, ...] = ()
    # "global" pools per-agency moments at the server; "local" keeps per-agency stats
    normalization: str = "global"

    def __post_init__(self):
        object.__setattr__(self, "agencies", tuple(self.agencies))
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")
        if self.normalization not in ("global", "local"):
            raise ValueError("normalization must be 'global' or 'local'")


def to_record(cfg) -> dict:
    """Plain-dict form of a config dataclass (tuples become lists)."""
    return {f.name: list(v) if isinstance(v := getattr(cfg, f.name), tuple) else v for f in fields(cfg)}


def from_record(cls, record: dict):
    """Inverse of :func:`to_record`; unknown keys are an error."""
    names = {f.name for f in fields(cls)}
    unknown = set(record) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in record.items()})
