"""Stay-record and truth-sidecar files.

A stay-record file is UTF-8 CSV with the header ``client_id,agency_id,date``
and one sleep-day per line (ISO-8601 day). Several records for one client on
the same day and agency collapse to a single stay.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from pathlib import Path
from typing import Mapping

import numpy as np

from .domain import AgencyDataset, ClientHistory, Label, day_from_iso, day_to_iso

logger = logging.getLogger(__name__)

STAY_HEADER = ("client_id", "agency_id", "date")
TRUTH_HEADER = ("client_id", "true_class")


class FormatError(ValueError):
    pass


def write_stay_records(path, datasets: Mapping[str, AgencyDataset]) -> int:
    """Write every stay, agencies in id order, clients in dataset order.

    Returns the number of records written.
    """
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STAY_HEADER)
        for agency_id in sorted(datasets):
            for h in datasets[agency_id]:
                for day in h.stays.tolist():
                    w.writerow((h.client_id, agency_id, day_to_iso(day)))
                    n += 1
    return n


def read_stay_records(path) -> dict[str, AgencyDataset]:
    days: dict[str, dict[str, list[int]]] = defaultdict(lambda: defaultdict(list))
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(c.strip() for c in header) != STAY_HEADER:
            raise FormatError(f"{path}: expected header {','.join(STAY_HEADER)}")
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            client_id, agency_id, date = (c.strip() for c in row)
            if not client_id or not agency_id:
                raise FormatError(f"{path}:{lineno}: empty client or agency id")
            try:
                day = day_from_iso(date)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad date {date!r}") from exc
            days[agency_id][client_id].append(day)
    out = {}
    for agency_id in sorted(days):
        clients = tuple(
            ClientHistory(cid, np.unique(np.asarray(d, dtype=np.int64)))
            for cid, d in sorted(days[agency_id].items())
        )
        out[agency_id] = AgencyDataset(agency_id, clients)
    return out


def write_truth(path, truth: Mapping[str, Label]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for cid in sorted(truth):
            w.writerow((cid, str(Label(truth[cid]))))


def read_truth(path) -> dict[str, Label]:
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(c.strip() for c in header) != TRUTH_HEADER:
            raise FormatError(f"{path}: expected header {','.join(TRUTH_HEADER)}")
        out = {}
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            try:
                out[row[0].strip()] = Label.parse(row[1].strip())
            except (IndexError, ValueError, KeyError) as exc:
                raise FormatError(f"{path}:{lineno}: bad truth row {row!r}") from exc
    return out


def drop_short_followup(
    datasets: Mapping[str, AgencyDataset], prediction_days: int, dataset_end: int | None = None
) -> tuple[dict[str, AgencyDataset], int]:
    """Remove clients whose first stay is later than ``dataset_end - prediction_days``.

    Such clients have not been observed long enough for their label to be
    meaningful. A client id seen at several agencies is judged by its
    earliest stay anywhere. ``dataset_end`` defaults to the last day in the
    data. Returns the filtered datasets and the number of clients removed.
    """
    first: dict[str, int] = {}
    last = None
    for ds in datasets.values():
        for h in ds:
            first[h.client_id] = min(first.get(h.client_id, h.first_day), h.first_day)
            last = int(h.stays[-1]) if last is None else max(last, int(h.stays[-1]))
    if last is None:
        return {a: ds for a, ds in datasets.items()}, 0
    end = last if dataset_end is None else int(dataset_end)
    cutoff = end - int(prediction_days)
    dropped = {cid for cid, d in first.items() if d > cutoff}
    out = {
        a: AgencyDataset(a, tuple(h for h in ds if h.client_id not in dropped))
        for a, ds in sorted(datasets.items())
    }
    if dropped:
        logger.info("dropped %d clients with less than %d days of follow-up", len(dropped), prediction_days)
    return out, len(dropped)


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
