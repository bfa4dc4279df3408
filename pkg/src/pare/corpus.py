"""Interaction/item ingestion, time binning and per-item popularity series."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

BIN_SECONDS = 30 * 24 * 3600


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise DataError("user_id and item_id must be non-empty")
        if self.timestamp <= 0:
            raise DataError(f"timestamp must be positive, got {self.timestamp}")


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    release_ts: Optional[int]
    categories: frozenset
    # field 0 is the category set; remaining fields follow the catalog schema
    side_info: Tuple[frozenset, ...]


@dataclass
class Catalog:
    items: Dict[str, ItemRecord]
    fields: List[str]             # side-info field names, fields[0] == "categories"
    vocabs: List[List[str]]       # attribute names per field, index = attribute id
    missing_release: List[str] = field(default_factory=list)

    @property
    def num_categories(self) -> int:
        return len(self.vocabs[0])

    @property
    def field_sizes(self) -> List[int]:
        return [len(v) for v in self.vocabs]

    def multi_hot(self, item_id: str, field_index: int = 0) -> np.ndarray:
        vec = np.zeros(len(self.vocabs[field_index]))
        for j in self.items[item_id].side_info[field_index]:
            vec[j] = 1.0
        return vec


@dataclass(frozen=True)
class TimeBinning:
    origin_ts: int
    num_bins: int
    bin_seconds: int = BIN_SECONDS

    def __post_init__(self):
        if self.bin_seconds <= 0:
            raise DataError("bin_seconds must be positive")

    def bin_of(self, ts: int) -> int:
        return (int(ts) - self.origin_ts) // self.bin_seconds + 1

    def bin_start(self, b: int) -> int:
        return self.origin_ts + (b - 1) * self.bin_seconds

    def calendar_month(self, b: int) -> int:
        """Calendar month (1..12, UTC) of the midpoint of bin ``b``."""
        mid = self.bin_start(b) + self.bin_seconds // 2
        return dt.datetime.fromtimestamp(mid, tz=dt.timezone.utc).month

    @classmethod
    def from_interactions(cls, interactions: Sequence[InteractionRecord], bin_seconds: int = BIN_SECONDS):
        if not interactions:
            raise DataError("cannot bin an empty interaction log")
        lo = min(r.timestamp for r in interactions)
        hi = max(r.timestamp for r in interactions)
        return cls(origin_ts=lo, num_bins=(hi - lo) // bin_seconds + 1, bin_seconds=bin_seconds)


@dataclass(frozen=True)
class PopularitySeries:
    item_id: str
    release_bin: int
    counts: Tuple[int, ...]  # counts[k] is the popularity of bin release_bin + k

    def at(self, b: int) -> int:
        k = b - self.release_bin
        if k < 0 or k >= len(self.counts):
            raise IndexError(f"bin {b} outside series of {self.item_id} ({self.release_bin}..{self.last_bin})")
        return self.counts[k]

    def history(self, T: int) -> np.ndarray:
        """Popularity over bins ``release_bin .. T-1``."""
        if T < self.release_bin:
            raise ValueError(f"item {self.item_id} is not released by bin {T} (release bin {self.release_bin})")
        return np.asarray(self.counts[: T - self.release_bin], dtype=np.float64)

    @property
    def last_bin(self) -> int:
        return self.release_bin + len(self.counts) - 1


@dataclass(frozen=True)
class SplitSpec:
    train_end_bin: int
    valid_bin: int
    test_bin: int
    counts: Tuple[int, int, int] = (0, 0, 0)  # interactions in train / validation / test

    def region(self, b: int) -> str:
        if 1 <= b <= self.train_end_bin:
            return "train"
        if b == self.valid_bin:
            return "valid"
        if b == self.test_bin:
            return "test"
        raise ValueError(f"bin {b} outside [1, {self.test_bin}]")


# ------------------------------------------------------------- ingestion

def _is_int(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def load_interactions(path, strict: bool = True, stats: Optional[dict] = None) -> List[InteractionRecord]:
    """Read ``user_id,item_id,timestamp`` lines.

    A first line whose timestamp field is not an integer is taken as a
    header.  Malformed lines raise (strict) or are skipped and counted in
    ``stats["skipped"]`` when a dict is passed.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"interactions file not found: {path}")
    records = []
    skipped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and len(row) == 3 and not _is_int(row[2].strip()):
                continue
            try:
                if len(row) != 3:
                    raise DataError(f"expected 3 fields, got {len(row)}")
                ts = row[2].strip()
                if not _is_int(ts):
                    raise DataError(f"non-integer timestamp {ts!r}")
                records.append(InteractionRecord(row[0].strip(), row[1].strip(), int(ts)))
            except DataError as exc:
                if strict:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
                skipped += 1
    if skipped:
        log.warning("skipped %d malformed lines in %s", skipped, path)
    log.info("loaded %d interactions from %s", len(records), path)
    if stats is not None:
        stats.update(loaded=len(records), skipped=skipped)
    return records


def load_items(path, schema: Optional[Sequence[str]] = None) -> Catalog:
    """Read one JSON object per line and build category/attribute vocabularies.

    ``schema`` lists the side-info fields after ``categories``; ``None``
    takes every list-valued key found in the file, sorted by name.
    Vocabularies are ordered by first appearance.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"items file not found: {path}")
    raw = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or not obj.get("item_id"):
                raise DataError(f"{path}:{lineno}: record without item_id")
            raw.append(obj)

    seen_keys = set()
    for obj in raw:
        seen_keys.update(k for k, v in obj.items() if isinstance(v, list))
    if schema is None:
        schema = sorted(seen_keys - {"categories"})
    for name in schema:
        if name == "categories" or name not in seen_keys:
            raise DataError(f"unknown side-info field {name!r} in {path}")
    fields = ["categories", *schema]

    vocabs: List[Dict[str, int]] = [dict() for _ in fields]
    items: Dict[str, ItemRecord] = {}
    missing = []
    for obj in raw:
        iid = str(obj["item_id"])
        if iid in items:
            raise DataError(f"duplicate item_id {iid!r} in {path}")
        sets = []
        for j, name in enumerate(fields):
            ids = set()
            for attr in obj.get(name) or []:
                ids.add(vocabs[j].setdefault(str(attr), len(vocabs[j])))
            sets.append(frozenset(ids))
        rts = obj.get("release_ts")
        if rts is None:
            missing.append(iid)
        items[iid] = ItemRecord(iid, None if rts is None else int(rts), sets[0], tuple(sets))
    if missing:
        log.info("%d items lack release_ts; release bin falls back to first interaction", len(missing))
    return Catalog(items=items, fields=fields, vocabs=[list(v) for v in vocabs], missing_release=missing)


# ---------------------------------------------------------------- series

@dataclass
class SeriesReport:
    orphans: int = 0
    dropped_items: List[str] = field(default_factory=list)


def build_series(interactions: Iterable[InteractionRecord], catalog: Catalog, binning: TimeBinning,
                 report: Optional[SeriesReport] = None) -> Dict[str, PopularitySeries]:
    """Distinct-user counts per item and bin, zero-filled from release to the last bin."""
    report = report if report is not None else SeriesReport()
    users: Dict[str, Dict[int, set]] = defaultdict(lambda: defaultdict(set))
    for r in interactions:
        if r.item_id not in catalog.items:
            report.orphans += 1
            continue
        users[r.item_id][binning.bin_of(r.timestamp)].add(r.user_id)

    T = binning.num_bins
    out = {}
    for iid in sorted(catalog.items):
        rec = catalog.items[iid]
        per_bin = users.get(iid, {})
        first = min(per_bin) if per_bin else None
        if rec.release_ts is not None:
            rb = max(1, binning.bin_of(rec.release_ts))
            if first is not None:
                rb = min(rb, first)
        elif first is not None:
            rb = first
        else:
            report.dropped_items.append(iid)
            continue
        counts = tuple(len(per_bin.get(b, ())) for b in range(rb, T + 1))
        out[iid] = PopularitySeries(iid, rb, counts)
    if report.orphans:
        log.warning("%d interactions reference items missing from the catalog", report.orphans)
    return out


def split_global(binning: TimeBinning, interactions: Iterable[InteractionRecord] = ()) -> SplitSpec:
    T = binning.num_bins
    if T < 3:
        raise DataError(f"need at least 3 time bins for a train/validation/test split, got {T}")
    n = [0, 0, 0]
    for r in interactions:
        b = binning.bin_of(r.timestamp)
        n[0 if b <= T - 2 else (1 if b == T - 1 else 2)] += 1
    return SplitSpec(T - 2, T - 1, T, tuple(n))


def popularity_profile(series: Dict[str, PopularitySeries], mode: str = "since-release",
                       catalog: Optional[Catalog] = None, binning: Optional[TimeBinning] = None,
                       category: Optional[str] = None, last_bin: Optional[int] = None):
    """Mean popularity by item age, or by calendar month for one category.

    Returns a list of ``(index, mean)`` pairs; the index is the age in bins
    (since-release) or the calendar month 1..12.  ``last_bin`` limits the
    bins considered (defaults to every bin of each series).
    """
    if not series:
        raise ValueError("empty series")
    sums: Dict[int, float] = defaultdict(float)
    ns: Dict[int, int] = defaultdict(int)
    if mode == "since-release":
        for s in series.values():
            for age, c in enumerate(s.counts):
                if last_bin is not None and s.release_bin + age > last_bin:
                    break
                sums[age] += c
                ns[age] += 1
    elif mode == "calendar-month-by-category":
        if catalog is None or binning is None:
            raise ValueError("calendar mode needs the catalog and the binning")
        try:
            cid = catalog.vocabs[0].index(category)
        except ValueError:
            raise DataError(f"unknown category {category!r}") from None
        for iid, s in series.items():
            if cid not in catalog.items[iid].categories:
                continue
            for k, c in enumerate(s.counts):
                b = s.release_bin + k
                if last_bin is not None and b > last_bin:
                    break
                month = binning.calendar_month(b)
                sums[month] += c
                ns[month] += 1
    else:
        raise ValueError(f"unknown profile mode {mode!r}")
    return [(k, sums[k] / ns[k]) for k in sorted(ns)]


# ---------------------------------------------------------------- Corpus

@dataclass
class Corpus:
    """Everything derived from one interactions file plus one items file."""
    interactions: List[InteractionRecord]
    catalog: Catalog
    binning: TimeBinning
    series: Dict[str, PopularitySeries]
    split: SplitSpec
    report: SeriesReport

    @classmethod
    def build(cls, interactions, catalog, bin_seconds=BIN_SECONDS, binning=None):
        binning = binning or TimeBinning.from_interactions(interactions, bin_seconds)
        report = SeriesReport()
        series = build_series(interactions, catalog, binning, report)
        known = [r for r in interactions if r.item_id in catalog.items]
        return cls(list(interactions), catalog, binning, series, split_global(binning, known), report)

    @classmethod
    def from_files(cls, interactions_path, items_path, schema=None, bin_seconds=BIN_SECONDS, strict=True):
        return cls.build(load_interactions(interactions_path, strict=strict),
                         load_items(items_path, schema), bin_seconds)

    @property
    def item_ids(self) -> List[str]:
        return sorted(self.series)

    @property
    def item_index(self) -> Dict[str, int]:
        return {iid: k for k, iid in enumerate(self.item_ids)}

    def user_items_in_bin(self, b: int) -> Dict[str, set]:
        out: Dict[str, set] = defaultdict(set)
        for r in self.interactions:
            if r.item_id in self.series and self.binning.bin_of(r.timestamp) == b:
                out[r.user_id].add(r.item_id)
        return dict(out)

    def stats(self) -> Dict[str, int]:
        users = {r.user_id for r in self.interactions if r.item_id in self.catalog.items}
        return {
            "users": len(users),
            "items": len(self.series),
            "train": self.split.counts[0],
            "validate": self.split.counts[1],
            "test": self.split.counts[2],
        }

    def to_json(self) -> dict:
        return {
            "binning": {"origin_ts": self.binning.origin_ts, "num_bins": self.binning.num_bins,
                        "bin_seconds": self.binning.bin_seconds},
            "split": {"train_end_bin": self.split.train_end_bin, "valid_bin": self.split.valid_bin,
                      "test_bin": self.split.test_bin, "counts": list(self.split.counts)},
            "fields": self.catalog.fields,
            "vocabs": self.catalog.vocabs,
            "series": {iid: {"release_bin": s.release_bin, "counts": list(s.counts)}
                       for iid, s in sorted(self.series.items())},
            "orphans": self.report.orphans,
        }
