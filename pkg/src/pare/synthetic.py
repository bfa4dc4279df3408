"""Synthetic interaction logs with planted popularity structure.

Each item's expected distinct-user count in bin ``t`` is

    rate * quality_i * studio_boost * decay(t - release) * season(categories, t)

where ``decay`` rises for one bin after release and then falls off, and each
category follows an annual (12-bin) cosine cycle with its own phase.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .corpus import BIN_SECONDS, Catalog, Corpus, InteractionRecord, ItemRecord, TimeBinning

ORIGIN_TS = 1_293_840_000  # 2011-01-01 UTC


@dataclass
class SyntheticSpec:
    n_users: int = 3000
    n_items: int = 150
    n_bins: int = 36
    n_categories: int = 4
    n_studios: int = 8
    rate: float = 30.0
    quality_sigma: float = 0.15
    studio_sigma: float = 0.8
    season_amp: float = 0.8
    decay_scale: float = 1.5
    floor: float = 0.4
    repeat_prob: float = 0.1   # chance a user logs a second event in the same bin
    seed: int = 0
    bin_seconds: int = BIN_SECONDS
    origin_ts: int = ORIGIN_TS


def decay(age: int, scale: float = 1.5, floor: float = 0.4) -> float:
    """Release curve peaking one bin after release, normalised to 1 at age 0."""
    return max((age + 1) * math.exp(-age / scale), floor)


def season(phases, t: int, amp: float) -> float:
    return float(np.mean([1.0 + amp * math.cos(2 * math.pi * ((t - 1) - p) / 12.0) for p in phases]))


@dataclass
class SyntheticCorpus:
    interactions: List[InteractionRecord]
    item_lines: List[dict]
    expected: Dict[str, np.ndarray]  # item -> expected count per bin (index 0 = bin 1)
    spec: SyntheticSpec

    def catalog(self) -> Catalog:
        fields = ["categories", "studios"]
        vocabs: List[Dict[str, int]] = [{}, {}]
        items = {}
        for obj in self.item_lines:
            sets = []
            for j, name in enumerate(fields):
                sets.append(frozenset(vocabs[j].setdefault(a, len(vocabs[j])) for a in obj[name]))
            items[obj["item_id"]] = ItemRecord(obj["item_id"], obj["release_ts"], sets[0], tuple(sets))
        return Catalog(items, fields, [list(v) for v in vocabs])

    def corpus(self) -> Corpus:
        binning = TimeBinning(self.spec.origin_ts, self.spec.n_bins, self.spec.bin_seconds)
        return Corpus.build(self.interactions, self.catalog(), binning=binning)

    def write(self, directory) -> Tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ipath = directory / "interactions.csv"
        mpath = directory / "items.jsonl"
        ipath.write_text("user_id,item_id,timestamp\n"
                         + "".join(f"{r.user_id},{r.item_id},{r.timestamp}\n" for r in self.interactions))
        mpath.write_text("".join(json.dumps(o, sort_keys=True) + "\n" for o in self.item_lines))
        return ipath, mpath


def generate(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticCorpus:
    rng = np.random.default_rng(spec.seed)
    bs = spec.bin_seconds
    # evenly spread peaks keep the catalogue-wide level roughly flat across the year
    phases = (np.arange(spec.n_categories) * 12.0 / spec.n_categories + rng.uniform(0, 12)) % 12
    studio_boost = rng.lognormal(0.0, spec.studio_sigma, size=spec.n_studios)

    item_lines, expected, events = [], {}, []
    width = len(str(spec.n_items - 1))
    for k in range(spec.n_items):
        iid = f"i{k:0{width}d}"
        rb = int(rng.integers(1, spec.n_bins + 1))
        offset = int(rng.integers(0, bs // 2))
        if k == 0:
            rb, offset = 1, 0
        cats = sorted(set(rng.choice(spec.n_categories, size=int(rng.integers(1, 3)))))
        studio = int(rng.integers(spec.n_studios))
        quality = rng.lognormal(0.0, spec.quality_sigma)
        item_lines.append({
            "item_id": iid,
            "release_ts": spec.origin_ts + (rb - 1) * bs + offset,
            "categories": [f"c{c}" for c in cats],
            "studios": [f"s{studio}"],
        })
        lam = np.zeros(spec.n_bins)
        for t in range(rb, spec.n_bins + 1):
            lam[t - 1] = (spec.rate * quality * studio_boost[studio]
                          * decay(t - rb, spec.decay_scale, spec.floor)
                          * season([phases[c] for c in cats], t, spec.season_amp))
        expected[iid] = lam
        for t in range(rb, spec.n_bins + 1):
            n = min(int(rng.poisson(lam[t - 1])), spec.n_users)
            if n == 0:
                continue
            start = spec.origin_ts + (t - 1) * bs
            lo = (item_lines[-1]["release_ts"] - start) if t == rb else 0
            for u in rng.choice(spec.n_users, size=n, replace=False):
                reps = 2 if rng.random() < spec.repeat_prob else 1
                for _ in range(reps):
                    events.append((f"u{int(u)}", iid, start + int(rng.integers(max(lo, 0), bs))))
    # pin the binning: earliest event at the origin, latest in the final bin
    events.append(("u0", item_lines[0]["item_id"], spec.origin_ts))
    events.append(("u0", item_lines[0]["item_id"], spec.origin_ts + spec.n_bins * bs - 1))
    events.sort(key=lambda e: (e[2], e[0], e[1]))
    inter = [InteractionRecord(u, i, ts) for u, i, ts in events]
    return SyntheticCorpus(inter, item_lines, expected, spec)


@dataclass
class MixtureScores:
    external: Dict[str, Dict[str, float]]  # user -> item -> personalised score
    popularity: Dict[str, float]           # item -> predicted popularity
    truth: Dict[str, set]                  # user -> relevant items


def mixture_scores(n_users: int = 300, n_items: int = 120, n_popular: int = 12, n_distract: int = 12,
                   seed: int = 0) -> MixtureScores:
    """Score sources that are each misleading alone but complementary.

    Every user has one relevant item.  The personalised source ranks a few
    user-specific distractors above it; the popularity source ranks a few
    globally popular, never-relevant items above it.  Only the relevant item
    scores well under both, so a mix of the two should beat either one.
    """
    rng = np.random.default_rng(seed)
    items = [f"m{k:03d}" for k in range(n_items)]
    popular = items[:n_popular]
    rest = items[n_popular:]
    truth_pool = rest[: len(rest) // 2]
    filler = rest[len(rest) // 2:]
    pop = {i: float(rng.uniform(0.85, 1.0)) for i in popular}
    pop.update({i: float(rng.uniform(0.55, 0.8)) for i in truth_pool})
    pop.update({i: float(rng.uniform(0.0, 0.3)) for i in filler})
    external, truth = {}, {}
    for k in range(n_users):
        u = f"u{k}"
        g = truth_pool[int(rng.integers(len(truth_pool)))]
        distract = rng.choice(filler, size=n_distract, replace=False)
        per = {i: float(rng.uniform(0.0, 0.3)) for i in rng.choice(items, size=20, replace=False)}
        per.update({i: float(rng.uniform(0.85, 1.0)) for i in distract})
        per[g] = float(rng.uniform(0.55, 0.8))
        external[u] = per
        truth[u] = {g}
    return MixtureScores(external, pop, truth)
