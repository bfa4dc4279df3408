"""Mixing predicted popularity with an external recommender's per-user scores.

    s_new(u, i) = beta * s(u, i) + (1 - beta) * popularity(i)

An item missing from one source takes 0 from that source.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

from .corpus import DataError
from .metrics import MetricsReport, evaluate
from .ranker import RankedList, top_n

log = logging.getLogger(__name__)

BETA_GRID = tuple(round(0.1 * k, 1) for k in range(11))


@dataclass
class ExternalScores:
    scores: Dict[str, Dict[str, float]]  # user -> item -> score
    source: str = "external"
    duplicates: int = 0

    @property
    def users(self):
        return sorted(self.scores)

    def __len__(self):
        return sum(len(v) for v in self.scores.values())


def load_scores(path, source: Optional[str] = None) -> ExternalScores:
    """Read ``user_id,item_id,score`` lines; repeated pairs keep the last score."""
    path = Path(path)
    scores: Dict[str, Dict[str, float]] = {}
    dup = 0
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            u, i, raw = (x.strip() for x in row)
            if lineno == 1 and [u, i, raw] == ["user_id", "item_id", "score"]:
                continue
            try:
                s = float(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed score {raw!r}") from None
            if not math.isfinite(s):
                raise DataError(f"{path}:{lineno}: non-finite score {raw!r}")
            per = scores.setdefault(u, {})
            if i in per:
                dup += 1
            per[i] = s
    if dup:
        log.warning("%d duplicate (user, item) pairs in %s; kept the last", dup, path)
    if not scores:
        raise DataError(f"no scores in {path}")
    return ExternalScores(scores, source or path.stem, dup)


def _minmax(values: Mapping[str, float]) -> Dict[str, float]:
    if not values:
        return {}
    lo, hi = min(values.values()), max(values.values())
    span = hi - lo
    return {k: (v - lo) / span if span > 0 else 0.0 for k, v in values.items()}


def blend_scores(external: ExternalScores, pare_scores: Mapping[str, float], beta: float,
                 normalize: bool = False) -> Dict[str, Dict[str, float]]:
    """Per-user blended scores over external items plus every popularity-scored item.

    ``normalize`` min-max scales the popularity scores once and each user's
    external scores separately before mixing.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    pop = _minmax(pare_scores) if normalize else dict(pare_scores)
    out = {}
    for u, per in external.scores.items():
        ext = _minmax(per) if normalize else per
        cand = set(ext) | set(pop)
        out[u] = {i: beta * ext.get(i, 0.0) + (1.0 - beta) * pop.get(i, 0.0) for i in cand}
    return out


def blend_rankings(external: ExternalScores, pare_scores: Mapping[str, float], beta: float, n: int,
                   normalize: bool = False, seen: Optional[Mapping[str, set]] = None) -> Dict[str, RankedList]:
    blended = blend_scores(external, pare_scores, beta, normalize)
    seen = seen or {}
    return {u: top_n(s, n, exclude=seen.get(u, ())) for u, s in blended.items()}


def beta_sweep(external: ExternalScores, pare_scores: Mapping[str, float], truth, betas: Sequence[float] = BETA_GRID,
               cutoffs: Sequence[int] = (1, 3, 5, 7, 10), normalize: bool = False,
               seen: Optional[Mapping[str, set]] = None) -> Dict[float, MetricsReport]:
    """Evaluate the blended per-user lists at each beta.

    Users in ``truth`` without external scores are evaluated on the
    popularity ranking alone (their external contribution is 0).
    """
    if not betas:
        raise ValueError("empty beta grid")
    n = max(cutoffs)
    fallback = ExternalScores({u: {} for u in truth if u not in external.scores})
    merged = ExternalScores({**external.scores, **fallback.scores}, external.source)
    return {float(b): evaluate(blend_rankings(merged, pare_scores, b, n, normalize, seen), truth, cutoffs)
            for b in betas}


def sweep_plot_rows(sweep: Mapping[float, MetricsReport], n: int = 10) -> Sequence[Tuple[float, float]]:
    return [(b, rep.at(n)["hr"]) for b, rep in sorted(sweep.items())]
