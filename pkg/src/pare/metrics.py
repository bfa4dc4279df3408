"""Top-N accuracy metrics with binary relevance and multi-item ground truth.

For a user with relevant set ``G`` and top-N list ``L``:

    precision = |L & G| / N          recall = |L & G| / |G|
    hr        = 1 if any hit         mrr    = 1 / rank of first hit (0 if none)
    ndcg      = sum_{hits at rank r} 1/log2(r+1)  /  sum_{r <= min(N, |G|)} 1/log2(r+1)

Values are averaged over users with a non-empty ``G``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Sequence, Union

from .ranker import RankedList

CUTOFFS = (1, 3, 5, 7, 10)
METRICS = ("precision", "recall", "hr", "mrr", "ndcg")


@dataclass
class MetricsReport:
    values: Dict[int, Dict[str, float]]
    users: int

    def at(self, n: int) -> Dict[str, float]:
        return self.values[n]

    def rows(self, label: str = "") -> list:
        return [[label, n, *(self.values[n][m] for m in METRICS)] for n in sorted(self.values)]

    def table(self, label: str = "method") -> str:
        head = "method\tN\t" + "\t".join(METRICS)
        body = ["\t".join([str(r[0]), str(r[1])] + [f"{v:.4f}" for v in r[2:]]) for r in self.rows(label)]
        return "\n".join([head] + body)


def _user_metrics(items: Sequence[str], truth: set, n: int) -> Dict[str, float]:
    top = items[:n]
    dcg = 0.0
    first = 0
    hits = 0
    for r, iid in enumerate(top, start=1):
        if iid in truth:
            hits += 1
            dcg += 1.0 / math.log2(r + 1)
            if not first:
                first = r
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(n, len(truth)) + 1))
    return {
        "precision": hits / n,
        "recall": hits / len(truth),
        "hr": 1.0 if hits else 0.0,
        "mrr": 1.0 / first if first else 0.0,
        "ndcg": dcg / idcg,
    }


def evaluate(ranked: Union[RankedList, Mapping[str, RankedList]], truth: Mapping[str, Iterable[str]],
             cutoffs: Sequence[int] = CUTOFFS) -> MetricsReport:
    """Mean metrics over users; ``ranked`` is one global list or a per-user mapping."""
    users = sorted(u for u, g in truth.items() if g)
    if not users:
        raise ValueError("ground truth has no evaluable users")
    sums = {n: dict.fromkeys(METRICS, 0.0) for n in cutoffs}
    for u in users:
        g = set(truth[u])
        lst = ranked if isinstance(ranked, RankedList) else ranked.get(u)
        items = lst.items if lst is not None else []
        for n in cutoffs:
            for k, v in _user_metrics(items, g, n).items():
                sums[n][k] += v
    return MetricsReport({n: {k: v / len(users) for k, v in s.items()} for n, s in sums.items()}, len(users))


def overlap_count(a: RankedList, b: RankedList, n: int) -> int:
    return len(set(a.items[:n]) & set(b.items[:n]))
