"""Top-N lists from predicted popularity, and the Cutoff-TopPop baselines."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from .corpus import Corpus, DataError
from .model import PareConfig, predict_batch
from .numerics import ParamStore

WINDOWS = (3, 6, 12, "ALL")


@dataclass(frozen=True)
class RankedList:
    entries: Tuple[Tuple[str, float], ...]
    n: int
    short: bool = False  # fewer than n candidates were available

    @property
    def items(self) -> List[str]:
        return [i for i, _ in self.entries]

    def __len__(self):
        return len(self.entries)

    def lines(self) -> List[str]:
        return [f"{r},{iid},{score!r}" for r, (iid, score) in enumerate(self.entries, start=1)]


def top_n(scores: Dict[str, float], n: int, exclude: Iterable[str] = ()) -> RankedList:
    """First ``n`` items by descending score, ties broken by ascending item id."""
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    skip = set(exclude)
    ranked = sorted(((i, float(s)) for i, s in scores.items() if i not in skip), key=lambda e: (-e[1], e[0]))
    return RankedList(tuple(ranked[:n]), n, short=len(ranked) < n)


def score_all(params: ParamStore, corpus: Corpus, T: int, config: PareConfig) -> Dict[str, float]:
    """Fused prediction at bin ``T`` for every item released by ``T``."""
    pairs = [(iid, T) for iid in corpus.item_ids if corpus.series[iid].release_bin <= T]
    if not pairs:
        raise DataError(f"no item is released by bin {T}")
    return {p.item_id: p.y_F for p in predict_batch(params, corpus, pairs, config)}


def window_bins(T: int, window: Union[int, str]) -> Tuple[int, int]:
    if window == "ALL":
        lo = 1
    else:
        w = int(window)
        if w < 1:
            raise ValueError(f"window must be >= 1 month, got {window}")
        lo = max(1, T - w)
    hi = T - 1
    if hi < lo:
        raise DataError(f"empty TopPop window before bin {T}")
    return lo, hi


def toppop_scores(corpus: Corpus, T: int, window: Union[int, str]) -> Dict[str, float]:
    lo, hi = window_bins(T, window)
    out = {}
    for iid, s in corpus.series.items():
        a, b = max(lo, s.release_bin), min(hi, s.last_bin)
        out[iid] = float(sum(s.counts[a - s.release_bin: b - s.release_bin + 1])) if a <= b else 0.0
    return out


def cutoff_toppop(corpus: Corpus, T: int, window: Union[int, str], n: Optional[int] = None) -> RankedList:
    """Items ranked by distinct-user counts summed over the trailing window (one month = one bin)."""
    scores = toppop_scores(corpus, T, window)
    return top_n(scores, n or len(scores))


def parse_window(text: str) -> Union[int, str]:
    return "ALL" if str(text).upper() == "ALL" else int(text)


def write_ranked(ranked: RankedList, path):
    Path(path).write_text("rank,item_id,score\n" + "".join(line + "\n" for line in ranked.lines()))


def read_ranked(path) -> RankedList:
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        _, iid, score = line.split(",")
        rows.append((iid, float(score)))
    return RankedList(tuple(rows), len(rows))
