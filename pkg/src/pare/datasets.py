"""Public review dumps as implicit-feedback corpora.

Each review counts as one interaction ``(reviewerID, asin, unixReviewTime)``.
Lines may be strict JSON or the Python-literal format of older dumps;
``.gz`` files are read transparently.
"""
from __future__ import annotations

import ast
import gzip
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterator, List, Optional

from .corpus import BIN_SECONDS, Catalog, Corpus, DataError, InteractionRecord, ItemRecord

log = logging.getLogger(__name__)


def _lines(path) -> Iterator[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                try:
                    yield ast.literal_eval(line)
                except (ValueError, SyntaxError):
                    raise DataError(f"{path}:{lineno}: unreadable record") from None


def read_reviews(path) -> List[InteractionRecord]:
    out = []
    for obj in _lines(path):
        try:
            out.append(InteractionRecord(str(obj["reviewerID"]), str(obj["asin"]), int(obj["unixReviewTime"])))
        except (KeyError, TypeError, ValueError):
            continue
    if not out:
        raise DataError(f"no usable reviews in {path}")
    return out


def k_core(records: List[InteractionRecord], k: int) -> List[InteractionRecord]:
    """Repeatedly drop users and items with fewer than ``k`` interactions."""
    if k <= 1:
        return list(records)
    cur = list(records)
    while True:
        users = Counter(r.user_id for r in cur)
        items = Counter(r.item_id for r in cur)
        keep = [r for r in cur if users[r.user_id] >= k and items[r.item_id] >= k]
        if len(keep) == len(cur):
            return keep
        cur = keep


def catalog_for(records: List[InteractionRecord], meta_path=None) -> Catalog:
    """Items seen in ``records``; categories (and brand) come from ``meta_path`` when given.

    Release dates are not published, so every item takes its first
    interaction as its release.
    """
    seen = sorted({r.item_id for r in records})
    meta: Dict[str, dict] = {}
    if meta_path is not None:
        wanted = set(seen)
        for obj in _lines(meta_path):
            if obj.get("asin") in wanted:
                meta[obj["asin"]] = obj
    vocabs: List[Dict[str, int]] = [{}, {}]
    items = {}
    for iid in seen:
        obj = meta.get(iid, {})
        cats = obj.get("categories") or obj.get("category") or [["all"]]
        flat = [c for group in cats for c in (group if isinstance(group, list) else [group])]
        brand = [obj["brand"]] if obj.get("brand") else []
        cset = frozenset(vocabs[0].setdefault(str(c), len(vocabs[0])) for c in flat or ["all"])
        bset = frozenset(vocabs[1].setdefault(str(b), len(vocabs[1])) for b in brand)
        items[iid] = ItemRecord(iid, None, cset, (cset, bset))
    return Catalog(items, ["categories", "brand"], [list(v) for v in vocabs], missing_release=list(seen))


def amazon_corpus(reviews_path, meta_path=None, k: int = 5, bin_seconds: int = BIN_SECONDS) -> Corpus:
    records = k_core(read_reviews(reviews_path), k)
    if not records:
        raise DataError(f"nothing left after {k}-core filtering")
    log.info("%d interactions after %d-core filtering", len(records), k)
    return Corpus.build(records, catalog_for(records, meta_path), bin_seconds)


def optional_path(env_value: Optional[str]) -> Optional[Path]:
    if not env_value:
        return None
    path = Path(env_value)
    return path if path.exists() else None
