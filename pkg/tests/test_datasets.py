import gzip
import json

import pytest

from pare.corpus import DataError, InteractionRecord
from pare.datasets import amazon_corpus, catalog_for, k_core, read_reviews


def rec(u, i, t=100):
    return InteractionRecord(u, i, t)


def test_k_core_is_iterative():
    # k=2 only removes u3; k=3 removes u3, leaving every item with two users, so everything goes
    rs = [rec("u1", "a"), rec("u1", "b"), rec("u2", "a"), rec("u2", "b"), rec("u3", "c"), rec("u2", "c"),
          rec("u1", "c")]
    kept = k_core(rs, 2)
    assert {(r.user_id, r.item_id) for r in kept} == {("u1", "a"), ("u1", "b"), ("u2", "a"), ("u2", "b"),
                                                      ("u1", "c"), ("u2", "c")}
    assert k_core(rs, 3) == []


def test_reads_json_gzip_and_literal_lines(tmp_path):
    plain = tmp_path / "r.json"
    plain.write_text(json.dumps({"reviewerID": "u", "asin": "a", "unixReviewTime": 5}) + "\n"
                     + "{'reviewerID': 'v', 'asin': 'b', 'unixReviewTime': 7}\n"
                     + json.dumps({"reviewerID": "w", "asin": "c"}) + "\n")
    assert [(r.user_id, r.item_id, r.timestamp) for r in read_reviews(plain)] == [("u", "a", 5), ("v", "b", 7)]
    gz = tmp_path / "r.json.gz"
    with gzip.open(gz, "wt") as fh:
        fh.write(plain.read_text())
    assert len(read_reviews(gz)) == 2


def test_unreadable_line(tmp_path):
    bad = tmp_path / "r.json"
    bad.write_text("not a record\n")
    with pytest.raises(DataError, match=":1:"):
        read_reviews(bad)


def test_catalog_from_metadata(tmp_path):
    meta = tmp_path / "meta.json"
    meta.write_text(json.dumps({"asin": "a", "categories": [["Games", "PC"]], "brand": "X"}) + "\n")
    cat = catalog_for([rec("u", "a"), rec("u", "b")], meta)
    assert cat.vocabs[0] == ["Games", "PC", "all"]
    assert cat.multi_hot("a").tolist() == [1, 1, 0]
    assert cat.multi_hot("b").tolist() == [0, 0, 1]
    assert cat.missing_release == ["a", "b"]


def test_amazon_corpus_end_to_end(tmp_path):
    day = 86400
    rows = [{"reviewerID": f"u{k % 4}", "asin": f"a{k % 3}", "unixReviewTime": 1_400_000_000 + k * 9 * day}
            for k in range(40)]
    path = tmp_path / "r.json"
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    c = amazon_corpus(path, k=2)
    assert c.binning.num_bins >= 3
    assert sum(sum(s.counts) for s in c.series.values()) > 0
