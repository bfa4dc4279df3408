import pytest
from hypothesis import given, strategies as st

from pare.corpus import DataError
from pare.model import Dims, PareConfig, init_params
from pare.ranker import (WINDOWS, cutoff_toppop, parse_window, read_ranked, score_all, top_n,
                         window_bins, write_ranked)

from conftest import make_corpus, ts


def test_ties_break_by_item_id():
    assert top_n({"a": 2.0, "b": 5.0, "c": 2.0}, 2).items == ["b", "a"]


def test_short_list_is_flagged():
    r = top_n({"a": 1.0, "b": 2.0}, 5)
    assert r.items == ["b", "a"] and r.short
    assert not top_n({"a": 1.0}, 1).short


def test_exclusion_and_bad_n():
    assert top_n({"a": 3.0, "b": 2.0}, 1, exclude={"a"}).items == ["b"]
    with pytest.raises(ValueError):
        top_n({"a": 1.0}, 0)


@given(st.dictionaries(st.text("abcdef", min_size=1, max_size=3), st.integers(-5, 5), max_size=25),
       st.integers(1, 30))
def test_top_n_matches_full_sort(scores, n):
    # oracle: repeatedly pull the best remaining item
    pool = dict(scores)
    expected = []
    while pool and len(expected) < n:
        best = max(pool.values())
        pick = min(k for k, v in pool.items() if v == best)
        expected.append(pick)
        del pool[pick]
    assert top_n(scores, n).items == expected


def test_window_bounds():
    assert window_bins(10, 3) == (7, 9)
    assert window_bins(10, "ALL") == (1, 9)
    assert window_bins(2, 12) == (1, 1)
    with pytest.raises(DataError):
        window_bins(1, "ALL")
    assert parse_window("all") == "ALL" and parse_window("6") == 6


def test_old_hit_ranks_high_for_all_low_for_three_months(tmp_path):
    events = [(f"u{k}", "old", 2) for k in range(10)]
    events += [("a", "new", 24), ("b", "new", 25), ("c", "new", 26), ("z", "pin", 28)]
    items = [{"item_id": i, "release_ts": ts(1), "categories": ["c"]} for i in ("old", "new", "pin")]
    c = make_corpus(tmp_path, events, items)
    T = c.split.test_bin
    assert cutoff_toppop(c, T, "ALL").items[0] == "old"
    three = cutoff_toppop(c, T, 3).items
    assert three[0] == "new" and three.index("old") > three.index("new")


def toppop_oracle(corpus, T, window):
    lo = 1 if window == "ALL" else max(1, T - window)
    b = corpus.binning
    triples = {(r.user_id, r.item_id, b.bin_of(r.timestamp)) for r in corpus.interactions
               if r.item_id in corpus.series}
    counts = {iid: 0 for iid in corpus.series}
    for _, iid, t in triples:
        if lo <= t <= T - 1:
            counts[iid] += 1
    return sorted(counts, key=lambda i: (-counts[i], i))


@pytest.mark.parametrize("window", WINDOWS)
def test_toppop_matches_brute_force(small_synthetic, window):
    corpus = small_synthetic.corpus()
    for T in (corpus.split.test_bin, corpus.split.valid_bin, 6):
        assert cutoff_toppop(corpus, T, window).items == toppop_oracle(corpus, T, window)


def test_score_all_only_released_items(small_synthetic):
    corpus = small_synthetic.corpus()
    config = PareConfig(d=4, lstm_hidden=4)
    params = init_params(Dims.of(corpus), config)
    scores = score_all(params, corpus, 5, config)
    assert set(scores) == {i for i, s in corpus.series.items() if s.release_bin <= 5}


def test_ranked_file_round_trip(tmp_path):
    r = top_n({"x": 0.1 + 0.2, "y": -3.5, "z": 1e-300}, 3)
    write_ranked(r, tmp_path / "r.csv")
    back = read_ranked(tmp_path / "r.csv")
    assert back.entries == r.entries
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "rank,item_id,score"
