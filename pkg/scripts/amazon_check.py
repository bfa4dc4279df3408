"""TopPop-ALL sanity check on the Amazon Video Games review dump.

    python scripts/amazon_check.py reviews_Video_Games_5.json.gz [meta_Video_Games.json.gz]

The reference value is HR@10 = 0.0643; the dump and its preprocessing are
not pinned down exactly, so a gap of a few thousandths is expected.
"""
import sys

from pare.datasets import amazon_corpus
from pare.metrics import CUTOFFS, evaluate
from pare.ranker import WINDOWS, cutoff_toppop

REFERENCE = 0.0643


def main(argv):
    if not argv:
        print(__doc__.strip())
        return 1
    corpus = amazon_corpus(argv[0], argv[1] if len(argv) > 1 else None, k=5)
    print("stats", corpus.stats())
    T = corpus.split.test_bin
    truth = corpus.user_items_in_bin(T)
    for w in WINDOWS:
        rep = evaluate(cutoff_toppop(corpus, T, w, max(CUTOFFS)), truth)
        print(f"TopPop-{w}\t" + "\t".join(f"HR@{n}={rep.at(n)['hr']:.4f}" for n in CUTOFFS))
    hr = evaluate(cutoff_toppop(corpus, T, "ALL", 10), truth, (10,)).at(10)["hr"]
    print(f"TopPop-ALL HR@10 {hr:.4f}, reference {REFERENCE}, deviation {hr - REFERENCE:+.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
