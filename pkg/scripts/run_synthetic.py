"""Train on the planted synthetic corpus and compare against TopPop.

Prints the validation-loss curve, HR@N for the model and each TopPop window,
and the learned fusion weights for a few head subsets.

    python scripts/run_synthetic.py [--seed 0] [--budget 300]
"""
import argparse
import time

import numpy as np

from pare.metrics import CUTOFFS, evaluate
from pare.model import PareConfig, forward, make_batch
from pare.ranker import WINDOWS, cutoff_toppop, score_all, top_n
from pare.synthetic import SyntheticSpec, generate
from pare.trainer import TrainConfig, train

SUBSETS = [("H",), ("H", "T"), ("H", "T", "S"), ("H", "T", "P"), ("H", "T", "P", "S")]


def mean_weights(res, corpus):
    pairs = [(i, corpus.split.test_bin) for i in corpus.item_ids]
    out = forward(res.params, make_batch(corpus, pairs, res.config), res.config)[0]
    a = np.asarray(out["a"])
    return a.mean(axis=0) if a.ndim == 2 else a


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--budget", type=float, default=300.0)
    ap.add_argument("--skip-ablation", action="store_true")
    args = ap.parse_args()

    corpus = generate(SyntheticSpec(seed=args.seed)).corpus()
    print("corpus", corpus.stats())
    started = time.perf_counter()
    res = train(corpus, PareConfig(), TrainConfig(seed=args.seed, time_budget=args.budget))
    print(f"trained in {time.perf_counter() - started:.1f}s, best epoch {res.best_epoch}")
    for log in res.history:
        print(log.line())
    v0, best = res.history[0].valid_loss, res.history[res.best_epoch].valid_loss
    print(f"validation loss ratio best/epoch-0: {best / v0:.3f}")

    T = corpus.split.test_bin
    truth = corpus.user_items_in_bin(T)
    rows = {"PARE": evaluate(top_n(score_all(res.params, corpus, T, res.config), max(CUTOFFS)), truth)}
    for w in WINDOWS:
        rows[f"TopPop-{w}"] = evaluate(cutoff_toppop(corpus, T, w, max(CUTOFFS)), truth)
    print("\nmethod\t" + "\t".join(f"HR@{n}" for n in CUTOFFS))
    for name, rep in rows.items():
        print(name + "\t" + "\t".join(f"{rep.at(n)['hr']:.4f}" for n in CUTOFFS))

    if args.skip_ablation:
        return
    print("\nheads\tmean fusion weights H/T/P/S")
    for heads in SUBSETS:
        r = train(corpus, PareConfig(enabled_heads=heads), TrainConfig(seed=args.seed, time_budget=args.budget))
        print("+".join(heads) + "\t" + "/".join(f"{w:.3f}" for w in mean_weights(r, corpus)))


if __name__ == "__main__":
    main()
