"""Command-line entry point.

    pare <command> [--config run.yaml] [overrides]

Commands: ingest, stats, train, predict, evaluate, baseline, blend, sweep,
gradcheck, profile.  Every artifact is written under ``output_dir``.
Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import yaml

from .blend import BETA_GRID, beta_sweep, blend_rankings, load_scores, sweep_plot_rows
from .corpus import BIN_SECONDS, Corpus, DataError, popularity_profile
from .metrics import CUTOFFS, METRICS, evaluate
from .model import (HEADS, Dims, PareConfig, PredictionBreakdown, init_params, loss, loss_and_grads, make_batch,
                    predict_batch)
from .numerics import NumericError, gradient_check
from .ranker import WINDOWS, cutoff_toppop, parse_window, read_ranked, top_n, write_ranked
from .synthetic import SyntheticSpec, generate
from .trainer import TrainConfig, build_examples, load_checkpoint, save_checkpoint, train

log = logging.getLogger("pare")

COMMANDS = ("ingest", "stats", "train", "predict", "evaluate", "baseline", "blend", "sweep", "gradcheck", "profile")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    interactions: Optional[str] = None
    items: Optional[str] = None
    output_dir: str = "output"
    side_fields: Optional[List[str]] = None
    bin_seconds: int = BIN_SECONDS
    lenient: bool = False
    # model
    d: int = 64
    alpha: float = 0.5
    omega: int = 12
    lstm_hidden: int = 64
    heads: str = "H,T,P,S"
    period_mode: str = "bin"
    time_lookup: str = "index"
    # training
    lr: float = 0.005
    batch_size: int = 128
    max_epochs: int = 60
    patience: int = 8
    weight_decay: float = 1e-4
    selection: str = "loss"
    seed: int = 0
    # evaluation / blending
    cutoffs: List[int] = field(default_factory=lambda: list(CUTOFFS))
    window: Optional[str] = None
    beta: float = 0.5
    betas: List[float] = field(default_factory=lambda: list(BETA_GRID))
    normalize: bool = False
    scores: Optional[str] = None
    category: Optional[str] = None  # profile: restrict the calendar profile to one category

    def pare(self) -> PareConfig:
        return PareConfig(d=self.d, alpha=self.alpha, omega=self.omega, lstm_hidden=self.lstm_hidden,
                          enabled_heads=parse_heads(self.heads), period_mode=self.period_mode,
                          time_lookup=self.time_lookup)

    def training(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, seed=self.seed, weight_decay=self.weight_decay,
                           selection=self.selection)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def dump(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=True)

    @classmethod
    def load(cls, text: str) -> "RunConfig":
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise UsageError("config file must be a flat key: value mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)


def parse_heads(text) -> tuple:
    parts = [p.strip().upper() for p in (text.split(",") if isinstance(text, str) else text) if p.strip()]
    bad = [p for p in parts if p not in HEADS]
    if bad:
        raise UsageError(f"unknown heads {bad}; choose from {','.join(HEADS)}")
    return tuple(parts)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pare", description="Popularity forecasting and non-personalised top-N recommendation.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="flat YAML key: value file (see RunConfig)")
    ap.add_argument("--interactions")
    ap.add_argument("--items")
    ap.add_argument("--output-dir", dest="output_dir")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--alpha", type=float)
    ap.add_argument("--omega", type=int)
    ap.add_argument("--heads", help="comma-separated subset of H,T,P,S")
    ap.add_argument("--cutoffs", help="comma-separated list, e.g. 1,3,5,7,10")
    ap.add_argument("--window", help="TopPop window in months (3, 6, 12) or ALL")
    ap.add_argument("--beta", type=float)
    ap.add_argument("--scores", help="external user_id,item_id,score file for blend/sweep")
    ap.add_argument("--normalize", action="store_true", default=None, help="min-max scale both sources before blending")
    ap.add_argument("--max-epochs", dest="max_epochs", type=int)
    ap.add_argument("--lr", type=float)
    ap.add_argument("--batch-size", dest="batch_size", type=int)
    ap.add_argument("--category", help="category for the calendar-month profile (default: all)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve(args) -> RunConfig:
    cfg = RunConfig.load(args.config.read_text()) if args.config else RunConfig()
    for key in ("interactions", "items", "output_dir", "seed", "alpha", "omega", "heads", "window", "beta",
                "scores", "normalize", "max_epochs", "lr", "batch_size", "category"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, val)
    if args.cutoffs:
        try:
            cfg.cutoffs = [int(x) for x in args.cutoffs.split(",")]
        except ValueError:
            raise UsageError(f"bad --cutoffs {args.cutoffs!r}") from None
    return cfg


# ------------------------------------------------------------------ helpers

def _corpus(cfg: RunConfig) -> Corpus:
    for key in ("interactions", "items"):
        path = getattr(cfg, key)
        if not path:
            raise UsageError(f"missing --{key}")
        if not Path(path).exists():
            raise DataError(f"{key} file not found: {path}")
    return Corpus.from_files(cfg.interactions, cfg.items, cfg.side_fields, cfg.bin_seconds, strict=not cfg.lenient)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n")
    log.info("wrote %s", path)


def _metrics_table(rows) -> str:
    head = "method\tN\t" + "\t".join(METRICS)
    body = [f"{label}\t{n}\t" + "\t".join(f"{rep.at(n)[m]:.4f}" for m in METRICS) for label, rep in rows
            for n in sorted(rep.values)]
    return "\n".join([head] + body)


def _pare_scores(cfg: RunConfig) -> dict:
    path = cfg.out / "predictions.tsv"
    if not path.exists():
        raise DataError(f"{path} not found; run `pare predict` first")
    lines = path.read_text().splitlines()[1:]
    return {p.item_id: p.y_F for p in map(PredictionBreakdown.parse, lines)}


def _windows(cfg: RunConfig):
    return [parse_window(cfg.window)] if cfg.window else list(WINDOWS)


# ----------------------------------------------------------------- commands

def cmd_ingest(cfg):
    corpus = _corpus(cfg)
    _write(cfg.out / "corpus.json", json.dumps(corpus.to_json(), sort_keys=True))
    return cmd_stats(cfg, corpus)


def cmd_stats(cfg, corpus=None):
    corpus = corpus or _corpus(cfg)
    s = corpus.stats()
    text = "#Users\t#Items\t#Train\t#Validate\t#Test\n" + "\t".join(str(s[k]) for k in
                                                                   ("users", "items", "train", "validate", "test"))
    _write(cfg.out / "stats.tsv", text)
    print(text)


def cmd_train(cfg):
    corpus = _corpus(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    res = train(corpus, cfg.pare(), cfg.training(), log_path=cfg.out / "train_log.tsv")
    save_checkpoint(res.params, cfg.out / "checkpoint.json", res.config, res.dims)
    _write(cfg.out / "run.yaml", cfg.dump())
    best = res.history[res.best_epoch]
    print(f"best_epoch\t{res.best_epoch}\tvalid_loss\t{best.valid_loss!r}")


def _load_model(cfg, corpus):
    path = cfg.out / "checkpoint.json"
    if not path.exists():
        raise DataError(f"{path} not found; run `pare train` first")
    params, pcfg, _ = load_checkpoint(path, Dims.of(corpus))
    return params, pcfg


def cmd_predict(cfg):
    corpus = _corpus(cfg)
    params, pcfg = _load_model(cfg, corpus)
    T = corpus.split.test_bin
    pairs = [(i, T) for i in corpus.item_ids if corpus.series[i].release_bin <= T]
    preds = predict_batch(params, corpus, pairs, pcfg)
    _write(cfg.out / "predictions.tsv", "\n".join([PredictionBreakdown.HEADER] + [p.line() for p in preds]))
    ranked = top_n({p.item_id: p.y_F for p in preds}, len(preds))
    write_ranked(ranked, cfg.out / "ranked_pare.csv")
    a = preds[0].a if preds else ()
    print("attention\t" + "\t".join(f"{k}={w:.4f}" for k, w in zip(HEADS, a)))


def cmd_evaluate(cfg):
    corpus = _corpus(cfg)
    path = cfg.out / "ranked_pare.csv"
    if not path.exists():
        raise DataError(f"{path} not found; run `pare predict` first")
    truth = corpus.user_items_in_bin(corpus.split.test_bin)
    rep = evaluate(read_ranked(path), truth, cfg.cutoffs)
    text = _metrics_table([("PARE", rep)])
    _write(cfg.out / "metrics.tsv", text)
    print(text)


def cmd_baseline(cfg):
    corpus = _corpus(cfg)
    T = corpus.split.test_bin
    truth = corpus.user_items_in_bin(T)
    rows = []
    for w in _windows(cfg):
        ranked = cutoff_toppop(corpus, T, w)
        write_ranked(ranked, cfg.out / f"toppop_{w}.csv")
        rows.append((f"TopPop-{w}", evaluate(ranked, truth, cfg.cutoffs)))
    text = _metrics_table(rows)
    _write(cfg.out / "baseline_metrics.tsv", text)
    print(text)


def _blend_inputs(cfg):
    if not cfg.scores:
        raise UsageError("--scores is required")
    corpus = _corpus(cfg)
    return corpus, load_scores(cfg.scores), _pare_scores(cfg)


def cmd_blend(cfg):
    corpus, ext, pop = _blend_inputs(cfg)
    n = max(cfg.cutoffs)
    lists = blend_rankings(ext, pop, cfg.beta, n, cfg.normalize)
    lines = ["user_id,rank,item_id,score"]
    for u in sorted(lists):
        lines += [f"{u},{r},{i},{s!r}" for r, (i, s) in enumerate(lists[u].entries, start=1)]
    _write(cfg.out / f"blend_{cfg.beta:g}.csv", "\n".join(lines))
    truth = corpus.user_items_in_bin(corpus.split.test_bin)
    rep = beta_sweep(ext, pop, truth, [cfg.beta], cfg.cutoffs, cfg.normalize)[float(cfg.beta)]
    text = _metrics_table([(f"{ext.source}+PARE(beta={cfg.beta:g})", rep)])
    _write(cfg.out / f"blend_{cfg.beta:g}_metrics.tsv", text)
    print(text)


def cmd_sweep(cfg):
    corpus, ext, pop = _blend_inputs(cfg)
    truth = corpus.user_items_in_bin(corpus.split.test_bin)
    cut = sorted(set(cfg.cutoffs) | {10})
    sweep = beta_sweep(ext, pop, truth, cfg.betas, cut, cfg.normalize)
    _write(cfg.out / "sweep_metrics.tsv", _metrics_table([(f"beta={b:g}", r) for b, r in sorted(sweep.items())]))
    plot = "beta,hr@10\n" + "\n".join(f"{b:g},{hr!r}" for b, hr in sweep_plot_rows(sweep))
    _write(cfg.out / "sweep_hr10.csv", plot)
    print(plot)


def gradcheck_report(seed: int = 0, tol: float = 1e-4, max_entries: Optional[int] = None):
    """Finite-difference check of the full training loss on a miniature model."""
    sc = generate(SyntheticSpec(n_users=60, n_items=12, n_bins=20, n_categories=3, n_studios=4, rate=4.0,
                                seed=seed))
    corpus = sc.corpus()
    config = PareConfig(d=8, lstm_hidden=8)
    dims = Dims.of(corpus)
    params = init_params(dims, config, seed=seed)
    rng = np.random.default_rng(seed)
    # move off the near-zero initialisation so every ReLU/gate is exercised
    for name in params:
        params.values[name] += rng.normal(0.0, 0.3, params[name].shape)
    ex = build_examples(corpus).train
    pick = rng.choice(len(ex), size=min(16, len(ex)), replace=False)
    batch = make_batch(corpus, [(ex[k].item_id, ex[k].t) for k in sorted(pick)], config)
    _, grads = loss_and_grads(params, batch, config)
    return gradient_check(lambda p: loss(p, batch, config), params, grads, h=1e-5, tol=tol,
                          max_entries=max_entries, rng=rng,
                          precise=lambda p: loss(p, batch, config, dtype=np.longdouble))


def cmd_gradcheck(cfg):
    rep = gradcheck_report(cfg.seed)
    text = "parameter\tmax_rel_err\tstatus\n" + "\n".join(rep.lines())
    _write(cfg.out / "gradcheck.tsv", text)
    print(text)
    print(f"max_rel_err\t{rep.worst:.3e}")
    if not rep.passed:
        raise NumericError(f"gradient check failed for {','.join(rep.failing())}")


def cmd_profile(cfg):
    corpus = _corpus(cfg)
    last = corpus.split.train_end_bin
    prof = popularity_profile(corpus.series, "since-release", last_bin=last)
    _write(cfg.out / "profile_since_release.tsv", "age\tmean_count\n" + "\n".join(f"{a}\t{v!r}" for a, v in prof))
    cats = [cfg.category] if cfg.category else corpus.catalog.vocabs[0]
    lines = ["category\tmonth\tmean_count"]
    for c in cats:
        for m, v in popularity_profile(corpus.series, "calendar-month-by-category", corpus.catalog,
                                       corpus.binning, c, last_bin=last):
            lines.append(f"{c}\t{m}\t{v!r}")
    _write(cfg.out / "profile_calendar.tsv", "\n".join(lines))
    print(f"profiles\t{len(prof)} ages\t{len(cats)} categories")


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args)
        HANDLERS[args.command](cfg)
        return EXIT_OK
    except UsageError as exc:
        print(f"error\tkind=usage\t{exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, KeyError) as exc:
        print(f"error\tkind=data\t{exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"error\tkind=numeric\t{exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error\tkind=data\t{exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
