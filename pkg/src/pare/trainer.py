"""Training loop: (item, bin) examples, Adam on the summed per-head squared error,
early stopping on validation, JSON checkpoints."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .corpus import Corpus, DataError, SplitSpec
from .metrics import evaluate
from .model import Dims, PareConfig, expected_shapes, init_params, loss, loss_and_grads, make_batch
from .numerics import AdamState, NumericError, ParamStore, adam_step, load_params, save_params
from .ranker import score_all, top_n

log = logging.getLogger(__name__)


class TrainExample(NamedTuple):
    item_id: str
    t: int
    target: int


class Examples(NamedTuple):
    train: List[TrainExample]
    valid: List[TrainExample]


@dataclass
class TrainConfig:
    lr: float = 0.005
    batch_size: int = 128
    max_epochs: int = 60
    patience: int = 8
    seed: int = 0
    weight_decay: float = 1e-4
    selection: str = "loss"   # "loss" or "hr" (validation HR@10 of the global ranking)
    time_budget: Optional[float] = None  # seconds; stops after the epoch that exceeds it

    def __post_init__(self):
        if not 1e-4 <= self.lr <= 0.1:
            log.warning("lr %g outside the usual search range [1e-4, 0.1]", self.lr)
        if self.batch_size not in (64, 128, 256):
            log.warning("batch size %d outside the usual grid {64, 128, 256}", self.batch_size)
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1, max_epochs >= 0")
        if self.selection not in ("loss", "hr"):
            raise ValueError(f"unknown selection criterion {self.selection!r}")


class TrainingDiverged(NumericError):
    pass


def build_examples(corpus: Corpus, split: Optional[SplitSpec] = None) -> Examples:
    """One example per item and bin from its release to the end of training, zero bins included."""
    split = split or corpus.split
    train, valid = [], []
    for iid in corpus.item_ids:
        s = corpus.series[iid]
        for t in range(s.release_bin, split.train_end_bin + 1):
            train.append(TrainExample(iid, t, s.at(t)))
        if s.release_bin <= split.valid_bin <= s.last_bin:
            valid.append(TrainExample(iid, split.valid_bin, s.at(split.valid_bin)))
    if not train:
        raise DataError("no training examples: every item is released after the training region")
    return Examples(train, valid)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    valid_loss: float
    lr: float
    seconds: float
    valid_hr: Optional[float] = None

    def line(self) -> str:
        return f"{self.epoch}\t{self.train_loss!r}\t{self.valid_loss!r}\t{self.lr!r}\t{self.seconds:.3f}"


LOG_HEADER = "epoch\ttrain_loss\tvalid_loss\tlr\tseconds"


@dataclass
class TrainResult:
    params: ParamStore
    history: List[EpochLog]
    best_epoch: int
    config: PareConfig
    dims: Dims

    def losses(self):
        return [(h.train_loss, h.valid_loss) for h in self.history]


def _valid_hr(params, corpus, config, split):
    truth = corpus.user_items_in_bin(split.valid_bin)
    if not truth:
        return 0.0
    scores = score_all(params, corpus, split.valid_bin, config)
    return evaluate(top_n(scores, 10), truth, (10,)).at(10)["hr"]


def train(corpus: Corpus, config: PareConfig, tcfg: TrainConfig,
          examples: Optional[Examples] = None, log_path=None) -> TrainResult:
    """Fit a fresh model and return the parameters of the best validation epoch.

    Epoch 0 in the history is the untrained model.  Training stops after
    ``patience`` epochs without improvement of the selection criterion.
    """
    examples = examples or build_examples(corpus)
    if not examples.train:
        raise DataError("empty training set")
    dims = Dims.of(corpus)
    params = init_params(dims, config, seed=tcfg.seed)
    rng = np.random.default_rng(tcfg.seed)
    full = make_batch(corpus, [(e.item_id, e.t) for e in examples.train], config)
    vbatch = make_batch(corpus, [(e.item_id, e.t) for e in examples.valid], config) if examples.valid else None
    state = AdamState(lr=tcfg.lr, weight_decay=tcfg.weight_decay)

    def evaluate_epoch(epoch, train_loss, started):
        vl = loss(params, vbatch, config) if vbatch is not None else float("nan")
        hr = _valid_hr(params, corpus, config, corpus.split) if tcfg.selection == "hr" else None
        entry = EpochLog(epoch, train_loss, vl, tcfg.lr, time.perf_counter() - started, hr)
        log.info(entry.line())
        return entry

    t0 = time.perf_counter()
    history = [evaluate_epoch(0, loss(params, full, config), t0)]

    def score(entry):
        if tcfg.selection == "hr":
            return -entry.valid_hr
        return entry.valid_loss if vbatch is not None else entry.train_loss

    best = params.copy()
    best_epoch, best_score, stale = 0, score(history[0]), 0
    n = len(full)
    for epoch in range(1, tcfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for k, lo in enumerate(range(0, n, tcfg.batch_size)):
            idx = order[lo:lo + tcfg.batch_size]
            batch = full.subset(idx)
            value, grads = loss_and_grads(params, batch, config)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {k}")
            params.accumulate(grads)
            adam_step(params, state)
            total += value * len(idx)
        entry = evaluate_epoch(epoch, total / n, started)
        history.append(entry)
        if not np.isfinite(entry.valid_loss) and vbatch is not None:
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        s = score(entry)
        if s < best_score:
            best, best_epoch, best_score, stale = params.copy(), epoch, s, 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
        if tcfg.time_budget is not None and time.perf_counter() - t0 > tcfg.time_budget:
            log.info("time budget exhausted after epoch %d", epoch)
            break
    if log_path is not None:
        write_log(history, log_path)
    return TrainResult(best, history, best_epoch, config, dims)


def write_log(history: Sequence[EpochLog], path):
    Path(path).write_text("\n".join([LOG_HEADER] + [h.line() for h in history]) + "\n")


# ------------------------------------------------------------ checkpoints

def save_checkpoint(params: ParamStore, path, config: PareConfig, dims: Dims):
    meta = {"config": {**asdict(config), "enabled_heads": list(config.enabled_heads)},
            "dims": asdict(dims)}
    save_params(params, path, meta)


def load_checkpoint(path, dims: Optional[Dims] = None, config: Optional[PareConfig] = None):
    """Returns ``(params, config, dims)``; shapes are checked against ``dims`` when given."""
    store, meta = load_params(path)
    config = config or PareConfig(**{**meta["config"], "enabled_heads": tuple(meta["config"]["enabled_heads"])})
    dims = dims or Dims(**meta["dims"])
    want = expected_shapes(dims, config)
    got = store.shapes()
    bad = sorted(k for k in set(want) | set(got) if want.get(k) != got.get(k))
    if bad:
        detail = ", ".join(f"{k}: checkpoint {got.get(k)} vs expected {want.get(k)}" for k in bad)
        raise ValueError(f"checkpoint shape mismatch in {detail}")
    return store, config, dims
