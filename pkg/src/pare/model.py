"""Popularity predictor: history, temporal, periodic and side-information heads
combined by a softmax-weighted fusion.

Everything runs on batches of (item, target bin) pairs; the single-item helpers
at the bottom wrap a batch of one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .corpus import Corpus
from .numerics import (ParamStore, affine, affine_backward, as_float, embed, gather_backward, glorot,
                       lstm_backward, lstm_sequence)

HEADS = ("H", "T", "P", "S")
LSTM_GATES = ("I", "F", "G", "O")


@dataclass
class PareConfig:
    d: int = 64
    alpha: float = 0.5
    omega: int = 12
    lstm_hidden: int = 64
    enabled_heads: Tuple[str, ...] = HEADS
    period_mode: str = "bin"  # "bin": (t-1) mod omega; "calendar": month of the bin midpoint
    # "clamp": bins after the training region look up the last training bin's time row;
    # "index": every bin uses its own (possibly never trained) row
    time_lookup: str = "index"

    def __post_init__(self):
        self.enabled_heads = tuple(h for h in HEADS if h in set(self.enabled_heads))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.omega < 1 or self.d < 1 or self.lstm_hidden < 1:
            raise ValueError("omega, d and lstm_hidden must be >= 1")
        if not self.enabled_heads:
            raise ValueError("at least one head must be enabled")
        if "H" not in self.enabled_heads and "T" not in self.enabled_heads:
            raise ValueError("enabled heads must include H or T")
        if self.period_mode not in ("bin", "calendar"):
            raise ValueError(f"unknown period mode {self.period_mode!r}")
        if self.time_lookup not in ("clamp", "index"):
            raise ValueError(f"unknown time lookup {self.time_lookup!r}")
        if self.period_mode == "calendar" and self.omega != 12:
            raise ValueError("calendar period mode requires omega = 12")


@dataclass
class Dims:
    num_bins: int
    num_items: int
    field_sizes: List[int]  # q_j per side-info field; field 0 is the category vocabulary

    @property
    def num_categories(self) -> int:
        return self.field_sizes[0]

    @classmethod
    def of(cls, corpus: Corpus) -> "Dims":
        return cls(corpus.binning.num_bins, len(corpus.series), corpus.catalog.field_sizes)


def init_params(dims: Dims, config: PareConfig, seed: int = 0) -> ParamStore:
    if dims.num_categories == 0:
        raise ValueError("periodic head needs at least one category (C = 0)")
    rng = np.random.default_rng(seed)
    d, h = config.d, config.lstm_hidden
    emb = lambda rows: rng.uniform(-0.01, 0.01, size=(rows, d))
    store = ParamStore()
    store.add("time_emb", emb(dims.num_bins + 1), decay=True)
    store.add("item_emb", emb(dims.num_items), decay=True)
    store.add("periodic_emb", emb(config.omega * dims.num_categories), decay=True)
    for j, q in enumerate(dims.field_sizes):
        store.add(f"side_emb.{j}", emb(max(q, 1)), decay=True)
    for g in LSTM_GATES:
        store.add(f"lstm.W_{g}", glorot(rng, 1 + h, h), decay=True)
        store.add(f"lstm.b_{g}", np.full(h, 1.0 if g == "F" else 0.0))
    head_in = {"H": h, "T": 4 * d, "P": d, "S": len(dims.field_sizes) * d}
    for k in HEADS:
        store.add(f"head_{k}.W", glorot(rng, head_in[k], 1), decay=True)
        store.add(f"head_{k}.b", np.zeros(1))
    store.add("fusion.logits", np.zeros(len(HEADS)))
    return store


def expected_shapes(dims: Dims, config: PareConfig) -> Dict[str, tuple]:
    return init_params(dims, config).shapes()


def fusion_weights(logits, enabled: Sequence[str] = HEADS) -> np.ndarray:
    """Softmax over the enabled heads' logits; disabled heads get weight 0."""
    mask = np.array([k in enabled for k in HEADS])
    if not mask.any():
        raise ValueError("all heads disabled")
    z = as_float(logits)[mask]
    e = np.exp(z - z.max())
    a = np.zeros(len(HEADS), dtype=z.dtype)
    a[mask] = e / e.sum()
    return a


def fuse(y, logits, enabled: Sequence[str] = HEADS):
    """Weighted sum of head outputs ``y`` (4 values in H,T,P,S order, or (B, 4)).

    Returns ``(y_F, a)``.
    """
    a = fusion_weights(logits, enabled)
    y = as_float(y)
    mask = np.array([k in enabled for k in HEADS])
    y = np.where(mask, y, 0.0)
    return y @ a, a


def ema(history, alpha: float) -> float:
    """Latest exponential moving average of ``history`` (0 for an empty one)."""
    out = 0.0
    for k, p in enumerate(history):
        out = float(p) if k == 0 else alpha * float(p) + (1.0 - alpha) * out
    return out


# ------------------------------------------------------------------ batch

@dataclass
class Batch:
    item_ids: List[str]
    hist: np.ndarray       # (B, L) right-aligned popularity history
    mask: np.ndarray       # (B, L) 1 where hist is real
    ema: np.ndarray        # (B,)
    t: np.ndarray          # (B,) time-table row of the target bin
    t_r: np.ndarray        # (B,) time-table row of the release bin
    item: np.ndarray       # (B,) item row
    period: np.ndarray     # (B,) period index in [0, omega)
    side: List[np.ndarray]  # per field (B, q_j) multi-hot; side[0] is the category vector
    target: np.ndarray     # (B,) observed popularity at t (NaN when unknown)

    def __len__(self):
        return len(self.item_ids)

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx)
        mask = self.mask[idx]
        used = np.flatnonzero(mask.any(axis=0))
        lo = used[0] if used.size else mask.shape[1]
        return Batch([self.item_ids[i] for i in idx], self.hist[idx, lo:], mask[:, lo:], self.ema[idx],
                     self.t[idx], self.t_r[idx], self.item[idx], self.period[idx],
                     [s[idx] for s in self.side], self.target[idx])


def period_index(corpus: Corpus, t: int, config: PareConfig) -> int:
    if config.period_mode == "calendar":
        return corpus.binning.calendar_month(t) - 1
    return (t - 1) % config.omega


def make_batch(corpus: Corpus, pairs: Sequence[Tuple[str, int]], config: PareConfig) -> Batch:
    """Inputs for predicting each item's popularity at its paired bin from bins before it."""
    index = corpus.item_index
    cat = corpus.catalog
    last = corpus.split.train_end_bin if config.time_lookup == "clamp" else corpus.binning.num_bins
    B = len(pairs)
    L = max([t - corpus.series[i].release_bin for i, t in pairs] + [0])
    hist = np.zeros((B, L))
    mask = np.zeros((B, L))
    emas = np.zeros(B)
    target = np.full(B, np.nan)
    t_arr = np.zeros(B, dtype=np.int64)
    tr_arr = np.zeros(B, dtype=np.int64)
    item_arr = np.zeros(B, dtype=np.int64)
    period = np.zeros(B, dtype=np.int64)
    side = [np.zeros((B, max(q, 1))) for q in cat.field_sizes]
    for b, (iid, t) in enumerate(pairs):
        s = corpus.series[iid]
        if t < s.release_bin:
            raise ValueError(f"item {iid} is not released by bin {t}")
        if not 1 <= t <= corpus.binning.num_bins:
            raise ValueError(f"bin {t} outside the time table [1, {corpus.binning.num_bins}]")
        h = s.history(t)
        n = len(h)
        if n:
            hist[b, L - n:] = h
            mask[b, L - n:] = 1.0
        emas[b] = ema(h, config.alpha)
        if t <= s.last_bin:
            target[b] = s.at(t)
        t_arr[b] = min(t, last)
        tr_arr[b] = min(s.release_bin, last)
        item_arr[b] = index[iid]
        period[b] = period_index(corpus, t, config)
        for j, attrs in enumerate(cat.items[iid].side_info):
            for a in attrs:
                side[j][b, a] = 1.0
    return Batch([i for i, _ in pairs], hist, mask, emas, t_arr, tr_arr, item_arr, period, side, target)


# ---------------------------------------------------------------- forward

def periodic_selector(categories, period, omega: int) -> np.ndarray:
    """Row-major flatten of the category x period outer product, shape (B, C*omega)."""
    categories = np.atleast_2d(categories)
    onehot = np.zeros((categories.shape[0], omega))
    onehot[np.arange(categories.shape[0]), np.atleast_1d(period)] = 1.0
    return (categories[:, :, None] * onehot[:, None, :]).reshape(categories.shape[0], -1)


def forward(params: ParamStore, batch: Batch, config: PareConfig):
    """Head outputs for a batch; returns ``(out, cache)``.

    ``out`` maps ``status``, ``trend``, ``H``, ``T``, ``P``, ``S``, ``F`` to
    (B,) arrays and ``a`` to the fusion weights.  Disabled heads output 0.
    """
    B = len(batch)
    en = config.enabled_heads
    out = {k: np.zeros(B) for k in HEADS}
    cache = {}
    out["status"] = batch.ema.copy()
    out["trend"] = np.zeros(B)

    if "H" in en:
        H_last, c_lstm = lstm_sequence(batch.hist, params, mask=batch.mask)
        trend, c_h = affine(H_last, params["head_H.W"], params["head_H.b"])
        out["trend"] = trend[:, 0]
        out["H"] = batch.ema + out["trend"]
        cache["H"] = (c_lstm, c_h)

    if "T" in en:
        e_T = params["time_emb"][batch.t]
        e_r = params["time_emb"][batch.t_r]
        e_i = params["item_emb"][batch.item]
        x = np.concatenate([e_T, e_r, e_T - e_r, e_i], axis=1)
        y, c_t = affine(x, params["head_T.W"], params["head_T.b"], "relu")
        out["T"] = y[:, 0]
        cache["T"] = c_t

    if "P" in en:
        sel = periodic_selector(batch.side[0], batch.period, config.omega)
        e_p = embed(sel, params["periodic_emb"])
        y, c_p = affine(e_p, params["head_P.W"], params["head_P.b"], "relu")
        out["P"] = y[:, 0]
        cache["P"] = (sel, c_p)

    if "S" in en:
        embs = [embed(s, params[f"side_emb.{j}"]) for j, s in enumerate(batch.side)]
        y, c_s = affine(np.concatenate(embs, axis=1), params["head_S.W"], params["head_S.b"], "relu")
        out["S"] = y[:, 0]
        cache["S"] = c_s

    Y = np.stack([out[k] for k in HEADS], axis=1)
    out["F"], out["a"] = fuse(Y, params["fusion.logits"], en)
    cache["Y"] = Y
    return out, cache


def backward(params: ParamStore, batch: Batch, config: PareConfig, cache, dout: Dict[str, np.ndarray]):
    """Parameter gradients given upstream gradients for the head outputs in ``dout``."""
    en = config.enabled_heads
    grads = {name: np.zeros_like(v) for name, v in params.values.items()}
    B = len(batch)
    dY = np.zeros((B, len(HEADS)))
    for k, key in enumerate(HEADS):
        if key in dout:
            dY[:, k] += dout[key]

    # fusion: y_F = Y a, a = softmax(logits over enabled)
    if "F" in dout:
        a = fusion_weights(params["fusion.logits"], en)
        dF = dout["F"]
        dY += dF[:, None] * a[None, :]
        da = cache["Y"].T @ dF
        dz = a * (da - a @ da)
        grads["fusion.logits"] += dz

    if "H" in en:
        c_lstm, c_h = cache["H"]
        dH_last, dW, db = affine_backward(dY[:, [0]], c_h)
        grads["head_H.W"] += dW
        grads["head_H.b"] += db
        _, g_lstm = lstm_backward(dH_last, c_lstm, params)
        for name, g in g_lstm.items():
            grads[name] += g

    if "T" in en:
        dx, dW, db = affine_backward(dY[:, [1]], cache["T"])
        grads["head_T.W"] += dW
        grads["head_T.b"] += db
        d = config.d
        de_T, de_r, de_dis, de_i = (dx[:, k * d:(k + 1) * d] for k in range(4))
        shape = params["time_emb"].shape
        grads["time_emb"] += gather_backward(de_T + de_dis, batch.t, shape)
        grads["time_emb"] += gather_backward(de_r - de_dis, batch.t_r, shape)
        grads["item_emb"] += gather_backward(de_i, batch.item, params["item_emb"].shape)

    if "P" in en:
        sel, c_p = cache["P"]
        de_p, dW, db = affine_backward(dY[:, [2]], c_p)
        grads["head_P.W"] += dW
        grads["head_P.b"] += db
        grads["periodic_emb"] += sel.T @ de_p

    if "S" in en:
        dx, dW, db = affine_backward(dY[:, [3]], cache["S"])
        grads["head_S.W"] += dW
        grads["head_S.b"] += db
        d = config.d
        for j, s in enumerate(batch.side):
            grads[f"side_emb.{j}"] += s.T @ dx[:, j * d:(j + 1) * d]
    return grads


def loss_terms(config: PareConfig) -> Tuple[str, ...]:
    return tuple(config.enabled_heads) + ("F",)


def loss(params: ParamStore, batch: Batch, config: PareConfig, dtype=None):
    """Mean over the batch of the summed squared errors of every enabled head and the fusion.

    With ``dtype`` (e.g. ``np.longdouble``) the parameters are widened first
    and the unrounded scalar of that type is returned; finite-difference
    references use this to keep roundoff far below the step size.
    """
    if dtype is not None:
        params = {k: v.astype(dtype) for k, v in params.values.items()}
    out, _ = forward(params, batch, config)
    total = sum(np.mean((batch.target - out[k]) ** 2) for k in loss_terms(config))
    return float(total) if dtype is None else total


def loss_and_grads(params: ParamStore, batch: Batch, config: PareConfig):
    out, cache = forward(params, batch, config)
    B = len(batch)
    total = 0.0
    dout = {}
    for k in loss_terms(config):
        diff = batch.target - out[k]
        total += float(np.mean(diff * diff))
        dout[k] = -2.0 * diff / B
    return total, backward(params, batch, config, cache, dout)


# ------------------------------------------------------------ prediction

@dataclass
class PredictionBreakdown:
    item_id: str
    y_H: float
    y_T: float
    y_P: float
    y_S: float
    y_F: float
    a: Tuple[float, float, float, float]
    y_status: float = 0.0
    y_trend: float = 0.0

    HEADER = "item_id\ty_H\ty_T\ty_P\ty_S\ty_F\ta_H\ta_T\ta_P\ta_S"

    def line(self) -> str:
        vals = [self.y_H, self.y_T, self.y_P, self.y_S, self.y_F, *self.a]
        return "\t".join([self.item_id] + [repr(float(v)) for v in vals])

    @classmethod
    def parse(cls, line: str) -> "PredictionBreakdown":
        parts = line.rstrip("\n").split("\t")
        v = [float(x) for x in parts[1:]]
        return cls(parts[0], *v[:5], a=tuple(v[5:9]))


def predict_batch(params, corpus, pairs, config) -> List[PredictionBreakdown]:
    batch = make_batch(corpus, pairs, config)
    out, _ = forward(params, batch, config)
    a = tuple(float(x) for x in out["a"])
    return [PredictionBreakdown(iid, float(out["H"][b]), float(out["T"][b]), float(out["P"][b]),
                                float(out["S"][b]), float(out["F"][b]), a,
                                float(out["status"][b]), float(out["trend"][b]))
            for b, (iid, _) in enumerate(pairs)]


def predict(item_id: str, T: int, corpus: Corpus, params: ParamStore, config: PareConfig) -> PredictionBreakdown:
    return predict_batch(params, corpus, [(item_id, T)], config)[0]


# ---------------------------------------------------- single-item heads

def head_history(history, params: ParamStore, alpha: float):
    """``(y_status, y_trend, y_H)`` from the popularity history ``p_{t_r} .. p_{T-1}``."""
    history = np.asarray(history, dtype=np.float64)
    y_status = ema(history, alpha)
    H, _ = lstm_sequence(history, params)
    y_trend = float(H @ params["head_H.W"][:, 0] + params["head_H.b"][0])
    return y_status, y_trend, y_status + y_trend


def head_temporal(item: int, T: int, t_r: int, params: ParamStore) -> float:
    table = params["time_emb"]
    rows = table.shape[0]
    if not (0 <= T < rows and 0 <= t_r < rows):
        raise IndexError(f"bin outside the time table (T={T}, t_r={t_r}, rows={rows})")
    if not 0 <= item < params["item_emb"].shape[0]:
        raise IndexError(f"item row {item} outside the item table")
    e_T, e_r = table[T], table[t_r]
    x = np.concatenate([e_T, e_r, e_T - e_r, params["item_emb"][item]])
    y, _ = affine(x, params["head_T.W"], params["head_T.b"], "relu")
    return float(y[0])


def head_periodic(categories, period: int, params: ParamStore, omega: int) -> float:
    categories = np.asarray(categories, dtype=np.float64)
    if categories.size == 0:
        raise ValueError("periodic head needs at least one category (C = 0)")
    sel = periodic_selector(categories, period, omega)[0]
    e_p = embed(sel, params["periodic_emb"])
    y, _ = affine(e_p, params["head_P.W"], params["head_P.b"], "relu")
    return float(y[0])


def head_side(side_info: Sequence, params: ParamStore) -> float:
    M = sum(1 for name in params if name.startswith("side_emb."))
    if len(side_info) != M:
        raise ValueError(f"expected {M} side-info fields, got {len(side_info)}")
    embs = [embed(np.asarray(s, dtype=np.float64), params[f"side_emb.{j}"]) for j, s in enumerate(side_info)]
    y, _ = affine(np.concatenate(embs), params["head_S.W"], params["head_S.b"], "relu")
    return float(y[0])
