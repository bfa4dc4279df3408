import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pare.model import (HEADS, Dims, PareConfig, PredictionBreakdown, ema, fuse, fusion_weights,
                        head_history, head_periodic, head_side, head_temporal, init_params, loss,
                        loss_and_grads, make_batch, periodic_selector, predict, predict_batch)
from pare.numerics import gradient_check
from pare.synthetic import SyntheticSpec, generate
from pare.trainer import build_examples


def ema_oracle(seq, alpha):
    # direct unrolling: weight alpha(1-alpha)^k on the k-th most recent value, leftover on the first
    n = len(seq)
    if n == 0:
        return 0.0
    total = (1 - alpha) ** (n - 1) * seq[0]
    for k in range(1, n):
        total += alpha * (1 - alpha) ** (n - 1 - k) * seq[k]
    return total


def zero_store(d=2, h=2, fields=(2,), C=2, omega=3, bins=5, items=3):
    dims = Dims(bins, items, [C, *fields[1:]] if fields else [C])
    store = init_params(dims, PareConfig(d=d, lstm_hidden=h, omega=omega))
    for name in store:
        store.values[name][...] = 0.0
    return store


# ------------------------------------------------------------------- EMA

def test_ema_hand_example():
    assert ema([4, 2, 8], 0.5) == 5.5


def test_ema_empty_is_zero():
    assert ema([], 0.3) == 0.0


@settings(max_examples=200)
@given(st.lists(st.integers(0, 10_000), max_size=50), st.sampled_from([0.0, 0.25, 0.5, 1.0]))
def test_ema_matches_unrolled_recursion(seq, alpha):
    assert ema(seq, alpha) == pytest.approx(ema_oracle(seq, alpha), abs=1e-12, rel=1e-12)


@given(st.lists(st.integers(0, 500), min_size=1, max_size=50))
def test_ema_closed_forms(seq):
    assert ema(seq, 1.0) == seq[-1]
    assert ema(seq, 0.0) == seq[0]


# ----------------------------------------------------------------- heads

def test_history_head_cold_item_zero_params():
    assert head_history([], zero_store(), 0.5) == (0.0, 0.0, 0.0)


def test_history_head_alpha_one_status_is_last_value():
    store = init_params(Dims(5, 2, [2]), PareConfig(d=2, lstm_hidden=3), seed=1)
    status, trend, y = head_history([3, 9, 4], store, 1.0)
    assert status == 4.0
    assert y == status + trend


def test_history_head_cold_trend_is_bias():
    store = zero_store()
    store.values["head_H.b"][0] = 0.7
    assert head_history([], store, 0.5) == (0.0, 0.7, 0.7)


def test_temporal_head_zero_params():
    assert head_temporal(1, 3, 2, zero_store()) == 0.0


def test_temporal_head_hand_example():
    s = zero_store(d=2)
    s.values["time_emb"][4] = [1.0, 2.0]
    s.values["time_emb"][2] = [0.5, -1.0]
    s.values["item_emb"][1] = [3.0, 0.0]
    s.values["head_T.W"][:, 0] = [1, 0, 0, 1, 2, 1, 0.5, 0]
    s.values["head_T.b"][0] = -1.0
    # x = [1, 2, 0.5, -1, 0.5, 3, 3, 0]
    expected = max(0.0, 1 * 1 + 1 * -1 + 2 * 0.5 + 1 * 3 + 0.5 * 3 - 1.0)
    assert head_temporal(1, 4, 2, s) == pytest.approx(expected, abs=1e-15)


def test_temporal_head_same_bin_has_zero_difference():
    s = zero_store(d=2)
    s.values["time_emb"][3] = [1.0, 2.0]
    w = np.zeros(8)
    w[4:6] = 100.0  # weights on e_T - e_tr only
    s.values["head_T.W"][:, 0] = w
    s.values["head_T.b"][0] = 0.25
    assert head_temporal(0, 3, 3, s) == 0.25


def test_temporal_head_out_of_range():
    with pytest.raises(IndexError):
        head_temporal(0, 99, 1, zero_store())
    with pytest.raises(IndexError):
        head_temporal(7, 2, 1, zero_store())


def test_periodic_selector_row_major():
    sel = periodic_selector(np.array([1.0, 0.0]), 1, 3)[0]
    assert np.flatnonzero(sel).tolist() == [1]


def test_periodic_two_categories_is_sum_of_rows():
    s = zero_store(C=2, omega=3, d=2)
    E = np.arange(12, dtype=float).reshape(6, 2)
    s.values["periodic_emb"][...] = E
    s.values["head_P.W"][:, 0] = [1.0, 0.0]
    j = 2
    assert head_periodic([1, 1], j, s, 3) == E[0 * 3 + j, 0] + E[1 * 3 + j, 0]


def test_periodic_zero_categories_gives_relu_bias():
    s = zero_store()
    s.values["periodic_emb"][...] = 5.0
    s.values["head_P.b"][0] = 0.3
    assert head_periodic([0, 0], 1, s, 3) == 0.3
    s.values["head_P.b"][0] = -0.3
    assert head_periodic([0, 0], 1, s, 3) == 0.0


def test_periodic_needs_categories():
    with pytest.raises(ValueError):
        head_periodic([], 0, zero_store(), 3)


def test_side_head_hand_example():
    s = zero_store(d=2, fields=(2, 3))
    s.values["side_emb.0"][...] = [[1.0, 2.0], [3.0, 4.0]]
    s.values["side_emb.1"][...] = [[0.5, 0.0], [0.0, 0.5], [1.0, 1.0]]
    s.values["head_S.W"][:, 0] = [1.0, -1.0, 2.0, 0.5]
    s.values["head_S.b"][0] = 0.1
    # e_1 = row0 + row1 = [4, 6]; e_2 = row2 = [1, 1]
    expected = 4 - 6 + 2 * 1 + 0.5 * 1 + 0.1
    assert head_side([[1, 1], [0, 0, 1]], s) == pytest.approx(expected, abs=1e-15)


def test_side_head_one_hot_picks_row():
    s = zero_store(d=2, fields=(3,), C=3)
    s.values["side_emb.0"][...] = [[1.0, 0.0], [0.0, 7.0], [2.0, 2.0]]
    s.values["head_S.W"][:, 0] = [0.0, 1.0]
    assert head_side([[0, 1, 0]], s) == 7.0


def test_side_head_zero_params_and_field_count():
    s = zero_store(fields=(2, 2))
    assert head_side([[1, 0], [0, 1]], s) == 0.0
    with pytest.raises(ValueError):
        head_side([[1, 0]], s)


# ---------------------------------------------------------------- fusion

def test_fuse_single_head_mask():
    y, a = fuse([3.5, 10.0, 10.0, 10.0], np.array([0.2, -1.0, 4.0, 0.0]), ["H"])
    assert y == 3.5
    assert a.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_fuse_equal_logits_unit_heads():
    y, _ = fuse([1.0, 1.0, 1.0, 1.0], np.zeros(4))
    assert y == pytest.approx(1.0, abs=1e-15)


def test_fuse_reported_weights():
    a = np.array([0.6259, 0.2573, 0.0422, 0.0746])
    y, got = fuse([2.0, 0.0, 0.0, 0.0], np.log(a))
    np.testing.assert_allclose(got, a / a.sum(), rtol=1e-12)
    assert y == pytest.approx(1.2518, abs=1e-12)


@settings(max_examples=300)
@given(st.lists(st.floats(-30, 30), min_size=4, max_size=4),
       st.sets(st.sampled_from(HEADS), min_size=1))
def test_fusion_weights_positive_and_normalised(logits, enabled):
    a = fusion_weights(np.array(logits), enabled)
    on = np.array([k in enabled for k in HEADS])
    assert np.all(a[on] > 0) and np.all(a[~on] == 0)
    assert abs(a.sum() - 1.0) < 1e-9


def test_all_heads_disabled():
    with pytest.raises(ValueError):
        fusion_weights(np.zeros(4), [])


def test_config_requires_history_or_temporal():
    with pytest.raises(ValueError):
        PareConfig(enabled_heads=("P", "S"))


# ------------------------------------------------------- whole-model tests

@pytest.fixture(scope="module")
def mini():
    sc = generate(SyntheticSpec(n_users=60, n_items=12, n_bins=20, n_categories=3, n_studios=4, rate=4.0, seed=3))
    return sc.corpus()


def test_zero_model_cold_item_predicts_zero(mini):
    config = PareConfig(d=4, lstm_hidden=4)
    params = init_params(Dims.of(mini), config)
    for name in params:
        params.values[name][...] = 0.0
    iid = next(i for i, s in mini.series.items() if s.release_bin > 1)
    p = predict(iid, mini.series[iid].release_bin, mini, params, config)
    assert (p.y_H, p.y_T, p.y_P, p.y_S, p.y_F) == (0.0, 0.0, 0.0, 0.0, 0.0)


def test_breakdown_is_convex_combination(mini):
    config = PareConfig(d=4, lstm_hidden=4)
    params = init_params(Dims.of(mini), config, seed=5)
    params.values["fusion.logits"][:] = [0.3, -0.2, 1.1, 0.0]
    T = mini.split.test_bin
    for p in predict_batch(params, mini, [(i, T) for i in mini.item_ids], config):
        ys = [p.y_H, p.y_T, p.y_P, p.y_S]
        assert p.y_F == pytest.approx(sum(a * y for a, y in zip(p.a, ys)), abs=1e-12)
        assert min(p.y_T, p.y_P, p.y_S) >= 0.0


def test_breakdown_line_round_trip():
    p = PredictionBreakdown("x", 1.5, 0.1, 0.0, 2.0, 0.3, (0.1, 0.2, 0.3, 0.4))
    back = PredictionBreakdown.parse(p.line())
    assert (back.item_id, back.y_H, back.y_F, back.a) == ("x", 1.5, 0.3, (0.1, 0.2, 0.3, 0.4))
    assert len(PredictionBreakdown.HEADER.split("\t")) == len(p.line().split("\t"))


def test_padded_batch_matches_single_rows(mini):
    config = PareConfig(d=4, lstm_hidden=4)
    params = init_params(Dims.of(mini), config, seed=2)
    T = mini.split.train_end_bin
    pairs = [(i, T) for i in mini.item_ids if mini.series[i].release_bin <= T]
    together = predict_batch(params, mini, pairs, config)
    for pair, p in zip(pairs, together):
        alone = predict(*pair, mini, params, config)
        assert alone.y_F == pytest.approx(p.y_F, abs=1e-12)


def test_time_lookup_clamps_future_bins(mini):
    T = mini.split.test_bin
    iid = mini.item_ids[0]
    clamp = make_batch(mini, [(iid, T)], PareConfig(d=4, lstm_hidden=4, time_lookup="clamp"))
    index = make_batch(mini, [(iid, T)], PareConfig(d=4, lstm_hidden=4))
    assert clamp.t[0] == mini.split.train_end_bin
    assert index.t[0] == T


def test_history_head_matches_batched_forward(mini):
    config = PareConfig(d=4, lstm_hidden=4, alpha=0.25)
    params = init_params(Dims.of(mini), config, seed=8)
    iid = max(mini.item_ids, key=lambda i: -mini.series[i].release_bin)
    T = mini.split.valid_bin
    status, trend, y = head_history(mini.series[iid].history(T), params, 0.25)
    p = predict(iid, T, mini, params, config)
    assert p.y_status == pytest.approx(status, abs=1e-12)
    assert p.y_H == pytest.approx(y, abs=1e-12)


@pytest.mark.parametrize("heads", [("H",), ("H", "T"), ("H", "T", "S"), ("H", "T", "P"), HEADS, ("T", "P")])
def test_full_loss_gradient(mini, heads):
    config = PareConfig(d=4, lstm_hidden=4, enabled_heads=heads)
    params = init_params(Dims.of(mini), config, seed=1)
    rng = np.random.default_rng(1)
    for name in params:
        params.values[name] += rng.normal(0, 0.3, params[name].shape)
    ex = build_examples(mini).train
    batch = make_batch(mini, [(e.item_id, e.t) for e in ex[::7][:12]], config)
    value, grads = loss_and_grads(params, batch, config)
    assert value == pytest.approx(loss(params, batch, config), rel=1e-12)
    rep = gradient_check(lambda p: loss(p, batch, config), params, grads, h=1e-5, tol=1e-4,
                         precise=lambda p: loss(p, batch, config, dtype=np.longdouble))
    assert rep.passed, rep.lines()


def test_disabled_heads_get_no_gradient(mini):
    config = PareConfig(d=4, lstm_hidden=4, enabled_heads=("H",))
    params = init_params(Dims.of(mini), config, seed=1)
    ex = build_examples(mini).train
    batch = make_batch(mini, [(e.item_id, e.t) for e in ex[:10]], config)
    _, grads = loss_and_grads(params, batch, config)
    for name in ("head_T.W", "head_P.W", "head_S.W", "time_emb", "periodic_emb"):
        assert not np.any(grads[name])
    assert grads["fusion.logits"].tolist() == [0.0, 0.0, 0.0, 0.0]
