"""Unit tests for the CRNN tracker: shapes, losses, training loop."""

import numpy as np
import pytest

from conftest import random_items, random_track, tiny_crnn_config
from sstda import features
from sstda.autodiff import Tensor
from sstda.tracker import (
    CrnnConfig,
    CrnnModel,
    TrainConfig,
    evaluate_items,
    infer,
    make_train_item,
    pool_to_output_frames,
    pretrain,
    sst_loss,
    toy_config,
)

# -- configuration ---------------------------------------------------


def test_config_round_trip():
    cfg = toy_config()
    assert CrnnConfig.from_dict(cfg.to_dict()) == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        CrnnConfig(freq_pools=(4, 2, 2))
    with pytest.raises(ValueError):
        CrnnConfig(fc_widths=(64, 64, 90))


def test_config_pooling_arithmetic():
    cfg = CrnnConfig()
    assert cfg.pooled_freq() == 4
    assert cfg.gru_input == 64 * 4
    assert cfg.time_pool_total == 5
    assert cfg.pooled_len(49) == 9
    toy = toy_config()
    assert toy.gru_input == 8 * 4


# -- shape contract --------------------------------------------------


def test_shape_contract_arithmetic_all_lengths():
    cfg = CrnnConfig()
    for l in range(5, 201):
        assert cfg.pooled_len(l) == l // 5


@pytest.mark.parametrize("l", [5, 7, 49, 101])
def test_default_model_shape_contract(rng, l):
    cfg = CrnnConfig()
    model = CrnnModel(cfg, rng=rng)
    x = 0.1 * rng.standard_normal((18, 257, l))
    pred = model.predict(x)
    assert pred.shape == (l // 5, 180)
    assert np.all((pred > 0.0) & (pred < 1.0))


def test_toy_model_shape_contract_dense(rng):
    cfg = toy_config()
    model = CrnnModel(cfg, rng=rng)
    for l in [5, 6, 9, 10, 24, 55, 200]:
        pred = model.predict(0.1 * rng.standard_normal((18, 257, l)))
        assert pred.shape == (l // 5, 180)


def test_forward_rejects_bad_shapes(rng):
    cfg = tiny_crnn_config()
    model = CrnnModel(cfg, rng=rng)
    with pytest.raises(ValueError):
        model.predict(rng.standard_normal((cfg.in_channels, 257, 4)))  # too short
    with pytest.raises(ValueError):
        model.predict(rng.standard_normal((cfg.in_channels + 1, 257, 10)))


def test_feature_sequence_shapes(rng):
    cfg = toy_config()
    model = CrnnModel(cfg, rng=rng)
    x = 0.1 * rng.standard_normal((18, 257, 49))
    seqs = model.forward_features([x], training=False)
    assert seqs[0].shape == (9, cfg.gru_hidden)


def test_zero_input_gives_zero_features(rng):
    cfg = tiny_crnn_config()
    model = CrnnModel(cfg, rng=rng)
    seqs = model.forward_features([np.zeros((cfg.in_channels, 257, 15))], training=False)
    np.testing.assert_array_equal(seqs[0].data, 0.0)


# -- estimator -------------------------------------------------------


def test_estimator_zero_weights_give_half(rng):
    cfg = tiny_crnn_config()
    model = CrnnModel(cfg, rng=rng)
    for name in model.estimator_param_names():
        model.params[name].data[:] = 0.0
    out = model.forward_estimator(Tensor(rng.standard_normal((4, cfg.gru_hidden))))
    np.testing.assert_array_equal(out.data, np.full((4, 180), 0.5))


def test_estimator_frame_permutation_equivariance(rng):
    cfg = tiny_crnn_config()
    model = CrnnModel(cfg, rng=rng)
    seq = rng.standard_normal((6, cfg.gru_hidden))
    perm = rng.permutation(6)
    out = model.forward_estimator(Tensor(seq)).data
    out_p = model.forward_estimator(Tensor(seq[perm])).data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


# -- variable-length batching ----------------------------------------


def test_eval_mode_padding_is_exact(rng):
    """Mixed-length eval batch equals per-item evaluation bit for bit."""
    cfg = tiny_crnn_config()
    model = CrnnModel(cfg, rng=rng)
    xs = [0.3 * rng.standard_normal((cfg.in_channels, 257, l)) for l in (25, 45, 10)]
    batched = model.forward_features(xs, training=False)
    for x, seq in zip(xs, batched):
        solo = model.forward_features([x], training=False)[0]
        np.testing.assert_array_equal(seq.data, solo.data)


def test_train_mode_batch_order_equivariance(rng):
    cfg = tiny_crnn_config()
    xs = [0.3 * rng.standard_normal((cfg.in_channels, 257, l)) for l in (25, 45, 10)]

    def run(order):
        model = CrnnModel(cfg, rng=np.random.default_rng(3))
        seqs = model.forward_features([xs[i] for i in order], training=True)
        return [s.data for s in seqs]

    a = run([0, 1, 2])
    b = run([2, 0, 1])
    # identical up to float summation order in the masked statistics
    np.testing.assert_allclose(a[0], b[1], atol=1e-12)
    np.testing.assert_allclose(a[1], b[2], atol=1e-12)
    np.testing.assert_allclose(a[2], b[0], atol=1e-12)


# -- loss ------------------------------------------------------------


def test_sst_loss_zero_at_target(rng):
    t = rng.random((9, 180))
    assert sst_loss([Tensor(t.copy())], [t]).item() == 0.0


def test_sst_loss_closed_form():
    pred = Tensor(np.full((9, 180), 0.6))
    target = np.full((9, 180), 0.5)
    val = sst_loss([pred], [target]).item()
    assert abs(val - 16.2) < 1e-9  # 0.01 * 9 * 180


def test_sst_loss_batch_order_invariant(rng):
    preds = [Tensor(rng.random((5, 180))) for _ in range(3)]
    targets = [rng.random((5, 180)) for _ in range(3)]
    a = sst_loss(preds, targets).item()
    b = sst_loss(preds[::-1], targets[::-1]).item()
    assert abs(a - b) < 1e-12


def test_sst_loss_shape_errors(rng):
    with pytest.raises(ValueError):
        sst_loss([Tensor(np.zeros((5, 180)))], [np.zeros((4, 180))])
    with pytest.raises(ValueError):
        sst_loss([Tensor(np.zeros((5, 180)))], [])


# -- label pooling ---------------------------------------------------


def test_pool_to_output_frames_center_rule():
    cfg = toy_config()
    values = np.arange(49)
    pooled = pool_to_output_frames(values, cfg)
    np.testing.assert_array_equal(pooled, 5 * np.arange(9) + 2)


def test_make_train_item_alignment(rng):
    cfg = tiny_crnn_config()
    track = random_track(rng, 25)
    x = rng.standard_normal((cfg.in_channels, 257, 25))
    item = make_train_item(x, track, cfg)
    assert item.target.shape == (5, 180)
    assert len(item.gt_track) == 5
    full = features.encode_likelihood(track)
    np.testing.assert_array_equal(item.target, full[5 * np.arange(5) + 2])


# -- inference -------------------------------------------------------


def test_infer_all_inactive_vad(rng):
    cfg = tiny_crnn_config()
    model = CrnnModel(cfg, rng=rng)
    x = 0.1 * rng.standard_normal((cfg.in_channels, 257, 25))
    track = infer(x, model, np.zeros(25, dtype=bool))
    assert not track.active.any()


def test_infer_deterministic(rng):
    cfg = tiny_crnn_config()
    model = CrnnModel(cfg, rng=rng)
    x = 0.1 * rng.standard_normal((cfg.in_channels, 257, 25))
    vad = np.ones(25, dtype=bool)
    a = infer(x, model, vad)
    b = infer(x, model, vad)
    np.testing.assert_array_equal(a.azimuth_rad, b.azimuth_rad)


def test_infer_vad_length_mismatch(rng):
    cfg = tiny_crnn_config()
    model = CrnnModel(cfg, rng=rng)
    x = 0.1 * rng.standard_normal((cfg.in_channels, 257, 25))
    with pytest.raises(ValueError):
        infer(x, model, np.ones(30, dtype=bool))


# -- training loop ---------------------------------------------------


def test_pretrain_reduces_loss_and_is_deterministic(rng):
    cfg = tiny_crnn_config()
    items = random_items(rng, cfg, 6, lengths=(15, 20))
    tcfg = TrainConfig(epochs=8, batch_size=3, lr=1e-3, seed=0)
    state1, hist1 = pretrain(items[:4], items[4:], cfg, tcfg)
    state2, hist2 = pretrain(items[:4], items[4:], cfg, tcfg)
    assert hist1[-1]["loss"] < hist1[0]["loss"]
    assert [h["loss"] for h in hist1] == [h["loss"] for h in hist2]
    for k in state1:
        np.testing.assert_array_equal(state1[k], state2[k])


def test_pretrain_checkpoint_is_best_validation(rng):
    cfg = tiny_crnn_config()
    items = random_items(rng, cfg, 6, lengths=(15,))
    tcfg = TrainConfig(epochs=6, batch_size=4, lr=1e-3, seed=1)
    state, hist = pretrain(items[:4], items[4:], cfg, tcfg)
    best = min(h["val_mae_deg"] for h in hist)
    model = CrnnModel.from_state(cfg, state)
    mae, _ = evaluate_items(model, items[4:])
    assert abs(mae - best) < 1e-9
    assert mae <= hist[-1]["val_mae_deg"] + 1e-9


def test_pretrain_resume_counters(rng):
    cfg = tiny_crnn_config()
    items = random_items(rng, cfg, 4, lengths=(15,))
    tcfg = TrainConfig(epochs=2, batch_size=2, lr=1e-3, seed=0)
    state, hist = pretrain(items[:3], items[3:], cfg, tcfg)
    _, hist2 = pretrain(items[:3], items[3:], cfg, tcfg, init_state=state,
                        start_epoch=2, start_step=hist[-1]["step"])
    assert [h["epoch"] for h in hist2] == [2, 3]
    assert hist2[0]["step"] > hist[-1]["step"]


def test_overfit_single_static_scene(rng):
    """Capacity check: toy-scale model memorizes one static-source scene."""
    cfg = tiny_crnn_config()
    track = features.DoaTrack(azimuth_rad=np.full(45, np.deg2rad(73.0)),
                              active=np.ones(45, dtype=bool))
    x = 0.3 * rng.standard_normal((cfg.in_channels, 257, 45))
    item = make_train_item(x, track, cfg)
    model = CrnnModel(cfg, rng=np.random.default_rng(0))
    from sstda.autodiff import AdamState, adam_step, zero_grads

    opt = AdamState(model.params, lr=3e-3)
    loss_val = np.inf
    for step in range(2000):
        zero_grads(model.params)
        seqs = model.forward_features([item.x], training=True)
        loss = sst_loss([model.forward_estimator(seqs[0])], [item.target])
        loss.backward()
        adam_step(model.params, opt)
        loss_val = loss.item()
        if loss_val < 0.01:
            break
    assert loss_val < 0.01, f"loss stuck at {loss_val:.4f} after {step + 1} steps"
    est = infer(item.x, model, track.active)
    err = np.abs(np.rad2deg(est.azimuth_rad) - 73.0)
    assert np.max(err) <= 2.0


def test_state_round_trip(rng):
    cfg = tiny_crnn_config()
    model = CrnnModel(cfg, rng=rng)
    arrays = model.state_arrays()
    clone = CrnnModel.from_state(cfg, arrays)
    x = 0.1 * rng.standard_normal((cfg.in_channels, 257, 15))
    np.testing.assert_array_equal(model.predict(x), clone.predict(x))
