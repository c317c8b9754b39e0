"""CRNN azimuth tracker: feature extractor F, DoA estimator E, pretraining.

The feature extractor is five conv blocks (conv3x3-BN-ReLU twice, then
max pooling) followed by a unidirectional GRU; the estimator is three
fully connected layers ending in 180 sigmoid units. Variable-length
batches are padded in time with masked batchnorm statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import features
from .autodiff import (
    AdamState,
    BatchNormState,
    Tensor,
    adam_step,
    batchnorm2d,
    conv2d,
    gru_forward,
    init_gru_params,
    linear,
    maxpool2d,
    relu,
    sigmoid,
    tanh,
    tsum,
    zero_grads,
)
from .autodiff import tensor as T


@dataclass
class CrnnConfig:
    in_channels: int = 18  # 2M for the 9-channel array
    conv_channels: int = 64
    conv_blocks: int = 5
    freq_pools: tuple = (4, 2, 2, 2, 2)
    time_pools: tuple = (1, 1, 1, 1, 5)
    gru_hidden: int = 256
    fc_widths: tuple = (512, 256, 180)

    def __post_init__(self):
        if len(self.freq_pools) != self.conv_blocks or len(self.time_pools) != self.conv_blocks:
            raise ValueError("pool lists must have one entry per conv block")
        if self.fc_widths[-1] != features.GRID_SIZE:
            raise ValueError(f"estimator output width must be {features.GRID_SIZE}")

    @property
    def time_pool_total(self):
        return int(np.prod(self.time_pools))

    def pooled_freq(self, k: int = features.NUM_BINS) -> int:
        for p in self.freq_pools:
            k //= p
        return k

    def pooled_len(self, l: int) -> int:
        for p in self.time_pools:
            l //= p
        return l

    @property
    def gru_input(self):
        return self.conv_channels * self.pooled_freq()

    def to_dict(self):
        return {
            "in_channels": self.in_channels,
            "conv_channels": self.conv_channels,
            "conv_blocks": self.conv_blocks,
            "freq_pools": list(self.freq_pools),
            "time_pools": list(self.time_pools),
            "gru_hidden": self.gru_hidden,
            "fc_widths": list(self.fc_widths),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            in_channels=d["in_channels"],
            conv_channels=d["conv_channels"],
            conv_blocks=d["conv_blocks"],
            freq_pools=tuple(d["freq_pools"]),
            time_pools=tuple(d["time_pools"]),
            gru_hidden=d["gru_hidden"],
            fc_widths=tuple(d["fc_widths"]),
        )


def toy_config() -> CrnnConfig:
    """Shrunk preset for desk-scale runs."""
    return CrnnConfig(conv_channels=8, gru_hidden=32, fc_widths=(64, 64, 180))


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


class CrnnModel:
    """Parameter container plus forward passes for F and E."""

    def __init__(self, cfg: CrnnConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[str, BatchNormState] = {}
        if rng is not None:
            self._init(rng)

    def _init(self, rng):
        cfg = self.cfg
        c_in = cfg.in_channels
        for b in range(cfg.conv_blocks):
            for j in (1, 2):
                cin = c_in if j == 1 else cfg.conv_channels
                fan = cin * 9
                self.params[f"f.b{b}.conv{j}.w"] = _uniform(rng, fan, (cfg.conv_channels, cin, 3, 3))
                self.params[f"f.b{b}.conv{j}.b"] = Tensor(np.zeros(cfg.conv_channels), requires_grad=True)
                self.params[f"f.b{b}.bn{j}.gamma"] = Tensor(np.ones(cfg.conv_channels), requires_grad=True)
                self.params[f"f.b{b}.bn{j}.beta"] = Tensor(np.zeros(cfg.conv_channels), requires_grad=True)
                self.bn_states[f"f.b{b}.bn{j}"] = BatchNormState(cfg.conv_channels)
            c_in = cfg.conv_channels
        self.params.update(init_gru_params(rng, cfg.gru_input, cfg.gru_hidden, "f.gru"))
        widths = [cfg.gru_hidden] + list(cfg.fc_widths)
        for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            self.params[f"e.fc{i}.w"] = _uniform(rng, w_in, (w_in, w_out))
            self.params[f"e.fc{i}.b"] = Tensor(np.zeros(w_out), requires_grad=True)

    # -- parameter bookkeeping --------------------------------------

    def feature_param_names(self):
        return [k for k in self.params if k.startswith("f.")]

    def estimator_param_names(self):
        return [k for k in self.params if k.startswith("e.")]

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {k: p.data.copy() for k, p in self.params.items()}
        for k, s in self.bn_states.items():
            out[f"{k}.running_mean"] = s.running_mean.copy()
            out[f"{k}.running_var"] = s.running_var.copy()
        return out

    def load_state(self, arrays: dict[str, np.ndarray]):
        for k, p in self.params.items():
            p.data = np.array(arrays[k], dtype=float)
        for k, s in self.bn_states.items():
            s.running_mean = np.array(arrays[f"{k}.running_mean"], dtype=float)
            s.running_var = np.array(arrays[f"{k}.running_var"], dtype=float)

    @classmethod
    def from_state(cls, cfg: CrnnConfig, arrays: dict[str, np.ndarray]):
        model = cls(cfg, rng=np.random.default_rng(0))
        model.load_state(arrays)
        return model

    # -- forward passes ---------------------------------------------

    def forward_features(self, batch: list[np.ndarray], training: bool):
        """F on a list of [2M, K, L] inputs; returns list of [L', H] Tensors.

        Inputs are padded in time to the batch maximum; batchnorm
        statistics in training mode cover valid columns only, and padded
        columns are re-zeroed after every layer so padding never leaks.
        """
        cfg = self.cfg
        lengths = np.array([x.shape[2] for x in batch])
        if np.any(lengths < cfg.time_pool_total):
            raise ValueError(f"inputs need at least {cfg.time_pool_total} frames")
        l_max = int(lengths.max())
        n = len(batch)
        data = np.zeros((n, cfg.in_channels, features.NUM_BINS, l_max))
        for i, item in enumerate(batch):
            if item.shape[0] != cfg.in_channels or item.shape[1] != features.NUM_BINS:
                raise ValueError(
                    f"expected input [{cfg.in_channels}, {features.NUM_BINS}, L], got {item.shape}"
                )
            data[i, :, :, : item.shape[2]] = item
        x = Tensor(data)
        cur_len = lengths.copy()
        for b in range(cfg.conv_blocks):
            w_cur = x.shape[3]
            mask = (np.arange(w_cur)[None, :] < cur_len[:, None]).astype(float)
            mask_t = Tensor(mask[:, None, None, :])
            homogeneous = bool(np.all(cur_len == w_cur))
            stat_mask = None if homogeneous else mask
            for j in (1, 2):
                x = conv2d(x, self.params[f"f.b{b}.conv{j}.w"], self.params[f"f.b{b}.conv{j}.b"])
                if not homogeneous:
                    x = T.mul(x, mask_t)
                x = batchnorm2d(x, self.params[f"f.b{b}.bn{j}.gamma"], self.params[f"f.b{b}.bn{j}.beta"],
                                self.bn_states[f"f.b{b}.bn{j}"], training, mask=stat_mask)
                x = relu(x)
                if not homogeneous:
                    x = T.mul(x, mask_t)
            x = maxpool2d(x, (cfg.freq_pools[b], cfg.time_pools[b]))
            cur_len = cur_len // cfg.time_pools[b]
        seqs = []
        for i in range(n):
            li = int(cur_len[i])
            xi = x[i, :, :, :li]  # [C, F', L']
            xi = xi.reshape(cfg.conv_channels * self.cfg.pooled_freq(), li)
            xi = xi.transpose()  # [L', C*F']
            seq, _ = gru_forward(xi, self.params, "f.gru")
            seqs.append(seq)
        return seqs

    def forward_estimator(self, seq: Tensor) -> Tensor:
        h = tanh(linear(seq, self.params["e.fc0.w"], self.params["e.fc0.b"]))
        h = relu(linear(h, self.params["e.fc1.w"], self.params["e.fc1.b"]))
        return sigmoid(linear(h, self.params["e.fc2.w"], self.params["e.fc2.b"]))

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode likelihood map [L', 180] for a single input."""
        seqs = self.forward_features([x], training=False)
        return self.forward_estimator(seqs[0]).data


def sst_loss(preds: list[Tensor], targets: list[np.ndarray]) -> Tensor:
    """Mean over the batch of squared L2 norms of the prediction error."""
    if len(preds) != len(targets):
        raise ValueError("batch size mismatch between predictions and targets")
    total = None
    for p, t in zip(preds, targets):
        if p.shape != np.asarray(t).shape:
            raise ValueError(f"prediction {p.shape} vs target {np.asarray(t).shape}")
        d = T.sub(p, Tensor(t))
        s = tsum(T.mul(d, d))
        total = s if total is None else T.add(total, s)
    return T.mul(total, Tensor(1.0 / len(preds)))


def pool_to_output_frames(values: np.ndarray, cfg: CrnnConfig) -> np.ndarray:
    """Align full-rate frame labels to the pooled output rate.

    Takes the center frame of each pooled group (index P*g + P//2 for
    total time pooling P).
    """
    p = cfg.time_pool_total
    l_out = cfg.pooled_len(values.shape[0])
    idx = p * np.arange(l_out) + p // 2
    return values[idx]


@dataclass
class TrainItem:
    """One precomputed training example."""

    x: np.ndarray  # [2M, K, L]
    target: np.ndarray  # [L', J] pooled likelihood map
    gt_track: features.DoaTrack  # pooled ground truth
    meta: dict = field(default_factory=dict)


def make_train_item(x: np.ndarray, track: features.DoaTrack, cfg: CrnnConfig,
                    meta: dict | None = None) -> TrainItem:
    full_map = features.encode_likelihood(track)
    target = pool_to_output_frames(full_map, cfg)
    gt = features.DoaTrack(
        azimuth_rad=pool_to_output_frames(track.azimuth_rad, cfg),
        active=pool_to_output_frames(track.active, cfg),
    )
    return TrainItem(x=x, target=target, gt_track=gt, meta=meta or {})


def infer(x: np.ndarray, model: CrnnModel, vad: np.ndarray) -> features.DoaTrack:
    """Peak-decoded track at the pooled frame rate, gated by the VAD."""
    pred = model.predict(x)
    active = pool_to_output_frames(np.asarray(vad, dtype=bool), model.cfg)
    if active.shape[0] != pred.shape[0]:
        raise ValueError("VAD length inconsistent with model output frames")
    return features.decode_peak(pred, active)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0


def evaluate_items(model: CrnnModel, items: list[TrainItem]):
    """Frame-pooled MAE/Acc over a list of items (eval mode)."""
    from .evaluation import frame_errors_deg

    errors = []
    for item in items:
        pred = model.predict(item.x)
        est = features.decode_peak(pred, item.gt_track.active)
        errors.append(frame_errors_deg(est, item.gt_track))
    all_err = np.concatenate(errors) if errors else np.array([])
    if all_err.size == 0:
        return float("nan"), float("nan")
    mae = float(np.mean(all_err))
    acc = float(100.0 * np.mean(all_err < 5.0))
    return mae, acc


def pretrain(train_items: list[TrainItem], val_items: list[TrainItem], cfg: CrnnConfig,
             train_cfg: TrainConfig, log=None, init_state=None, start_epoch: int = 0,
             start_step: int = 0):
    """Adam training of F and E on the MSE tracking loss.

    Returns (best_state_arrays, history). The returned checkpoint is the
    epoch with the best validation MAE. Passing ``init_state`` resumes
    from an earlier checkpoint with monotone epoch/step counters.
    """
    rng = np.random.default_rng(train_cfg.seed)
    model = CrnnModel(cfg, rng=rng)
    if init_state is not None:
        model.load_state(init_state)
    opt = AdamState(model.params, lr=train_cfg.lr)
    best_mae = np.inf
    best_state = model.state_arrays()
    history = []
    step = start_step
    for epoch in range(start_epoch, start_epoch + train_cfg.epochs):
        order = rng.permutation(len(train_items))
        epoch_losses = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [train_items[i] for i in order[start : start + train_cfg.batch_size]]
            zero_grads(model.params)
            seqs = model.forward_features([b.x for b in batch], training=True)
            preds = [model.forward_estimator(s) for s in seqs]
            loss = sst_loss(preds, [b.target for b in batch])
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite training loss at step {step}")
            loss.backward()
            adam_step(model.params, opt)
            epoch_losses.append(loss.item())
            step += 1
        val_mae, val_acc = evaluate_items(model, val_items)
        rec = {
            "epoch": epoch,
            "loss": float(np.mean(epoch_losses)),
            "val_mae_deg": val_mae,
            "val_acc_pct": val_acc,
            "step": step,
        }
        history.append(rec)
        if log is not None:
            log(rec)
        if val_mae < best_mae:
            best_mae = val_mae
            best_state = model.state_arrays()
    return best_state, history
