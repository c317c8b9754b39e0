"""Importance-weighted adversarial adaptation of the pretrained tracker.

Five parameter sets participate: the frozen source feature extractor
F_s, the trainable target copy F_t and estimator E_t, the adversarial
domain discriminator D and the weighting discriminator D_w. One
combined backward pass realizes the minimax: D ascends the adversarial
objective while a gradient reversal layer makes F_t descend it.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import features
from .autodiff import (
    AdamState,
    Tensor,
    adam_step,
    gru_forward,
    init_gru_params,
    linear,
    relu,
    sigmoid,
    zero_grads,
)
from .autodiff import tensor as T
from .autodiff.layers import BCE_EPS
from .tracker import CrnnConfig, CrnnModel, TrainItem, evaluate_items, sst_loss


@dataclass
class DiscriminatorConfig:
    input_size: int = 256  # feature dimension of the tracker GRU output
    gru_hidden: int = 256
    fc_widths: tuple = (128, 1)

    def __post_init__(self):
        if self.fc_widths[-1] != 1:
            raise ValueError("discriminator must end in a single output unit")


class Discriminator:
    """GRU over a feature sequence; final hidden state -> 128-ReLU -> sigmoid."""

    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator, prefix: str = "d"):
        self.cfg = cfg
        self.prefix = prefix
        self.params = init_gru_params(rng, cfg.input_size, cfg.gru_hidden, f"{prefix}.gru")
        widths = [cfg.gru_hidden] + list(cfg.fc_widths)
        for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            bound = 1.0 / math.sqrt(w_in)
            self.params[f"{prefix}.fc{i}.w"] = Tensor(
                rng.uniform(-bound, bound, (w_in, w_out)), requires_grad=True)
            self.params[f"{prefix}.fc{i}.b"] = Tensor(np.zeros(w_out), requires_grad=True)

    def forward(self, seq: Tensor) -> Tensor:
        """Probability that the sequence comes from the source domain."""
        if seq.shape[0] < 1:
            raise ValueError("discriminator needs a non-empty sequence")
        _, final = gru_forward(seq, self.params, f"{self.prefix}.gru")
        h = relu(linear(final, self.params[f"{self.prefix}.fc0.w"], self.params[f"{self.prefix}.fc0.b"]))
        out = sigmoid(linear(h, self.params[f"{self.prefix}.fc1.w"], self.params[f"{self.prefix}.fc1.b"]))
        return out.reshape(())

    def forward_np(self, seq: np.ndarray) -> float:
        return float(self.forward(Tensor(seq)).data)

    def state_arrays(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, arrays):
        for k, p in self.params.items():
            p.data = np.array(arrays[k], dtype=float)


@dataclass
class LambdaSchedule:
    """Sigmoid ramp of the adversarial trade-off towards its upper bound u."""

    u: float
    total_steps: int
    growth: float = 10.0

    def progress(self, step: int) -> float:
        if self.total_steps <= 0:
            return 0.0
        return self.growth * step / self.total_steps

    def lambda_at(self, step: int) -> float:
        return self.lambda_from_progress(self.progress(step))

    def lambda_from_progress(self, p: float) -> float:
        return 2.0 * self.u / (1.0 + math.exp(-p)) - self.u


def compute_importance_weights(source_features: list[np.ndarray], dw: Discriminator) -> np.ndarray:
    """Per-sample weights 1 - D_w(o_s), normalized to batch mean one.

    No gradient flows anywhere: the weights are constants in the
    adversarial loss.
    """
    if len(source_features) < 1:
        raise ValueError("need at least one source sample")
    raw = np.array([1.0 - dw.forward_np(o) for o in source_features])
    mean = raw.mean()
    if mean <= 0.0:
        warnings.warn("all importance weights are zero; falling back to uniform weights")
        return np.ones_like(raw)
    return raw / mean


def da_loss(source_probs: list[Tensor], target_probs: list[Tensor], weights) -> Tensor:
    """Weighted adversarial objective (maximized by D, minimized by F_t):
    (1/N) sum[ w_n log D(o_s) + log(1 - D(o_t)) ].
    """
    if len(source_probs) != len(target_probs):
        raise ValueError("source/target batch sizes differ")
    n = len(source_probs)
    weights = np.asarray(weights, dtype=float)
    total = None
    for w, ps, pt in zip(weights, source_probs, target_probs):
        term = T.add(
            T.mul(Tensor(w), T.log(T.clip(ps, BCE_EPS, 1.0 - BCE_EPS))),
            T.log(T.sub(Tensor(1.0), T.clip(pt, BCE_EPS, 1.0 - BCE_EPS))),
        )
        total = term if total is None else T.add(total, term)
    return T.mul(total, Tensor(1.0 / n))


def dw_loss(source_probs: list[Tensor], target_probs: list[Tensor]) -> Tensor:
    """Binary cross entropy for the weighting discriminator:
    -(1/N) sum[ log D_w(o_s) + log(1 - D_w(o_t)) ].
    """
    return T.mul(da_loss(source_probs, target_probs, np.ones(len(source_probs))), Tensor(-1.0))


def params_hash(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrays[k]).tobytes())
    return h.hexdigest()


@dataclass
class AdaptConfig:
    mode: str = "iwda"  # so | da | iwda
    u: float = 0.001
    epochs: int = 60
    batch_size: int = 16
    lr: float = 1e-4
    patience: int = 10
    warmup_steps: int = 200  # steps with importance weights forced to one
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("so", "da", "iwda"):
            raise ValueError(f"unknown adaptation mode {self.mode!r}")
        if self.u < 0:
            raise ValueError("u must be >= 0")


class AdaptState:
    """Everything mutated by adapt_step."""

    def __init__(self, cfg: CrnnConfig, pretrained: dict[str, np.ndarray], acfg: AdaptConfig,
                 total_steps: int):
        self.acfg = acfg
        self.rng = np.random.default_rng(acfg.seed)
        self.f_s = CrnnModel.from_state(cfg, pretrained)
        for p in self.f_s.params.values():
            p.requires_grad = False
        self.f_s_hash = params_hash(self.f_s.state_arrays())
        self.model_t = CrnnModel.from_state(cfg, pretrained)
        dcfg = DiscriminatorConfig(input_size=cfg.gru_hidden)
        self.disc_d = Discriminator(dcfg, self.rng, prefix="d")
        self.disc_dw = Discriminator(dcfg, self.rng, prefix="dw")
        self.opt_ft = AdamState(self.model_t.params, lr=acfg.lr)
        self.opt_d = AdamState(self.disc_d.params, lr=acfg.lr)
        self.opt_dw = AdamState(self.disc_dw.params, lr=acfg.lr)
        self.schedule = LambdaSchedule(u=acfg.u, total_steps=total_steps)
        self.step = 0

    def source_features(self, items: list[TrainItem]) -> list[np.ndarray]:
        """Frozen-extractor features o_s = F_s(x_s), eval mode, no gradients."""
        seqs = self.f_s.forward_features([it.x for it in items], training=False)
        return [s.data.copy() for s in seqs]


def adapt_step(state: AdaptState, source_batch: list[TrainItem], target_batch: list[TrainItem],
               source_feats: list[np.ndarray], forced_uniform_weights: bool | None = None) -> dict:
    """One combined optimizer step on L_SST + lambda * L_DA + L_W.

    source_feats are the precomputed frozen features F_s(x_s) for
    source_batch. Returns a step record with losses and weight stats.
    """
    acfg = state.acfg
    adversarial = acfg.mode in ("da", "iwda")
    if adversarial and len(source_batch) != len(target_batch):
        raise ValueError("source and target batches must have equal size")
    lam = state.schedule.lambda_at(state.step) if adversarial else 0.0

    zero_grads(state.model_t.params)
    zero_grads(state.disc_d.params)
    zero_grads(state.disc_dw.params)

    seqs_src = state.model_t.forward_features([b.x for b in source_batch], training=True)
    preds = [state.model_t.forward_estimator(s) for s in seqs_src]
    l_sst = sst_loss(preds, [b.target for b in source_batch])
    rec = {"step": state.step, "lambda": lam, "l_sst": l_sst.item(),
           "l_da": float("nan"), "l_w": float("nan"),
           "w_mean_raw": float("nan"), "w_min": float("nan"), "w_max": float("nan")}
    if not np.isfinite(l_sst.item()):
        raise FloatingPointError(f"non-finite tracking loss at step {state.step}")
    # Backward the tracking branch before the adversarial graph is built:
    # gradients accumulate across backward passes, and releasing the
    # source-batch activations first halves peak memory.
    l_sst.backward()
    del seqs_src, preds, l_sst

    if adversarial:
        seqs_tgt = state.model_t.forward_features([b.x for b in target_batch], training=True)
        if forced_uniform_weights is None:
            forced_uniform_weights = acfg.mode != "iwda" or state.step < acfg.warmup_steps
        if forced_uniform_weights:
            weights = np.ones(len(source_batch))
            rec["w_mean_raw"] = 1.0
        else:
            raw = np.array([1.0 - state.disc_dw.forward_np(o) for o in source_feats])
            mean = raw.mean()
            weights = raw / mean if mean > 0 else np.ones_like(raw)
            rec["w_mean_raw"] = float(mean)
        rec["w_min"] = float(weights.min())
        rec["w_max"] = float(weights.max())

        probs_s = [state.disc_d.forward(Tensor(o)) for o in source_feats]
        probs_t = [state.disc_d.forward(T.grad_reverse(s, lam)) for s in seqs_tgt]
        l_da = da_loss(probs_s, probs_t, weights)
        adv = T.mul(l_da, Tensor(-1.0))  # D descends -L_DA, i.e. ascends L_DA
        rec["l_da"] = l_da.item()

        if acfg.mode == "iwda":
            probs_s_w = [state.disc_dw.forward(Tensor(o)) for o in source_feats]
            probs_t_w = [state.disc_dw.forward(Tensor(s.data.copy())) for s in seqs_tgt]
            l_w = dw_loss(probs_s_w, probs_t_w)
            adv = T.add(adv, l_w)
            rec["l_w"] = l_w.item()

        if not np.isfinite(adv.item()):
            raise FloatingPointError(f"non-finite adaptation loss at step {state.step}")
        adv.backward()

    adam_step(state.model_t.params, state.opt_ft)
    if adversarial:
        adam_step(state.disc_d.params, state.opt_d)
        if acfg.mode == "iwda":
            adam_step(state.disc_dw.params, state.opt_dw)
    state.step += 1
    return rec


@dataclass
class AdaptResult:
    best_state: dict
    best_val_mae: float
    history: list = field(default_factory=list)
    dw_state: dict = field(default_factory=dict)
    f_s_hash_start: str = ""
    f_s_hash_end: str = ""
    stopped_epoch: int = -1


def adapt_loop(pretrained: dict[str, np.ndarray], cfg: CrnnConfig,
               source_items: list[TrainItem], target_items: list[TrainItem],
               val_items: list[TrainItem], acfg: AdaptConfig, log=None) -> AdaptResult:
    """Full adaptation run with validation-MAE checkpointing and early stop."""
    if not val_items:
        raise ValueError("adaptation requires a non-empty validation set")
    n_pairs = min(len(source_items), len(target_items)) if acfg.mode != "so" else len(source_items)
    steps_per_epoch = max(1, n_pairs // acfg.batch_size)
    state = AdaptState(cfg, pretrained, acfg, total_steps=acfg.epochs * steps_per_epoch)

    feat_cache: dict[int, np.ndarray] = {}

    def feats_for(batch):
        missing = [i for i, it in enumerate(batch) if id(it) not in feat_cache]
        if missing:
            new = state.source_features([batch[i] for i in missing])
            for i, f in zip(missing, new):
                feat_cache[id(batch[i])] = f
        return [feat_cache[id(it)] for it in batch]

    best_mae = np.inf
    best_state = state.model_t.state_arrays()
    history = []
    since_improve = 0
    stopped = acfg.epochs - 1
    for epoch in range(acfg.epochs):
        src_order = state.rng.permutation(len(source_items))
        tgt_order = state.rng.permutation(len(target_items)) if target_items else np.array([], int)
        for s in range(steps_per_epoch):
            src_batch = [source_items[i] for i in
                         src_order[(s * acfg.batch_size) % len(src_order) :][: acfg.batch_size]]
            if acfg.mode == "so":
                tgt_batch = []
            else:
                tgt_batch = [target_items[i] for i in
                             tgt_order[(s * acfg.batch_size) % len(tgt_order) :][: acfg.batch_size]]
                tgt_batch = tgt_batch[: len(src_batch)]
                src_batch = src_batch[: len(tgt_batch)]
            rec = adapt_step(state, src_batch, tgt_batch, feats_for(src_batch))
            rec["epoch"] = epoch
            history.append(rec)
        val_mae, val_acc = evaluate_items(state.model_t, val_items)
        history[-1]["val_mae_deg"] = val_mae
        history[-1]["val_acc_pct"] = val_acc
        if log is not None:
            log(history[-1])
        if val_mae < best_mae:
            best_mae = val_mae
            best_state = state.model_t.state_arrays()
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= acfg.patience:
                stopped = epoch
                break
    return AdaptResult(
        best_state=best_state,
        best_val_mae=float(best_mae),
        history=history,
        dw_state=state.disc_dw.state_arrays(),
        f_s_hash_start=state.f_s_hash,
        f_s_hash_end=params_hash(state.f_s.state_arrays()),
        stopped_epoch=stopped,
    )
