"""Central finite-difference gradient checks for every differentiable op.

Shared by the test suite and the ``gradcheck`` CLI command.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    BatchNormState,
    Tensor,
    batchnorm2d,
    conv2d,
    gru_forward,
    init_gru_params,
    linear,
    maxpool2d,
    mse_loss,
    weighted_bce,
    zero_grads,
)
from .autodiff import tensor as T

OP_TOL = 1e-4
E2E_TOL = 1e-3
FD_H = 1e-5


def numeric_partial(make_loss, param: Tensor, idx, h=FD_H) -> float:
    orig = param.data[idx]
    param.data[idx] = orig + h
    lp = make_loss().item()
    param.data[idx] = orig - h
    lm = make_loss().item()
    param.data[idx] = orig
    return (lp - lm) / (2.0 * h)


def max_relative_error(make_loss, params: dict[str, Tensor], rng: np.random.Generator,
                       coords_per_param: int = 4, h=FD_H) -> float:
    """Worst relative error between backward() and central differences.

    A coordinate that fails at the base step is re-checked at h/10: strong
    local curvature (or a ReLU/maxpool kink inside the stencil) inflates
    the truncation error of the difference quotient without the analytic
    gradient being wrong, and shrinking h separates the two cases — a
    genuinely wrong derivative stays wrong at every step size.
    """
    zero_grads(params)
    loss = make_loss()
    loss.backward()
    worst = 0.0
    for p in params.values():
        flat = p.data.reshape(-1)
        n_coords = min(coords_per_param, flat.size)
        picks = rng.choice(flat.size, size=n_coords, replace=False)
        for k in picks:
            idx = np.unravel_index(k, p.data.shape)
            analytic = 0.0 if p.grad is None else float(p.grad[idx])

            def rel_err(step):
                numeric = numeric_partial(make_loss, p, idx, h=step)
                return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)

            err = rel_err(h)
            if err > OP_TOL:
                err = min(err, rel_err(h / 10.0))
            worst = max(worst, err)
    return worst


def _rand(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def check_elementwise(rng) -> float:
    x = _rand(rng, (3, 4))
    ops = [T.tanh, T.sigmoid, T.relu, T.exp,
           lambda t: T.log(T.add(T.mul(t, t), Tensor(1.0))),
           lambda t: T.clip(t, -0.8, 0.8)]
    worst = 0.0
    for op in ops:
        worst = max(worst, max_relative_error(lambda op=op: T.tsum(T.mul(op(x), Tensor(np.arange(12.0).reshape(3, 4)))),
                                              {"x": x}, rng, coords_per_param=6))
    return worst


def check_linear(rng) -> float:
    x = _rand(rng, (3, 5))
    w = _rand(rng, (5, 4))
    b = _rand(rng, (4,))
    weight = Tensor(rng.standard_normal((3, 4)))
    return max_relative_error(lambda: T.tsum(T.mul(linear(x, w, b), weight)),
                              {"x": x, "w": w, "b": b}, rng, coords_per_param=6)


def check_conv2d(rng) -> float:
    x = _rand(rng, (2, 2, 4, 4))
    k = _rand(rng, (3, 2, 3, 3))
    b = _rand(rng, (3,))
    weight = Tensor(rng.standard_normal((2, 3, 4, 4)))
    return max_relative_error(lambda: T.tsum(T.mul(conv2d(x, k, b), weight)),
                              {"x": x, "k": k, "b": b}, rng, coords_per_param=6)


def check_batchnorm(rng, training=True, mask=False) -> float:
    x = _rand(rng, (3, 2, 2, 5))
    g = Tensor(1.0 + 0.1 * rng.standard_normal(2), requires_grad=True)
    b = _rand(rng, (2,))
    m = None
    if mask:
        m = np.ones((3, 5))
        m[1, 3:] = 0.0
        m[2, 4:] = 0.0
    weight = Tensor(rng.standard_normal((3, 2, 2, 5)) * (1.0 if m is None else m[:, None, None, :]))

    def make_loss():
        state = BatchNormState(2)
        return T.tsum(T.mul(batchnorm2d(x, g, b, state, training, mask=m), weight))

    return max_relative_error(make_loss, {"x": x, "g": g, "b": b}, rng, coords_per_param=6)


def check_maxpool(rng) -> float:
    x = _rand(rng, (2, 2, 6, 9))
    weight = Tensor(rng.standard_normal((2, 2, 3, 1)))
    return max_relative_error(lambda: T.tsum(T.mul(maxpool2d(x, (2, 5)), weight)),
                              {"x": x}, rng, coords_per_param=8)


def check_gru(rng) -> float:
    params = init_gru_params(rng, 3, 4, "g")
    x = _rand(rng, (3, 3))
    weight = Tensor(rng.standard_normal((3, 4)))

    def make_loss():
        seq, _ = gru_forward(x, params, "g")
        return T.tsum(T.mul(seq, weight))

    return max_relative_error(make_loss, {**params, "x": x}, rng, coords_per_param=3)


def check_losses(rng) -> float:
    pred = _rand(rng, (2, 3))
    target = Tensor(rng.standard_normal((2, 3)))
    worst = max_relative_error(lambda: mse_loss(pred, target), {"pred": pred}, rng, coords_per_param=6)
    logits = _rand(rng, (4,))
    labels = Tensor(np.array([1.0, 0.0, 1.0, 0.0]))
    w = Tensor(np.array([1.0, 2.0, 0.5, 1.0]))
    worst = max(worst, max_relative_error(
        lambda: weighted_bce(T.sigmoid(logits), labels, w), {"logits": logits}, rng, coords_per_param=4))
    return worst


def check_grad_reverse(rng) -> float:
    """Double reversal with lambda 1 must restore the plain gradient."""
    x = _rand(rng, (3,))
    weight = Tensor(rng.standard_normal(3))

    def make_loss():
        return T.tsum(T.mul(T.grad_reverse(T.grad_reverse(x, 1.0), 1.0), weight))

    return max_relative_error(make_loss, {"x": x}, rng, coords_per_param=3)


def check_end_to_end(rng) -> float:
    """sst_loss through E(F(x)) on a tiny CRNN, spot-checked parameters."""
    from .tracker import CrnnConfig, CrnnModel, sst_loss

    cfg = CrnnConfig(in_channels=2, conv_channels=2, gru_hidden=3, fc_widths=(4, 4, 180))
    model = CrnnModel(cfg, rng=rng)
    batch = [rng.standard_normal((2, 257, 5)) * 0.5 for _ in range(2)]
    targets = [rng.random((1, 180)) for _ in range(2)]

    def make_loss():
        seqs = model.forward_features(batch, training=True)
        preds = [model.forward_estimator(s) for s in seqs]
        return sst_loss(preds, targets)

    names = rng.choice(sorted(model.params), size=6, replace=False)
    subset = {n: model.params[n] for n in names}
    return max_relative_error(make_loss, subset, rng, coords_per_param=2)


def check_adversarial(rng) -> float:
    """da_loss + dw_loss through the discriminators and GRL."""
    from .adaptation import Discriminator, DiscriminatorConfig, da_loss, dw_loss

    dcfg = DiscriminatorConfig(input_size=3, gru_hidden=4, fc_widths=(4, 1))
    d = Discriminator(dcfg, rng, prefix="d")
    o_s = [Tensor(rng.standard_normal((4, 3))) for _ in range(2)]
    o_t = [_rand(rng, (3, 3)) for _ in range(2)]
    weights = np.array([0.5, 1.5])
    lam = 0.7

    def make_loss():
        ps = [d.forward(o) for o in o_s]
        pt = [d.forward(T.grad_reverse(o, lam)) for o in o_t]
        # D-side objective; the GRL handles the feature side separately
        return T.mul(da_loss(ps, pt, weights), Tensor(-1.0))

    worst = max_relative_error(make_loss, d.params, rng, coords_per_param=2)

    dw = Discriminator(dcfg, rng, prefix="dw")

    def make_loss_w():
        ps = [dw.forward(o) for o in o_s]
        pt = [dw.forward(Tensor(o.data)) for o in o_t]
        return dw_loss(ps, pt)

    worst = max(worst, max_relative_error(make_loss_w, dw.params, rng, coords_per_param=2))
    return worst


SUITE = [
    ("elementwise", check_elementwise, OP_TOL),
    ("linear", check_linear, OP_TOL),
    ("conv2d", check_conv2d, OP_TOL),
    ("batchnorm_train", lambda rng: check_batchnorm(rng, training=True), OP_TOL),
    ("batchnorm_eval", lambda rng: check_batchnorm(rng, training=False), OP_TOL),
    ("batchnorm_masked", lambda rng: check_batchnorm(rng, training=True, mask=True), OP_TOL),
    ("maxpool2d", check_maxpool, OP_TOL),
    ("gru", check_gru, OP_TOL),
    ("losses", check_losses, OP_TOL),
    ("grad_reverse", check_grad_reverse, OP_TOL),
    ("crnn_end_to_end", check_end_to_end, E2E_TOL),
    ("adversarial_losses", check_adversarial, E2E_TOL),
]


def run_suite(seed: int = 0, repeats: int = 2):
    """Run every check `repeats` times with fresh random instances."""
    results = []
    for i, (name, fn, tol) in enumerate(SUITE):
        worst = 0.0
        for r in range(repeats):
            rng = np.random.default_rng(seed + 1000 * r + i)
            worst = max(worst, fn(rng))
        results.append({"name": name, "max_rel_err": worst, "tol": tol, "passed": worst <= tol})
    return results
