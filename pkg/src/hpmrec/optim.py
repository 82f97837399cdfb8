"""Reverse-mode gradients of the training loss, Adam, and a finite-difference checker."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cdalgebra
from .errors import NumericalError
from .graphs import pattern_grad
from .losses import (
    align_grads,
    batch_scores,
    bpr_grad,
    compute_losses,
    expand_grads,
    explicit_prompt_grads,
    reg_rows,
    ssl_rows,
    _real_minus_imag_mean,
)
from .model import CONTENT_MODALITIES, MODALITIES, forward
from .ops import softmax_vjp


def _rowwise_vjp(x, y, g, num_components):
    rows = x.shape[0]
    gx, gy = cdalgebra.cd_mul_vjp(
        x.reshape(rows, num_components, -1),
        y.reshape(rows, num_components, -1),
        g.reshape(rows, num_components, -1),
    )
    return gx.reshape(rows, -1), gy.reshape(rows, -1)


def backward(trace, params: dict, inputs, batch, hp) -> dict:
    """Exact gradient of ``compute_losses(...).total`` for every parameter."""
    dtype = hp.np_dtype
    nu = inputs.num_users
    width = hp.width
    batch = np.asarray(batch)
    bsz = len(batch)
    u, p, n = batch[:, 0], batch[:, 1], batch[:, 2]
    grads = {k: np.zeros_like(v) for k, v in params.items()}

    # scores -> final user / enhanced item rows
    pos, neg = batch_scores(trace, batch)
    g = bpr_grad(pos, neg).astype(dtype)[:, None]
    users, items = trace.users, trace.items
    d_users = np.zeros_like(users)
    d_enh = np.zeros_like(items)
    np.add.at(d_users, u, g * (items[p] - items[n]))
    np.add.at(d_enh, p, g * users[u])
    np.add.at(d_enh, n, -g * users[u])

    # item-item hop: enhanced = X + S X
    fused_items = trace.fused[nu:]
    d_items = d_enh + np.asarray(trace.item_op.T @ d_enh)
    if not hp.freeze_alpha and inputs.item_graph.nnz:
        q = pattern_grad(inputs.item_graph, d_enh, fused_items)
        grads["alpha"][:] = inputs.item_graph.alpha_grad(params["alpha"], q, hp.item_graph_norm)
    d_fused = np.concatenate([d_users, d_items], axis=0)

    # attention-weighted concatenation
    w = trace.beta_w
    d_hat, dw = {}, np.zeros(len(MODALITIES))
    for i, m in enumerate(MODALITIES):
        block = d_fused[:, i * width:(i + 1) * width]
        d_hat[m] = block * dtype.type(w[i])
        dw[i] = float(np.sum(block * trace.hat[m]))
    grads["beta"][:] = softmax_vjp(w, dw)

    rows = ssl_rows(batch, nu, hp)
    ssl_bar = {}
    if not hp.no_ssl:
        reps = trace.hat if hp.ssl_on == "hat" else trace.bar
        a = align_grads(reps["id"], reps["visual"], reps["textual"], hp.sign_align, rows)
        e = expand_grads(reps, hp.num_components, rows)
        lam = dtype.type(hp.ssl_weight)
        target = d_hat if hp.ssl_on == "hat" else ssl_bar
        for m in MODALITIES:
            contrib = lam * (a[m] + e[m])
            target[m] = target[m] + contrib if m in target else contrib

    # mutual-information enhancement
    d_bar = {m: d_hat[m].copy() for m in MODALITIES}
    if not hp.no_mi:
        eps = params["eps"]
        for j, m in enumerate(CONTENT_MODALITIES):
            grads["eps"][j] = np.sum(d_hat[m] * trace.mi[m])
            gx, gy = _rowwise_vjp(trace.bar["id"], trace.bar[m], d_hat[m], hp.num_components)
            d_bar["id"] += eps[j] * gx
            d_bar[m] += eps[j] * gy
    for m, extra in ssl_bar.items():
        d_bar[m] += extra

    # prompts and layer aggregation (adjacency is symmetric)
    d_ego = {}
    for m in MODALITIES:
        if not hp.no_prompt:
            grads[f"prompt.{m}"][:] = d_bar[m]
        acc = d_bar[m]
        total = acc.copy()
        for _ in range(hp.n_layers):
            acc = np.asarray(inputs.adj @ acc)
            total += acc
        if hp.layer_agg == "mean":
            total /= hp.n_layers + 1
        d_ego[m] = total

    if hp.explicit_prompt and not hp.no_prompt:
        prompts = {m: params[f"prompt.{m}"] for m in MODALITIES}
        ex = explicit_prompt_grads(prompts, trace.ego, rows)
        lam = dtype.type(hp.ssl_weight)
        for m in MODALITIES:
            grads[f"prompt.{m}"] += lam * ex[m]
            d_ego[m] -= lam * ex[m]

    if hp.reg_weight:
        scale = dtype.type(2.0 * hp.reg_weight / bsz)
        for m in MODALITIES:
            for r in reg_rows(batch, nu):
                np.add.at(d_ego[m], r, scale * trace.ego[m][r])

    for m in MODALITIES:
        if hp.encoder_mode == "mlp":
            nodes = d_ego[m].shape[0]
            gc = d_ego[m].reshape(nodes, hp.num_components, -1)
            raw = trace.raw[m].reshape(nodes, hp.num_components, -1)
            grads[f"compress.{m}"][:] = raw.reshape(-1, hp.d).T @ gc.reshape(-1, hp.component_width)
            d_raw = (gc @ params[f"compress.{m}"].T).reshape(nodes, -1)
        else:
            d_raw = d_ego[m]
        grads[f"user.{m}"][:] = d_raw[:nu]
        if m == "id":
            grads["item.id"][:] = d_raw[nu:]
        else:
            grads[f"proj.{m}"][:] = inputs.features[m].T @ d_raw[nu:]
    return grads


def loss_and_grads(params, inputs, batch, hp):
    trace = forward(params, inputs, hp)
    losses = compute_losses(trace, params, batch, hp)
    return losses, backward(trace, params, inputs, batch, hp), trace


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()})

    def copy(self) -> "AdamState":
        return AdamState({k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()},
                         self.t, self.beta1, self.beta2, self.eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= g.dtype.type(scale)
    return norm


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, skip=()):
    """Bias-corrected Adam, applied in place; returns ``(params, state)``.

    Names in ``skip`` are left untouched (frozen parameters).
    """
    for name, g in grads.items():
        if name not in skip and not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        if name in skip:
            continue
        p = params[name]
        dt = p.dtype.type
        m, v = state.m[name], state.v[name]
        m *= dt(state.beta1)
        m += dt(1.0 - state.beta1) * g
        v *= dt(state.beta2)
        v += dt(1.0 - state.beta2) * (g * g)
        p -= dt(lr) * (m / dt(bc1)) / (np.sqrt(v / dt(bc2)) + dt(state.eps))
    return params, state


# -- finite-difference check --------------------------------------------------

def tiny_problem(seed: int = 0, **overrides):
    """3 users, 4 items, n=1, d=2, one layer, every loss term switched on."""
    from .model import HyperParams, build_inputs, init_params

    rng = np.random.default_rng(seed)
    settings = dict(n_exp=1, d=2, n_layers=1, knn_k=2, reg_weight=1e-2, ssl_weight=0.5,
                    explicit_prompt=True, dtype="float64", seed=seed)
    settings.update(overrides)
    hp = HyperParams(**settings)
    train = np.array([[0, 0], [0, 1], [1, 1], [1, 2], [2, 3], [2, 0]])
    features = {"visual": rng.normal(size=(4, 5)), "textual": rng.normal(size=(4, 3))}
    inputs = build_inputs(train, 3, 4, features, hp)
    params = init_params(hp, 3, 4, {"visual": 5, "textual": 3}, rng=rng)
    # non-trivial attention and fusion weights
    params["beta"][:] = rng.normal(scale=0.3, size=3)
    params["alpha"][:] = rng.normal(scale=0.3, size=2)
    batch = np.array([[0, 0, 2], [0, 1, 3], [1, 2, 0], [2, 3, 1], [2, 0, 2]])
    return params, inputs, hp, batch


def kink_arguments(params, inputs, batch, hp) -> np.ndarray:
    """Every quantity passed through ``abs`` when evaluating the loss."""
    trace = forward(params, inputs, hp)
    rows = ssl_rows(batch, inputs.num_users, hp)
    sel = (lambda x: x) if rows is None else (lambda x: x[rows])
    parts = [inputs.item_graph.fused_values(params["alpha"])]
    if not hp.no_ssl:
        reps = trace.hat if hp.ssl_on == "hat" else trace.bar
        parts += [(sel(reps[a]) - sel(reps[b])).ravel()
                  for a, b in (("id", "visual"), ("id", "textual"), ("visual", "textual"))]
        parts += [_real_minus_imag_mean(sel(reps[m]), hp.num_components).ravel() for m in MODALITIES]
    if hp.explicit_prompt and not hp.no_prompt:
        parts += [(sel(params[f"prompt.{m}"]) - sel(trace.ego[m])).ravel() for m in MODALITIES]
    return np.concatenate(parts)


def grad_check(builder=tiny_problem, tolerance: float = 1e-4, seed: int = 0, h: float = 1e-5,
               kink: float = 1e-7, gradient_fn=None) -> dict:
    """Compare analytic gradients against central differences, parameter by parameter.

    Coordinates whose perturbation moves any ``abs`` argument across (or
    within ``kink`` of) zero are skipped and counted.  ``gradient_fn`` can
    replace :func:`backward` (used to confirm a corrupted gradient is caught).
    """
    params, inputs, hp, batch = builder(seed)
    if hp.np_dtype != np.float64:
        raise ValueError("gradient checking needs float64 parameters")
    trace = forward(params, inputs, hp)
    analytic = (gradient_fn or backward)(trace, params, inputs, batch, hp)
    frozen = {"alpha"} if hp.freeze_alpha else set()

    def loss_at():
        return compute_losses(forward(params, inputs, hp), params, batch, hp).total

    base_args = kink_arguments(params, inputs, batch, hp)
    report = {"tolerance": tolerance, "seed": seed, "h": h, "parameters": {}}
    passed = True
    for name in sorted(params):
        if name in frozen:
            continue
        p = params[name]
        fd = np.zeros(p.size)
        keep = np.ones(p.size, dtype=bool)
        flat = p.reshape(-1)
        for i in range(p.size):
            old = flat[i]
            flat[i] = old + h
            lp = loss_at()
            ap = kink_arguments(params, inputs, batch, hp)
            flat[i] = old - h
            lm = loss_at()
            am = kink_arguments(params, inputs, batch, hp)
            flat[i] = old
            fd[i] = (lp - lm) / (2 * h)
            moved = ap != am
            signs = (np.sign(ap) != np.sign(base_args)) | (np.sign(am) != np.sign(base_args))
            if np.any(signs & moved) or np.any(moved & (np.abs(base_args) < kink)):
                keep[i] = False
        ga = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        if keep.any():
            err = float(np.max(np.abs(ga[keep] - fd[keep])) / (np.max(np.abs(fd[keep])) + 1e-12))
        else:
            err = 0.0
        ok = err < tolerance
        passed &= ok
        report["parameters"][name] = {
            "max_rel_error": err,
            "checked": int(keep.sum()),
            "excluded": int((~keep).sum()),
            "passed": bool(ok),
        }
    report["passed"] = bool(passed)
    report["failed"] = [k for k, v in report["parameters"].items() if not v["passed"]]
    return report
