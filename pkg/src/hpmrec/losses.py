"""Ranking, alignment, expansion and regularization losses.

Each loss comes with a matching ``*_grads`` function giving its exact
(sub)gradient; Manhattan terms use ``sign(0) = 0``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .ops import sigmoid, softplus

ALIGN_PAIRS = (("id", "visual"), ("id", "textual"), ("visual", "textual"))


@dataclass(frozen=True)
class LossBreakdown:
    rec: float
    align: float
    expand: float
    ssl: float
    reg: float
    total: float
    bpr: float = 0.0
    explicit: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _rows(x, rows):
    return x if rows is None else x[rows]


def bpr_loss(scores_pos, scores_neg, reg_embeddings=(), reg_weight: float = 0.0) -> float:
    """Mean ``-log sigmoid(pos - neg)`` plus ``reg_weight`` times the mean
    (over the batch) squared L2 norm of ``reg_embeddings``."""
    diff = np.asarray(scores_pos) - np.asarray(scores_neg)
    loss = float(np.mean(softplus(-diff)))
    if reg_weight:
        loss += reg_weight * reg_term(reg_embeddings, len(diff))
    return loss


def reg_term(embeddings, batch_size: int) -> float:
    return float(sum(np.sum(e * e) for e in embeddings)) / batch_size


def bpr_grad(scores_pos, scores_neg) -> np.ndarray:
    """d(mean softplus(neg - pos)) / d pos; the gradient w.r.t. ``neg`` is its negation."""
    diff = np.asarray(scores_pos) - np.asarray(scores_neg)
    return -sigmoid(-diff) / len(diff)


def align_loss(h_id, h_v, h_t, sign_align: str = "minimize", rows=None) -> float:
    reps = {"id": _rows(h_id, rows), "visual": _rows(h_v, rows), "textual": _rows(h_t, rows)}
    n = reps["id"].shape[0]
    total = sum(float(np.sum(np.abs(reps[a] - reps[b]))) for a, b in ALIGN_PAIRS)
    value = total / n
    return value if sign_align == "minimize" else -value


def align_grads(h_id, h_v, h_t, sign_align: str = "minimize", rows=None) -> dict:
    reps = {"id": h_id, "visual": h_v, "textual": h_t}
    n = h_id.shape[0] if rows is None else len(rows)
    scale = (1.0 if sign_align == "minimize" else -1.0) / n
    grads = {m: np.zeros_like(h) for m, h in reps.items()}
    for a, b in ALIGN_PAIRS:
        s = np.sign(_rows(reps[a], rows) - _rows(reps[b], rows)) * scale
        if rows is None:
            grads[a] += s
            grads[b] -= s
        else:
            grads[a][rows] += s
            grads[b][rows] -= s
    return grads


def _real_minus_imag_mean(h, num_components):
    comps = h.reshape(h.shape[0], num_components, -1)
    return comps[:, 0, :] - comps[:, 1:, :].mean(axis=1)


def expand_loss(reps, num_components: int, rows=None) -> float:
    """Negative mean (over nodes) Manhattan gap between the real component and
    the mean imaginary component, summed over modalities."""
    if num_components < 2:
        raise ValueError("expansion loss needs at least 2 components")
    reps = list(reps.values()) if isinstance(reps, dict) else list(reps)
    n = _rows(reps[0], rows).shape[0]
    total = sum(float(np.sum(np.abs(_real_minus_imag_mean(_rows(h, rows), num_components)))) for h in reps)
    return -total / n


def expand_grads(reps: dict, num_components: int, rows=None) -> dict:
    n = next(iter(reps.values())).shape[0] if rows is None else len(rows)
    out = {}
    for m, h in reps.items():
        s = np.sign(_real_minus_imag_mean(_rows(h, rows), num_components))
        g = np.empty((s.shape[0], num_components, s.shape[1]), dtype=h.dtype)
        g[:, 0, :] = -s / n
        g[:, 1:, :] = (s / (n * (num_components - 1)))[:, None, :]
        full = np.zeros_like(h)
        if rows is None:
            full[:] = g.reshape(h.shape)
        else:
            full[rows] = g.reshape(len(rows), -1)
        out[m] = full
    return out


def explicit_prompt_loss(prompts: dict, egos: dict, rows=None) -> float:
    """Mean (over nodes) Manhattan distance between each prompt and its layer-0 embedding."""
    n = _rows(next(iter(prompts.values())), rows).shape[0]
    return sum(float(np.sum(np.abs(_rows(prompts[m], rows) - _rows(egos[m], rows)))) for m in prompts) / n


def explicit_prompt_grads(prompts: dict, egos: dict, rows=None) -> dict:
    """Gradient w.r.t. each prompt; the layer-0 gradient is its negation."""
    n = next(iter(prompts.values())).shape[0] if rows is None else len(rows)
    out = {}
    for m in prompts:
        g = np.zeros_like(prompts[m])
        s = np.sign(_rows(prompts[m], rows) - _rows(egos[m], rows)) / n
        if rows is None:
            g[:] = s
        else:
            g[rows] = s
        out[m] = g
    return out


def total_loss(bpr: float, reg: float, align: float, expand: float, ssl_weight: float,
               no_ssl: bool = False, explicit: float = 0.0) -> LossBreakdown:
    """Combine terms: ``total = rec + ssl_weight * (ssl + explicit)`` with
    ``rec = bpr + reg`` (``reg`` already weighted) and ``ssl = align + expand``."""
    if no_ssl:
        align = expand = 0.0
    ssl = align + expand
    rec = bpr + reg
    return LossBreakdown(
        rec=rec, align=align, expand=expand, ssl=ssl, reg=reg,
        total=rec + ssl_weight * (ssl + explicit), bpr=bpr, explicit=explicit,
    )


# -- model-level helpers -----------------------------------------------------

def ssl_rows(batch, num_users, hp):
    """Node rows entering the self-supervised losses (``None`` means all)."""
    if not hp.ssl_batch_only:
        return None
    batch = np.asarray(batch)
    users = np.unique(batch[:, 0])
    items = np.unique(batch[:, 1:]) + num_users
    return np.concatenate([users, items])


def batch_scores(trace, batch):
    batch = np.asarray(batch)
    users = trace.users[batch[:, 0]]
    pos = np.einsum("bf,bf->b", users, trace.items[batch[:, 1]])
    neg = np.einsum("bf,bf->b", users, trace.items[batch[:, 2]])
    return pos, neg


def reg_rows(batch, num_users):
    batch = np.asarray(batch)
    return batch[:, 0], batch[:, 1] + num_users, batch[:, 2] + num_users


def compute_losses(trace, params, batch, hp) -> LossBreakdown:
    """All loss terms for one mini-batch of ``(user, pos, neg)`` triples."""
    from .model import MODALITIES

    batch = np.asarray(batch)
    pos, neg = batch_scores(trace, batch)
    bpr = float(np.mean(softplus(-(pos - neg))))
    ru, rp, rn = reg_rows(batch, trace.num_users)
    reg = hp.reg_weight * reg_term(
        [trace.ego[m][r] for m in MODALITIES for r in (ru, rp, rn)], len(batch)
    )
    rows = ssl_rows(batch, trace.num_users, hp)
    align = expand = explicit = 0.0
    if not hp.no_ssl:
        reps = trace.hat if hp.ssl_on == "hat" else trace.bar
        align = align_loss(reps["id"], reps["visual"], reps["textual"], hp.sign_align, rows)
        expand = expand_loss(reps, hp.num_components, rows)
    if hp.explicit_prompt and not hp.no_prompt:
        explicit = explicit_prompt_loss(
            {m: params[f"prompt.{m}"] for m in MODALITIES}, trace.ego, rows
        )
    return total_loss(bpr, reg, align, expand, hp.ssl_weight, hp.no_ssl, explicit)
