"""Negative sampling, the epoch loop with early stopping, and grid search."""
from __future__ import annotations

import itertools
import json
import logging
import time
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .losses import LossBreakdown, compute_losses
from .metrics import evaluate_split
from .model import MODALITIES, HyperParams, build_inputs, forward, init_params
from .optim import AdamState, adam_step, backward, clip_gradients

log = logging.getLogger(__name__)

SELECT_METRIC = "recall@20"


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose (init, sampling, split, ...)."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def sample_triples(train_pairs, num_items: int, rng) -> np.ndarray:
    """One uniformly drawn unseen item per training pair, as ``(user, pos, neg)`` rows."""
    pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
    users = pairs[:, 0]
    deg = np.bincount(users)
    full = np.flatnonzero(deg >= num_items)
    if full.size:
        log.warning("skipping %d users who interacted with every item", full.size)
        pairs = pairs[~np.isin(users, full)]
        users = pairs[:, 0]
    seen = np.unique(pairs[:, 0] * num_items + pairs[:, 1])
    neg = rng.integers(0, num_items, size=len(pairs))
    todo = np.arange(len(pairs))
    while True:
        keys = users[todo] * num_items + neg[todo]
        pos = np.searchsorted(seen, keys)
        hit = (pos < len(seen)) & (seen[np.minimum(pos, len(seen) - 1)] == keys)
        todo = todo[hit]
        if todo.size == 0:
            break
        neg[todo] = rng.integers(0, num_items, size=todo.size)
    return np.column_stack([pairs, neg])


@dataclass
class TrainLogRecord:
    epoch: int
    losses: dict
    valid: dict
    best: bool
    wall_time: float = 0.0

    def to_json(self) -> str:
        # wall time is kept out of the log so identical runs give identical files
        return json.dumps({"epoch": self.epoch, "losses": self.losses, "valid": self.valid,
                           "best": self.best}, sort_keys=True)


@dataclass
class FitResult:
    params: dict
    adam: AdamState
    log: list
    best_epoch: int
    best_valid: dict
    stopped_epoch: int
    hp: HyperParams = None
    aborted: str | None = None
    last_params: dict = None

    @property
    def best_score(self) -> float:
        return self.best_valid.get(SELECT_METRIC, 0.0)


def _frozen(hp: HyperParams) -> set:
    skip = set()
    if hp.freeze_alpha:
        skip.add("alpha")
    if hp.no_prompt:
        skip.update(f"prompt.{m}" for m in MODALITIES)
    if hp.no_mi:
        skip.add("eps")
    return skip


def _mean_breakdown(parts) -> dict:
    total = sum(w for w, _ in parts)
    keys = LossBreakdown.__dataclass_fields__
    return {k: sum(w * getattr(b, k) for w, b in parts) / total for k in keys}


def train_epoch(params, adam, inputs, split, hp, rng) -> dict:
    triples = sample_triples(split.train, inputs.num_items, rng)
    triples = triples[rng.permutation(len(triples))]
    skip = _frozen(hp)
    parts = []
    for start in range(0, len(triples), hp.batch_size):
        batch = triples[start:start + hp.batch_size]
        trace = forward(params, inputs, hp)
        losses = compute_losses(trace, params, batch, hp)
        if not np.isfinite(losses.total):
            raise NumericalError(f"non-finite loss {losses}")
        grads = backward(trace, params, inputs, batch, hp)
        if hp.clip_norm:
            clip_gradients(grads, hp.clip_norm)
        adam_step(params, grads, adam, hp.learning_rate, skip=skip)
        parts.append((len(batch), losses))
    return _mean_breakdown(parts)


def fit(hp: HyperParams, split, inputs, params=None, log_path=None, on_epoch=None) -> FitResult:
    """Train until validation Recall@20 stalls for ``hp.patience`` epochs or ``hp.max_epochs``.

    On a numerical failure the best parameters seen so far are returned with
    ``aborted`` set; callers decide whether that is fatal.
    """
    if len(split.valid) == 0:
        raise ValueError("validation split is empty")
    if params is None:
        dims = {m: f.shape[1] for m, f in inputs.features.items()}
        params = init_params(hp, inputs.num_users, inputs.num_items, dims, rng=rng_stream(hp.seed, "init"))
    adam = AdamState.zeros_like(params)
    rng = rng_stream(hp.seed, "sampling")
    records = []
    best = FitResult(params={k: v.copy() for k, v in params.items()}, adam=adam.copy(), log=records,
                     best_epoch=0, best_valid={}, stopped_epoch=0, hp=hp)
    best_score = -np.inf
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, hp.max_epochs + 1):
            t0 = time.perf_counter()
            try:
                losses = train_epoch(params, adam, inputs, split, hp, rng)
            except NumericalError as exc:
                log.error("epoch %d: %s; keeping epoch %d checkpoint", epoch, exc, best.best_epoch)
                best.aborted = str(exc)
                best.stopped_epoch = epoch
                best.last_params = best.params
                return best
            valid = evaluate_split(forward(params, inputs, hp), split, "valid").as_dict()
            improved = valid[SELECT_METRIC] > best_score
            if improved:
                best_score = valid[SELECT_METRIC]
                best.params = {k: v.copy() for k, v in params.items()}
                best.adam = adam.copy()
                best.best_epoch = epoch
                best.best_valid = valid
            rec = TrainLogRecord(epoch, losses, valid, improved, time.perf_counter() - t0)
            records.append(rec)
            if fh:
                fh.write(rec.to_json() + "\n")
                fh.flush()
            if on_epoch:
                on_epoch(rec)
            log.info("epoch %d loss %.5f valid %s=%.4f%s", epoch, losses["total"], SELECT_METRIC,
                     valid[SELECT_METRIC], " *" if improved else "")
            best.stopped_epoch = epoch
            if epoch - best.best_epoch >= hp.patience:
                break
    finally:
        if fh:
            fh.close()
    best.last_params = params
    return best


def fixed_bpr(params, inputs, split, hp, seed: int = 0) -> float:
    """Mean BPR term over all training pairs against one seeded negative draw."""
    from .losses import batch_scores
    from .ops import softplus

    triples = sample_triples(split.train, inputs.num_items, rng_stream(seed, "fixed-bpr"))
    pos, neg = batch_scores(forward(params, inputs, hp), triples)
    return float(np.mean(softplus(-(pos - neg))))


def grid_points(grids: dict) -> list:
    """Cartesian product in row-major order (last key varies fastest)."""
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ValueError("grids must be non-empty")
    keys = list(grids)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grids[k] for k in keys))]


def grid_search(base: HyperParams, grids: dict, split, features: dict, on_run=None) -> dict:
    """Fit every grid point with the shared seed; the winner maximizes validation Recall@20
    (earliest point wins ties)."""
    runs = []
    inputs_cache = {}
    winner = None
    for i, point in enumerate(grid_points(grids)):
        hp = base.replace(**point)
        key = (hp.knn_k, hp.dtype)
        if key not in inputs_cache:
            inputs_cache[key] = build_inputs(split.train, split.num_users, split.num_items, features, hp)
        result = fit(hp, split, inputs_cache[key])
        run = {"index": i, "overrides": point, "best_epoch": result.best_epoch,
               "stopped_epoch": result.stopped_epoch, "valid": result.best_valid, "aborted": result.aborted}
        runs.append(run)
        if on_run:
            on_run(run, result)
        if winner is None or result.best_score > runs[winner]["valid"].get(SELECT_METRIC, 0.0):
            winner = i
    return {"runs": runs, "winner": winner, "best_overrides": runs[winner]["overrides"],
            "best_valid": runs[winner]["valid"]}
