"""Full-ranking Recall@K / NDCG@K with seen-item masking."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_KS = (10, 20)


@dataclass(frozen=True)
class MetricsReport:
    ks: tuple
    recall: dict
    ndcg: dict
    num_users_evaluated: int

    def as_dict(self) -> dict:
        out = {"num_users_evaluated": self.num_users_evaluated}
        for k in self.ks:
            out[f"recall@{k}"] = self.recall[k]
            out[f"ndcg@{k}"] = self.ndcg[k]
        return out


def rank_items(scores, mask=None, k: int = 10) -> np.ndarray:
    """Indices of the ``k`` best unmasked items, best first; ties go to the smaller index.

    ``mask`` may be a boolean vector or a collection of item indices to hide.
    Fewer than ``k`` indices come back when fewer items are unmasked.
    """
    s = np.asarray(scores, dtype=np.float64).copy()
    if mask is not None:
        mask = np.asarray(mask)
        if mask.dtype == bool:
            s[mask] = -np.inf
        elif mask.size:
            s[mask.astype(np.int64)] = -np.inf
    order = np.argsort(-s, kind="stable")[:k]
    return order[np.isfinite(s[order])]


def recall_at_k(topk, truth) -> float:
    truth = set(int(t) for t in truth)
    if not truth:
        raise ValueError("recall needs a non-empty ground truth")
    return len(truth.intersection(int(i) for i in topk)) / len(truth)


def _idcg(n: int) -> float:
    return sum(1.0 / math.log2(i + 1) for i in range(1, n + 1))


def ndcg_at_k(topk, truth, k: int) -> float:
    truth = set(int(t) for t in truth)
    if not truth:
        raise ValueError("ndcg needs a non-empty ground truth")
    dcg = sum(1.0 / math.log2(pos + 1) for pos, item in enumerate(list(topk)[:k], start=1) if int(item) in truth)
    return dcg / _idcg(min(k, len(truth)))


def evaluate(user_emb, item_emb, truth, seen=None, ks=DEFAULT_KS, batch_size: int = 512) -> MetricsReport:
    """Mean Recall/NDCG over users with non-empty ``truth``.

    ``truth`` and ``seen`` are per-user item lists indexed by user.  Users are
    processed in index order so the reduction is deterministic.
    """
    ks = tuple(sorted(ks))
    kmax = ks[-1]
    users = [u for u in range(len(truth)) if len(truth[u])]
    sums = {k: [0.0, 0.0] for k in ks}
    count = 0
    for start in range(0, len(users), batch_size):
        chunk = users[start:start + batch_size]
        scores = (np.asarray(user_emb[chunk]) @ np.asarray(item_emb).T).astype(np.float64)
        if seen is not None:
            for r, u in enumerate(chunk):
                if len(seen[u]):
                    scores[r, np.asarray(seen[u], dtype=np.int64)] = -np.inf
        order = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
        for r, u in enumerate(chunk):
            top = order[r]
            top = top[np.isfinite(scores[r, top])]
            if top.size == 0:
                continue
            count += 1
            for k in ks:
                sums[k][0] += recall_at_k(top[:k], truth[u])
                sums[k][1] += ndcg_at_k(top[:k], truth[u], k)
    recall = {k: (sums[k][0] / count if count else 0.0) for k in ks}
    ndcg = {k: (sums[k][1] / count if count else 0.0) for k in ks}
    return MetricsReport(ks=ks, recall=recall, ndcg=ndcg, num_users_evaluated=count)


def evaluate_split(trace, split, which: str = "test", ks=DEFAULT_KS) -> MetricsReport:
    """Validation masks training items; test masks training and validation items."""
    train = split.user_items("train")
    if which == "valid":
        seen = train
    elif which == "test":
        valid = split.user_items("valid")
        seen = [a + b for a, b in zip(train, valid)]
    else:
        raise ValueError(f"unknown split {which!r}")
    return evaluate(trace.users, trace.items, split.user_items(which), seen, ks)
