"""Planted block datasets for smoke tests and demos."""
from __future__ import annotations

import numpy as np

from .data import FeatureMatrix, table_from_pairs


def planted_blocks(num_users: int = 60, num_items: int = 40, num_blocks: int = 2, per_user: int = 20,
                   noise: float = 0.1, feature_dims=(32, 16), feature_noise: float = 0.5, seed: int = 0):
    """Users and items split into equal blocks; users mostly pick items of their own block.

    Each user draws ``round(per_user * noise)`` items from other blocks.  Both
    content modalities place items around a per-block random centroid, so
    they encode block identity up to ``feature_noise``.

    Returns ``(table, features, user_block, item_block)``.
    """
    rng = np.random.default_rng(seed)
    user_block = np.arange(num_users) % num_blocks
    item_block = np.arange(num_items) % num_blocks
    n_out = int(round(per_user * noise))
    n_in = per_user - n_out
    pairs = []
    for u in range(num_users):
        own = np.flatnonzero(item_block == user_block[u])
        other = np.flatnonzero(item_block != user_block[u])
        chosen = np.concatenate([rng.choice(own, n_in, replace=False), rng.choice(other, n_out, replace=False)])
        pairs.extend((f"u{u}", f"i{v}") for v in rng.permutation(chosen))
    table = table_from_pairs(pairs)
    # rows follow the table's item order
    order = np.array([int(v[1:]) for v in table.item_ids])
    features = {}
    for name, dim in zip(("visual", "textual"), feature_dims):
        centroids = rng.normal(size=(num_blocks, dim))
        values = centroids[item_block] + feature_noise * rng.normal(size=(num_items, dim))
        features[name] = FeatureMatrix(name, values[order].astype(np.float32))
    users = np.array([int(u[1:]) for u in table.user_ids])
    return table, features, user_block[users], item_block[order]


def write_fixture(out_dir, seed: int = 0, **kwargs) -> dict:
    """Write a planted dataset as ``interactions.tsv`` plus ``visual.hpmf`` / ``textual.hpmf``.

    Feature rows follow the first-seen item order of the TSV, which is what
    ``load_interactions`` assigns.
    """
    from pathlib import Path

    from .data import save_features

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, features, _, _ = planted_blocks(seed=seed, **kwargs)
    with open(out / "interactions.tsv", "w", encoding="utf-8") as fh:
        for u, v in table.pairs:
            fh.write(f"{table.user_ids[u]}\t{table.item_ids[v]}\n")
    paths = {"interactions": str(out / "interactions.tsv")}
    for name, f in features.items():
        save_features(f, out / f"{name}.hpmf")
        paths[f"{name}_features"] = str(out / f"{name}.hpmf")
    return paths


def fixture_dir():
    """Location of the bundled tiny dataset."""
    from importlib.resources import files

    return files("hpmrec") / "fixtures" / "tiny"
