import sys

import numpy as np
import pytest

from hpmrec.data import kcore_filter, split_dataset
from hpmrec.model import HyperParams, build_inputs, init_params
from hpmrec.synthetic import planted_blocks


def make_problem(num_users=12, num_items=24, per_user=10, noise=0.2, seed=0, **overrides):
    """Small planted dataset with a model built on it: ``(params, inputs, hp, split, batch)``."""
    settings = dict(n_exp=1, d=4, n_layers=2, knn_k=3, dtype="float64", seed=seed, batch_size=64)
    settings.update(overrides)
    hp = HyperParams(**settings)
    table, features, _, _ = planted_blocks(num_users, num_items, per_user=per_user, noise=noise,
                                           feature_dims=(6, 5), seed=seed)
    split = split_dataset(kcore_filter(table, 1), seed=seed)
    inputs = build_inputs(split.train, table.num_users, table.num_items, features, hp)
    params = init_params(hp, table.num_users, table.num_items, {m: f.cols for m, f in features.items()})
    rng = np.random.default_rng(seed + 1)
    batch = np.column_stack([split.train[:8], rng.integers(0, table.num_items, size=8)])
    return params, inputs, hp, split, batch


@pytest.fixture
def problem():
    return make_problem()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
