# Train on a planted two-block dataset and check the model recovers the blocks.
# Run: python demos/03_train_planted.py

import numpy as np

from hpmrec.data import kcore_filter, split_dataset
from hpmrec.metrics import evaluate_split
from hpmrec.model import HyperParams, build_inputs, forward
from hpmrec.synthetic import planted_blocks
from hpmrec.train import fit

# 60 users and 40 items in two blocks; 10% of each user's items come from the other block,
# and both content modalities are noisy copies of the block identity
table, features, user_block, item_block = planted_blocks(seed=0)
table = kcore_filter(table, 5)
split = split_dataset(table, seed=0)
print(f"{table.num_users} users, {table.num_items} items, {table.num_interactions} interactions, "
      f"train/valid/test = {len(split.train)}/{len(split.valid)}/{len(split.test)}")

hp = HyperParams(n_exp=1, d=16, n_layers=2, max_epochs=300, seed=0)
inputs = build_inputs(split.train, table.num_users, table.num_items, features, hp)


def progress(rec):
    if rec.epoch % 5 == 0 or rec.best:
        print(f"epoch {rec.epoch:3d}  loss {rec.losses['total']:.4f}  valid recall@20 {rec.valid['recall@20']:.3f}"
              + ("  *" if rec.best else ""))


result = fit(hp, split, inputs, on_epoch=progress)
print("stopped at epoch", result.stopped_epoch, "best epoch", result.best_epoch)

trace = forward(result.params, inputs, hp)
test = evaluate_split(trace, split, "test").as_dict()
print("test:", {k: round(v, 3) for k, v in test.items() if "@" in k})
print("random Recall@10 would be", 10 / table.num_items)

# most recommendations should land inside the user's own block
scores = trace.users @ trace.items.T
top = np.argsort(-scores, axis=1)[:, :10]
in_block = (item_block[top] == user_block[:, None]).mean()
print(f"share of top-10 items from the user's own block: {in_block:.2f}")
