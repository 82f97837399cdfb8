# What each ablation switch does to the forward pass and the loss.
# Run: python demos/04_ablations.py

import numpy as np

from hpmrec.data import split_dataset
from hpmrec.losses import compute_losses
from hpmrec.model import MODALITIES, HyperParams, build_inputs, forward, init_params
from hpmrec.synthetic import planted_blocks
from hpmrec.train import sample_triples

table, features, _, _ = planted_blocks(seed=1)
split = split_dataset(table, seed=1)
dims = {m: f.cols for m, f in features.items()}
batch = sample_triples(split.train[:256], table.num_items, np.random.default_rng(0))

base = HyperParams(d=8, dtype="float64", seed=1)
params = init_params(base, table.num_users, table.num_items, dims)
rng = np.random.default_rng(2)
for m in MODALITIES:   # give the prompts something to switch off
    params[f"prompt.{m}"] += rng.normal(scale=0.05, size=params[f"prompt.{m}"].shape)

inputs = build_inputs(split.train, table.num_users, table.num_items, features, base)
ref = forward(params, inputs, base)
ref_loss = compute_losses(ref, params, batch, base)
print("baseline losses:", {k: round(v, 4) for k, v in ref_loss.as_dict().items()})

for flag in ("no_prompt", "no_mi", "no_ssl", "explicit_prompt"):
    hp = base.replace(**{flag: True})
    tr = forward(params, inputs, hp)
    loss = compute_losses(tr, params, batch, hp)
    changed_trace = [name for name in ("bar", "hat")
                     if any(not np.array_equal(getattr(tr, name)[m], getattr(ref, name)[m]) for m in MODALITIES)]
    changed_loss = [k for k, v in loss.as_dict().items() if v != ref_loss.as_dict()[k]]
    print(f"{flag:16s} trace changes: {changed_trace or '-'}   loss changes: {changed_loss}")

# the encoder variants keep one d-wide vector per modality instead of 2^(n+1) of them
for mode in ("full", "split", "mlp"):
    hp = base.replace(encoder_mode=mode)
    p = init_params(hp, table.num_users, table.num_items, dims)
    tr = forward(p, inputs, hp)
    print(f"encoder {mode:5s}: modality width {tr.hat['id'].shape[1]}, fused width {tr.fused.shape[1]}, "
          f"{sum(v.size for v in p.values())} parameters")
