"""Similarity-based filter pruning on a small CNN.

1. Train a two-conv network and record every filter's weights after each
   epoch; the concatenation over epochs is the filter's trajectory.
2. Rank filter pairs by the cosine similarity of their trajectories.
3. Pull the chosen pairs together with the exp(-sum cos) regularizer, then
   delete the lighter (l1) member of each pair and fine-tune.
4. Let the loop repeat until validation accuracy leaves the 0.02 band.

Run with ``python demos/similarity_pruning.py``.
"""

import numpy as np

from tascforge.data import class_weights, generate_synthetic, split
from tascforge.nn.metrics import count_flops, count_params
from tascforge.nn.model import init_model
from tascforge.nn.regularizer import filter_matrix, similarity_regularizer
from tascforge.nn.spec import Conv, Flatten, MaxPool, NetworkSpec, Output
from tascforge.nn.train import SnapshotStore, train
from tascforge.pruning import (
    PrunePlan,
    TrajectoryStore,
    delete_filters,
    make_filter_pairs,
    plan_report,
    prune_loop,
    select_prune_filters,
)

rng = np.random.default_rng(0)
data = generate_synthetic(4, 75, 10, 10, 1, rng)
train_set, val = split(data, 0.4, np.random.default_rng(1))
weights = class_weights(train_set)

spec = NetworkSpec((Conv(3, 32, "ReLU"), MaxPool(2, 2), Conv(3, 32, "ReLU"), Flatten(),
                    Output(4)), (10, 10, 1))
model = init_model(spec, np.random.default_rng(0))
total, _ = count_params(spec)
print(f"network: {total} parameters, {count_flops(spec)} FLOPs per image")

# -- 1. train while recording trajectories --------------------------------------

store = SnapshotStore(threshold=16, layers=[0, 2])
model, acc, history = train(model, spec, train_set, val, 12, weights, snapshot_store=store,
                            rng=np.random.default_rng(0))
print(f"trained 12 epochs: best validation accuracy {acc:.4f}")
trajectories = TrajectoryStore.from_snapshots(store)
for layer, t in trajectories.layers.items():
    print(f"layer {layer}: {t.filters} trajectories of length {t.matrix.shape[1]} "
          f"({t.epochs} epochs x {int(np.prod(t.filter_shape))} weights)")

# -- 2. most similar pairs ------------------------------------------------------

pairs = []
for layer in (0, 2):
    chosen = make_filter_pairs(trajectories, layer, p=0.05, threshold=16)
    pairs += chosen
    for pr in chosen:
        print(f"layer {layer}: filters {pr.i} and {pr.j}, cosine {pr.similarity:.4f}")

# -- 3. regularize, select, delete ----------------------------------------------

filters = {pr.layers: filter_matrix(model, pr.layers) for pr in pairs}
r, _ = similarity_regularizer(filters, pairs)
print(f"regularizer before optimization: {r:.4f}")
tuned, _, _ = train(model.copy(), spec, train_set, val, 4, weights, reg_pairs=pairs,
                    rng=np.random.default_rng(1), restore_best=False)
filters = {pr.layers: filter_matrix(tuned, pr.layers) for pr in pairs}
print(f"regularizer after 4 epochs:      {similarity_regularizer(filters, pairs)[0]:.4f}")

victims = select_prune_filters(pairs, filters)
plan = PrunePlan()
for key, idx in victims.items():
    plan.add(key, idx)
pruned, pruned_spec = delete_filters(tuned, spec, plan)
print("\n" + plan_report(plan, spec, pruned_spec))

# -- 4. the full loop -----------------------------------------------------------

result = prune_loop(model, spec, train_set, val, weights, p=0.05, min_diff=0.02,
                    epochs_each=4, threshold=16, max_iterations=4,
                    rng=np.random.default_rng(1), snapshot_store=store)
print("\niteration  accuracy  params  FLOPs    filters removed  accepted")
for rec in result.iterations:
    removed = sum(len(v) for v in rec.victims.values())
    print(f"{rec.iteration:9d}  {rec.val_accuracy:8.4f}  {rec.total_params:6d}  "
          f"{rec.flops:7d}  {removed:15d}  {rec.accepted}")
print("final filters per conv:", [result.spec.layers[i].filters for i in result.spec.conv_indices()])
