"""Filter pruning driven by training history.

Filters are compared through their *trajectories*: the concatenation of a
filter's flattened weights over every recorded epoch.  Highly similar pairs
are pushed closer with the similarity regularizer, then the member with the
smaller l1 norm of each pair is removed and the network is fine-tuned.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    GroupMismatch,
    InconsistentShapes,
    InsufficientDistinctFilters,
    LayerIneligible,
    NoEligibleLayers,
    WouldEmptyLayer,
    ZeroNormVector,
)
from .nn.metrics import count_flops, count_params
from .nn.model import ModelState
from .nn.regularizer import FilterPair, filter_matrix
from .nn.spec import Conv, Dense, Dropout, Flatten, MaxPool, Output, layer_shapes
from .nn.train import SnapshotStore, evaluate_accuracy, train
from .tensor import l1_norm

log = logging.getLogger(__name__)


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.size != v.size:
        raise InconsistentShapes(f"lengths {u.size} and {v.size} differ")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroNormVector("cosine similarity of a zero vector")
    return float(np.clip((u @ v) / (nu * nv), -1.0, 1.0))


def prune_count(p, n):
    """ceil(p * n), robust to float noise such as 0.05 * 60."""
    return math.ceil(round(p * n, 9))


# -- trajectories -----------------------------------------------------------

@dataclass
class Trajectories:
    """Filter trajectories of one conv layer: ``matrix[i]`` has length N*H*W*C."""

    matrix: np.ndarray
    epochs: int
    filter_shape: tuple

    @property
    def filters(self):
        return self.matrix.shape[0]


def build_trajectories(snapshots):
    """Stack per-epoch conv weights (k, k, C, F) into an (F, N*k*k*C) matrix.

    Row ``i`` is filter ``i`` flattened row-major at epoch 0, then epoch 1,
    and so on.
    """
    if len(snapshots) == 0:
        raise InconsistentShapes("no epochs recorded")
    shape = snapshots[0].shape
    for w in snapshots:
        if w.shape != shape:
            raise InconsistentShapes(f"snapshot shape {w.shape} != {shape}")
    f = shape[-1]
    rows = [w.reshape(-1, f).T for w in snapshots]
    return Trajectories(np.hstack(rows), len(snapshots), tuple(shape[:-1]))


@dataclass
class TrajectoryStore:
    layers: dict = field(default_factory=dict)

    @classmethod
    def from_snapshots(cls, store):
        return cls({idx: build_trajectories(s) for idx, s in store.snapshots.items()})

    def matrix(self, key):
        """Trajectory matrix for a layer index or a tuple of grouped layers."""
        keys = key if isinstance(key, tuple) else (key,)
        mats = [self.layers[k].matrix for k in keys]
        if len({m.shape[0] for m in mats}) != 1:
            raise InconsistentShapes(f"grouped layers {keys} have different filter counts")
        return np.hstack(mats)


def similarity_matrix(traj):
    """Cosine similarity of every pair of rows; zero-norm rows score 0."""
    norms = np.linalg.norm(traj, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = traj / safe[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    sim[norms == 0.0, :] = 0.0
    sim[:, norms == 0.0] = 0.0
    return (sim + sim.T) / 2.0


def rank_pairs(traj, layers):
    """All C(n, 2) pairs sorted by descending similarity, then by (i, j)."""
    sim = similarity_matrix(traj)
    i, j = np.triu_indices(sim.shape[0], k=1)
    s = sim[i, j]
    order = np.lexsort((j, i, -s))
    return [FilterPair(layers, int(i[o]), int(j[o]), float(s[o])) for o in order]


def make_filter_pairs(store, layer, p, threshold=2):
    """The top ceil(p * n) most similar pairs of ``layer`` (index or group tuple)."""
    if not 0.0 < p < 1.0:
        raise ValueError("prune rate must lie in (0, 1)")
    key = layer if isinstance(layer, tuple) else (layer,)
    traj = store.matrix(key)
    n = traj.shape[0]
    if n < max(threshold, 2):
        raise LayerIneligible(f"layer {layer} has {n} filters, threshold {threshold}")
    return rank_pairs(traj, key)[:prune_count(p, n)]


# -- victim selection -------------------------------------------------------

def filter_l1_norms(final_weights, key):
    return np.array([l1_norm(row) for row in final_weights[key]])


def _lighter(pair, norms):
    """Pair member with the smaller l1 norm; the lower index on ties."""
    return pair.j if norms[pair.j] < norms[pair.i] else pair.i


def select_prune_filters(pairs, final_weights):
    """Per-layer victim sets, one candidate per pair, duplicates merged.

    ``final_weights`` maps each ``pair.layers`` key to an (n, D) matrix of the
    filters' current weights.
    """
    victims = {}
    for pair in pairs:
        norms = filter_l1_norms(final_weights, pair.layers)
        victims.setdefault(pair.layers, set()).add(_lighter(pair, norms))
    return victims


def enforce_group_exact(pairs, final_weights, required_count):
    """Exactly ``required_count`` distinct victims for an add-merged group.

    Pairs are walked in ranked order; when the lighter member is already a
    victim the other member is taken, and pairs whose members are both taken
    are skipped.
    """
    if not pairs:
        raise InsufficientDistinctFilters("no pairs to choose from")
    key = pairs[0].layers
    n = final_weights[key].shape[0]
    if required_count > n - 1:
        raise InsufficientDistinctFilters(
            f"cannot delete {required_count} of {n} filters and keep one")
    norms = filter_l1_norms(final_weights, key)
    chosen = []
    for pair in pairs:
        if len(chosen) == required_count:
            break
        first = _lighter(pair, norms)
        other = pair.i if first == pair.j else pair.j
        if first not in chosen:
            chosen.append(first)
        elif other not in chosen:
            chosen.append(other)
    if len(chosen) < required_count:
        raise InsufficientDistinctFilters(
            f"ranking yields {len(chosen)} distinct filters, need {required_count}")
    return set(chosen)


# -- plans and structural deletion -------------------------------------------

@dataclass
class PrunePlan:
    """Filters to delete per conv layer; grouped layers share one index set."""

    deletions: dict = field(default_factory=dict)
    groups: list = field(default_factory=list)

    def __bool__(self):
        return any(len(v) for v in self.deletions.values())

    def add(self, layers, indices):
        for idx in layers:
            self.deletions[idx] = tuple(sorted(int(i) for i in indices))
        if len(layers) > 1:
            self.groups.append(tuple(layers))

    def to_dict(self):
        return {str(k): list(v) for k, v in sorted(self.deletions.items())}


def _consumer(spec, index):
    """Index of the layer that reads the channels produced by conv ``index``."""
    for j in range(index + 1, len(spec.layers)):
        layer = spec.layers[j]
        if isinstance(layer, (MaxPool, Dropout)):
            continue
        if isinstance(layer, Conv):
            return j, "conv"
        if isinstance(layer, Flatten):
            for k in range(j + 1, len(spec.layers)):
                if isinstance(spec.layers[k], (Dense, Output)):
                    return k, ("flatten", j)
                if not isinstance(spec.layers[k], Dropout):
                    break
        break
    raise InconsistentShapes(f"no channel consumer after layer {index}")


def delete_filters(model, spec, plan):
    """Remove planned filters and every slice that depended on them.

    Returns a new ``(model, spec)``; the inputs are left untouched.
    """
    shapes = layer_shapes(spec)
    for g in spec.residual_groups:
        sets = {plan.deletions.get(i, ()) for i in g if isinstance(spec.layers[i], Conv)}
        if len(sets) > 1:
            raise GroupMismatch(f"residual group {g} would prune different channels")
    params = [{k: v.copy() for k, v in p.items()} for p in model.params]
    accum = [{k: v.copy() for k, v in a.items()} for a in model.accum]
    layers = list(spec.layers)
    for idx, victims in sorted(plan.deletions.items()):
        if not victims:
            continue
        layer = spec.layers[idx]
        if not isinstance(layer, Conv):
            raise InconsistentShapes(f"layer {idx} is not a convolution")
        keep = np.setdiff1d(np.arange(layer.filters), victims)
        if len(keep) == 0:
            raise WouldEmptyLayer(f"plan deletes every filter of layer {idx}")
        if max(victims) >= layer.filters:
            raise InconsistentShapes(f"victim index out of range in layer {idx}")
        for store in (params[idx], accum[idx]):
            for key in list(store):
                if key == "W":
                    store[key] = store[key][..., keep]
                else:
                    store[key] = store[key][keep]
        layers[idx] = replace(layer, filters=len(keep))
        target, how = _consumer(spec, idx)
        if how == "conv":
            for store in (params[target], accum[target]):
                if "W" in store:
                    store["W"] = store["W"][:, :, keep, :]
        else:
            h, w, c = shapes[how[1]][0]
            mask = np.zeros(c, dtype=bool)
            mask[keep] = True
            rows = np.tile(mask, h * w)
            for store in (params[target], accum[target]):
                if "W" in store:
                    store["W"] = store["W"][rows, :]
    new_spec = spec.with_layers(layers)
    layer_shapes(new_spec)
    return ModelState(params, accum), new_spec


# -- the pruning loop -----------------------------------------------------

def prunable_units(spec, layers):
    """Ungrouped eligible convs as 1-tuples plus fully eligible residual groups."""
    units = []
    grouped = set()
    for g in spec.residual_groups:
        grouped |= set(g)
        if all(i in layers for i in g):
            units.append(tuple(g))
    units += [(i,) for i in layers if i not in grouped]
    if not units:
        raise NoEligibleLayers("no convolution is eligible for pruning")
    return sorted(units)


def plan_pairs(store, spec, units, p):
    """Selected pairs per unit; grouped units keep their full ranking."""
    trajectories = TrajectoryStore.from_snapshots(store)
    selected, rankings = [], {}
    for unit in units:
        n = spec.layers[unit[0]].filters
        if n < 2:
            continue
        if len(unit) > 1:
            ranking = rank_pairs(trajectories.matrix(unit), unit)
            rankings[unit] = ranking
            selected += ranking[:prune_count(p, n)]
        else:
            selected += make_filter_pairs(trajectories, unit, p)
    return selected, rankings


def build_plan(model, spec, pairs, rankings, p):
    final = {key: filter_matrix(model, key) for key in {pr.layers for pr in pairs}}
    plan = PrunePlan()
    ungrouped = select_prune_filters([pr for pr in pairs if len(pr.layers) == 1], final)
    for key, victims in ungrouped.items():
        plan.add(key, victims)
    for unit, ranking in rankings.items():
        n = spec.layers[unit[0]].filters
        plan.add(unit, enforce_group_exact(ranking, final, prune_count(p, n)))
    return plan


def unfreeze(spec):
    layers = [replace(x, trainable=True) if hasattr(x, "trainable") else x for x in spec.layers]
    return spec.with_layers(layers)


@dataclass
class PruneIteration:
    iteration: int
    val_accuracy: float
    total_params: int
    trainable_params: int
    flops: int
    eligible_flops: int
    victims: dict
    accepted: bool = True

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "val_accuracy": self.val_accuracy,
            "total_params": self.total_params,
            "trainable_params": self.trainable_params,
            "flops": self.flops,
            "eligible_flops": self.eligible_flops,
            "victims": {str(k): list(v) for k, v in sorted(self.victims.items())},
            "accepted": self.accepted,
        }


@dataclass
class PruneResult:
    model: ModelState
    spec: object
    iterations: list
    eligible_layers: list
    max_accuracy: float
    plans: list = field(default_factory=list)  # (spec the plan applies to, plan)


def prune_loop(model, spec, train_data, val_data, weights, p=0.05, min_diff=0.02,
               epochs_each=50, threshold=16, max_iterations=None, rng=None,
               batch_size=32, snapshot_store=None):
    """Pair, optimize with the regularizer, delete, fine-tune; repeat.

    The loop keeps going while ``|max_acc - current_acc| <= min_diff``.  An
    iteration that breaks the rule is reported with ``accepted=False`` and its
    model discarded, so the returned model is the last accepted one.
    ``max_iterations`` optionally caps the number of attempted iterations.
    Layers are eligible when they hold at least ``threshold`` filters at the
    start of the loop; they stay eligible while two or more filters remain.

    ``snapshot_store`` holds the trajectories of an initial training pass.
    Without it that pass (``epochs_each`` epochs) runs here first, unless the
    loop guard already fails (``min_diff < 0``), in which case the model is
    returned untouched.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    spec = unfreeze(spec)
    eligible = [i for i in spec.conv_indices() if spec.layers[i].filters >= max(threshold, 2)]
    plans = []
    if min_diff < 0:
        acc = evaluate_accuracy(model, spec, val_data)
        return PruneResult(model, spec, [_record(0, acc, spec, eligible, {})], eligible, acc)
    if snapshot_store is None:
        store = SnapshotStore(threshold, layers=eligible)
        model, cur_acc, _ = train(model, spec, train_data, val_data, epochs_each, weights,
                                  snapshot_store=store, rng=rng, batch_size=batch_size)
    else:
        store = snapshot_store
        cur_acc = evaluate_accuracy(model, spec, val_data)
    report = [_record(0, cur_acc, spec, eligible, {})]
    max_acc = cur_acc
    iteration = 0
    while abs(max_acc - cur_acc) <= min_diff:
        if max_iterations is not None and iteration >= max_iterations:
            break
        max_acc = max(max_acc, cur_acc)
        try:
            units = prunable_units(spec, [i for i in eligible if spec.layers[i].filters >= 2])
        except NoEligibleLayers:
            log.info("no eligible layers left; stopping")
            break
        pairs, rankings = plan_pairs(store, spec, units, p)
        if not pairs:
            break
        candidate = model.copy()
        candidate, _, _ = train(candidate, spec, train_data, val_data, epochs_each, weights,
                                reg_pairs=pairs, rng=rng, batch_size=batch_size,
                                restore_best=False)
        plan = build_plan(candidate, spec, pairs, rankings, p)
        candidate, new_spec = delete_filters(candidate, spec, plan)
        new_store = SnapshotStore(threshold, layers=eligible)
        candidate, cur_acc, _ = train(candidate, new_spec, train_data, val_data, epochs_each,
                                      weights, snapshot_store=new_store, rng=rng,
                                      batch_size=batch_size)
        iteration += 1
        ok = abs(max_acc - cur_acc) <= min_diff
        report.append(_record(iteration, cur_acc, new_spec, eligible, plan.deletions, ok))
        plans.append((spec, plan))
        log.info("prune iteration %d: val_acc=%.4f (max %.4f) %s", iteration, cur_acc,
                 max_acc, "accepted" if ok else "rejected")
        if not ok:
            break
        model, spec, store = candidate, new_spec, new_store
    return PruneResult(model, spec, report, eligible, max_acc, plans)


def _record(iteration, acc, spec, eligible, victims, accepted=True):
    total, trainable = count_params(spec)
    return PruneIteration(iteration, float(acc), total, trainable, count_flops(spec),
                          count_flops(spec, layers=eligible), dict(victims), accepted)


def plan_report(plan, spec_before, spec_after=None):
    """Human-readable summary of a plan with predicted savings."""
    lines = ["layer  kind  filters  deleted  victims"]
    for idx, victims in sorted(plan.deletions.items()):
        n = spec_before.layers[idx].filters
        lines.append(f"{idx:>5}  conv  {n:>7}  {len(victims):>7}  {list(victims)}")
    if spec_after is not None:
        p0, p1 = count_params(spec_before)[0], count_params(spec_after)[0]
        f0, f1 = count_flops(spec_before), count_flops(spec_after)
        lines.append(f"params {p0} -> {p1} (-{p0 - p1})")
        lines.append(f"flops  {f0} -> {f1} (-{100.0 * (f0 - f1) / f0:.2f}%)")
    return "\n".join(lines)
