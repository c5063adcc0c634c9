"""The whole two-stage pipeline on the toy configuration.

pretrain   backbone on the synthetic source domain
tune       Bayesian search over heads on the frozen backbone (target domain)
prune      similarity-based filter pruning of the tuned network
report     accuracy / parameter / FLOP table before and after pruning

This is what ``tascforge run --config configs/toy.cfg`` does; here each
stage is called from Python so the intermediate results can be inspected.

Run with ``python demos/two_stage_pipeline.py [output-dir]``.
"""

import sys
import tempfile
from pathlib import Path

from tascforge import pipeline
from tascforge.config import load_config

root = Path(__file__).resolve().parents[1]
cfg = load_config(root / "configs" / "toy.cfg")
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="tascforge_"))
seed = cfg["seed"]

_, spec, metrics = pipeline.pretrain(cfg, out, seed)
print(f"backbone: {len(spec.layers)} layers, source validation accuracy "
      f"{metrics['source_val_accuracy']:.4f}")

result = pipeline.tune(cfg, out, seed)
print(f"\nsearch over {cfg.search_space().size()} heads, {len(result.history)} evaluated:")
for i, obs in enumerate(result.history):
    print(f"  {i:2d}  {obs.accuracy:.4f}  {obs.config.describe()}")
print(f"best head: {result.best.config.describe()} ({result.best.accuracy:.4f})")

pruned = pipeline.prune(cfg, out, seed)
print(f"\npruning: {len(pruned.plans)} iteration(s) attempted, eligible convs "
      f"{pruned.eligible_layers}")
print((out / "prune_plan.txt").read_text())

_, table = pipeline.build_report(out)
print(table)
print("artifacts in", out)
for path in sorted(out.iterdir()):
    print("  ", path.name)
