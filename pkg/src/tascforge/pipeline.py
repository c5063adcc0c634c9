"""Stage functions behind the command-line interface.

Every stage reads and writes files in one output directory:

============================  ===============================================
``backbone.tasc``             pretrained backbone checkpoint
``pretrain_metrics.json``     source-domain accuracy of the backbone
``search_log.jsonl``          one record per head configuration evaluated
``search_timings.jsonl``      wall-clock seconds per evaluation
``best_config.json``          best head configuration and its accuracy
``tuned.tasc``                backbone + best head
``prune_report.jsonl``        one record per pruning iteration
``prune_plan.txt``            human-readable victims per iteration
``pruned.tasc``               final pruned network
``oracle_log.jsonl``          brute-force evaluation of a capped space
``report.txt``/``report.json``  final summary table
============================  ===============================================
"""

import json
import logging
from pathlib import Path

import numpy as np

from . import data as dataio
from .bo import Backbone, ProxyEvaluator, assemble, bayes_search, config_rng
from .nn import checkpoint
from .nn.metrics import count_flops, count_params
from .nn.model import init_model
from .nn.spec import layer_shapes
from .nn.train import train
from .errors import TascError
from .pruning import delete_filters, plan_report, prune_loop
from .space import enumerate_space

log = logging.getLogger(__name__)

# Independent RNG streams per stage, all derived from the run seed.
STREAM_SOURCE, STREAM_TARGET, STREAM_PRETRAIN, STREAM_TUNE, STREAM_PRUNE = range(5)


def stream(seed, stage):
    return np.random.default_rng([seed, stage])


def _dump(record):
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(_dump(r) + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _load_domain(cfg, which, seed):
    stage = STREAM_SOURCE if which == "source" else STREAM_TARGET
    rng = stream(seed, stage)
    if cfg["data.kind"] == "idx":
        ds = dataio.load_idx(cfg[f"data.{which}_images"], cfg[f"data.{which}_labels"])
    else:
        ds = dataio.generate_synthetic(
            cfg[f"data.{which}_classes"], cfg[f"data.{which}_samples_per_class"],
            cfg["data.height"], cfg["data.width"], cfg["data.channels"], rng, style=which)
    return dataio.split(ds, cfg["data.val_fraction"], rng)


def source_data(cfg, seed):
    return _load_domain(cfg, "source", seed)


def target_data(cfg, seed):
    return _load_domain(cfg, "target", seed)


def pretrain(cfg, out_dir, seed):
    """Train the backbone on the source domain and save ``backbone.tasc``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds = source_data(cfg, seed)
    spec = cfg.backbone_spec(train_ds.shape, train_ds.class_count)
    layer_shapes(spec)
    rng = stream(seed, STREAM_PRETRAIN)
    model = init_model(spec, rng)
    model, acc, history = train(model, spec, train_ds, val_ds, cfg["pretrain.epochs"],
                                np.ones(train_ds.class_count), rng=rng,
                                batch_size=cfg["train.batch_size"])
    checkpoint.save(out_dir / "backbone.tasc", model, spec)
    total, trainable = count_params(spec)
    metrics = {"source_val_accuracy": acc, "total_params": total,
               "trainable_params": trainable, "flops": count_flops(spec),
               "epochs": history}
    write_json(out_dir / "pretrain_metrics.json", metrics)
    log.info("pretrained backbone: source val accuracy %.4f", acc)
    return model, spec, metrics


def _evaluator(cfg, backbone_path, seed):
    model, spec = checkpoint.load(backbone_path)
    backbone = Backbone.from_pretrained(model, spec, cfg["backbone.replace_top_k_blocks"])
    train_ds, val_ds = target_data(cfg, seed)
    if cfg["bo.finetune_backbone"]:
        evaluator = FullProxyEvaluator(backbone, train_ds, val_ds, cfg["bo.proxy_epochs"],
                                       seed, cfg["train.batch_size"])
    else:
        evaluator = ProxyEvaluator(backbone, train_ds, val_ds, cfg["bo.proxy_epochs"],
                                   seed, cfg["train.batch_size"])
    return backbone, evaluator


class FullProxyEvaluator(ProxyEvaluator):
    """Proxy training that also updates the backbone layers."""

    def __init__(self, backbone, train_data, val_data, epochs, seed=0, batch_size=32):
        self.backbone = backbone
        self.epochs = epochs
        self.seed = seed
        self.batch_size = batch_size
        self.classes = train_data.class_count
        self.train_data, self.val_data = train_data, val_data

    def train_head(self, config, index=0):
        head_spec = self.head_spec(config)
        rng = config_rng(self.seed, config)
        head = init_model(head_spec, rng)
        model, spec = assemble(self.backbone, head, head_spec, freeze_backbone=False)
        model, acc, _ = train(model, spec, self.train_data, self.val_data, self.epochs,
                              np.ones(self.classes), rng=rng, batch_size=self.batch_size)
        return model, spec, acc


def tune(cfg, out_dir, seed, backbone_path=None):
    """Bayesian search over head configurations; saves ``tuned.tasc``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    backbone_path = backbone_path or out_dir / "backbone.tasc"
    backbone, evaluator = _evaluator(cfg, backbone_path, seed)
    result = bayes_search(cfg.search_space(), evaluator, cfg["bo.k0"], cfg["bo.budget"],
                          cfg["bo.candidates_per_step"], stream(seed, STREAM_TUNE),
                          epoch_budget=cfg["bo.proxy_epochs"], n_jobs=cfg["bo.n_jobs"])
    write_jsonl(out_dir / "search_log.jsonl",
                [o.record(i) for i, o in enumerate(result.history)])
    write_jsonl(out_dir / "search_timings.jsonl",
                [{"index": i, "wall_seconds": o.wall_seconds}
                 for i, o in enumerate(result.history)])
    index = result.history.index(result.best)
    model, spec, acc = evaluator.train_head(result.best.config, index)
    if not isinstance(evaluator, FullProxyEvaluator):
        model, spec = assemble(backbone, model, spec)
    result.best_model, result.best_spec = model, spec
    write_json(out_dir / "best_config.json", {
        "index": index, "config": result.best.config.to_dict(),
        "description": result.best.config.describe(), "accuracy": result.best.accuracy,
    })
    checkpoint.save(out_dir / "tuned.tasc", model, spec)
    log.info("best head %s: %.4f", result.best.config.describe(), result.best.accuracy)
    return result


def prune(cfg, out_dir, seed, model_path=None):
    """Similarity-based pruning of a tuned network; saves ``pruned.tasc``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = model_path or out_dir / "tuned.tasc"
    model, spec = checkpoint.load(model_path)
    train_ds, val_ds = target_data(cfg, seed)
    if spec.input_shape != train_ds.shape or spec.classes != train_ds.class_count:
        raise ValueError("checkpoint does not match the target dataset")
    result = prune_loop(model, spec, train_ds, val_ds, dataio.class_weights(train_ds),
                        p=cfg["prune.rate"], min_diff=cfg["prune.min_diff"],
                        epochs_each=cfg["prune.epochs_each"],
                        threshold=cfg["prune.eligibility_threshold"],
                        max_iterations=cfg["prune.max_iterations"],
                        rng=stream(seed, STREAM_PRUNE), batch_size=cfg["train.batch_size"])
    write_jsonl(out_dir / "prune_report.jsonl", [r.to_dict() for r in result.iterations])
    checkpoint.save(out_dir / "pruned.tasc", result.model, result.spec)
    blocks = []
    for rec, (spec_before, plan) in zip(result.iterations[1:], result.plans):
        status = "accepted" if rec.accepted else "rejected (model discarded)"
        after = delete_filters(_placeholder_model(spec_before), spec_before, plan)[1]
        blocks.append(f"iteration {rec.iteration}: {status}, val accuracy {rec.val_accuracy:.4f}")
        blocks.append(plan_report(plan, spec_before, after))
    with open(out_dir / "prune_plan.txt", "w", encoding="utf-8") as fh:
        fh.write("\n\n".join(blocks) + ("\n" if blocks else ""))
    return result


def _placeholder_model(spec):
    """Freshly initialized weights; only their shapes matter for replaying a plan."""
    return init_model(spec, np.random.default_rng(0))


def oracle(cfg, out_dir, seed, backbone_path=None):
    """Evaluate every configuration of the (capped) search space."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    configs = list(enumerate_space(cfg.search_space(), cfg["oracle.cap"]))
    _, evaluator = _evaluator(cfg, backbone_path or out_dir / "backbone.tasc", seed)
    records = []
    for i, c in enumerate(configs):
        try:
            acc, err = float(evaluator(c, i)), None
        except (TascError, FloatingPointError) as exc:  # failures score 0, as in the search
            acc, err = 0.0, f"{type(exc).__name__}: {exc}"
        records.append({"index": i, "config": c.to_dict(), "accuracy": acc, "error": err})
    write_jsonl(out_dir / "oracle_log.jsonl", records)
    best = max(records, key=lambda r: r["accuracy"])
    write_json(out_dir / "oracle_best.json", best)
    return records, best


def build_report(out_dir):
    """Summary mirroring the accuracy / parameter / FLOP comparison table."""
    out_dir = Path(out_dir)
    rows = read_jsonl(out_dir / "prune_report.jsonl")
    accepted = [r for r in rows if r["accepted"]]
    before, after = rows[0], accepted[-1]

    def row(name, r):
        return {
            "stage": name, "accuracy": r["val_accuracy"],
            "total_params": r["total_params"], "trainable_params": r["trainable_params"],
            "flops": r["flops"], "eligible_flops": r["eligible_flops"],
            "flops_reduction": 1.0 - r["flops"] / before["flops"],
            "eligible_flops_reduction": 1.0 - r["eligible_flops"] / before["eligible_flops"]
            if before["eligible_flops"] else 0.0,
        }

    table = [row("tuned", before), row("pruned", after)]
    tuned = out_dir / "tuned.tasc"
    if tuned.exists():
        # as saved by the search: backbone frozen, only the head trainable
        table[0]["trainable_params"] = count_params(checkpoint.load(tuned)[1])[1]
    report = {"rows": table, "iterations_accepted": len(accepted) - 1,
              "iterations_attempted": len(rows) - 1}
    best = out_dir / "best_config.json"
    if best.exists():
        report["best_config"] = json.loads(best.read_text())
    write_json(out_dir / "report.json", report)
    header = (f"{'stage':<8} {'accuracy':>9} {'total params':>13} {'trainable':>10} "
              f"{'FLOPs':>12} {'eligible FLOPs':>22}")
    lines = [header, "-" * len(header)]
    for r in table:
        lines.append(
            f"{r['stage']:<8} {100 * r['accuracy']:>8.2f}% {r['total_params']:>13} "
            f"{r['trainable_params']:>10} {r['flops']:>12} "
            f"{r['eligible_flops']:>12} ({100 * r['eligible_flops_reduction']:.2f}%)")
    text = "\n".join(lines) + "\n"
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    return report, text


def run(cfg, out_dir, seed):
    pretrain(cfg, out_dir, seed)
    tune(cfg, out_dir, seed)
    prune(cfg, out_dir, seed)
    return build_report(out_dir)
