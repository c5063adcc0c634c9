"""Acceptance suite: one PASS/FAIL line per criterion.

Each test prints its verdict (with wall time) straight to the terminal so
the lines survive pytest's output capture, then asserts it.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from tascforge import gp, pipeline
from tascforge.bo import bayes_search, random_search
from tascforge.config import load_config
from tascforge.data import class_weights, generate_synthetic, split
from tascforge.gp import KernelParams
from tascforge.nn import checkpoint
from tascforge.nn.metrics import count_flops, count_params
from tascforge.nn.model import init_model
from tascforge.nn.regularizer import similarity_regularizer
from tascforge.nn.spec import Conv, Dense, MaxPool, NetworkSpec, Output, Flatten
from tascforge.nn.train import SnapshotStore, train
from tascforge.pruning import (
    TrajectoryStore,
    cosine_similarity,
    delete_filters,
    make_filter_pairs,
    prune_count,
    prune_loop,
)

from conftest import ToyObjective, finite_difference_errors, toy_bo_space

ROOT = Path(__file__).resolve().parents[1]
TOY = str(ROOT / "configs" / "toy.cfg")


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, seconds, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({seconds:.2f}s)"
        with capsys.disabled():
            print(f"\n{line}{' - ' + detail if detail else ''}")
        assert ok, line + (" - " + detail if detail else "")
    return report


def dense_posterior(x, y, params, xs):
    """Textbook GP posterior through an explicit matrix inverse."""
    k_inv = np.linalg.inv(gp.kernel_matrix(params, x, x) + params.noise_variance * np.eye(len(x)))
    ks = gp.kernel_matrix(params, xs, x)
    mu = y.mean() + ks @ k_inv @ (y - y.mean())
    var = params.signal_variance - np.einsum("ij,jk,ik->i", ks, k_inv, ks)
    return mu, var


def test_criterion_1_gp_exactness(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_mu = worst_var = worst_dense = 0.0
    fits = 0
    while fits < 20:
        dim = int(rng.integers(1, 6))
        x = rng.random((5, dim))
        y = rng.random(5)
        params = KernelParams.shared(dim, float(rng.uniform(0.1, 1.0)),
                                     float(rng.uniform(0.1, 2.0)), 0.0)
        # beyond this conditioning two float64 solvers legitimately differ by more than 1e-9
        if np.linalg.cond(gp.kernel_matrix(params, x, x)) > 1e6:
            continue
        fits += 1
        model = gp.fit(x, y, params)
        mu, var = gp.posterior_batch(model, x)
        worst_mu = max(worst_mu, np.abs(mu - y).max())
        worst_var = max(worst_var, var.max())
        xs = rng.random((10, dim))
        mu_s, var_s = gp.posterior_batch(model, xs)
        mu_d, var_d = dense_posterior(x, y, params, xs)
        worst_dense = max(worst_dense, np.abs(mu_s - mu_d).max(), np.abs(var_s - var_d).max())
    seconds = time.perf_counter() - t0
    ok = worst_mu <= 1e-8 and worst_var <= 1e-8 and worst_dense <= 1e-9 and seconds < 5
    verdict(1, "GP exactness", ok, seconds,
            f"mu err {worst_mu:.1e}, var {worst_var:.1e}, dense gap {worst_dense:.1e}")


@pytest.mark.slow
def test_criterion_2_expected_improvement(verdict):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    n = 10_000_000
    worst = 0.0
    for _ in range(100):
        mu, sigma, f_best = rng.uniform(-1, 1), rng.uniform(0.1, 2.0), rng.uniform(-1, 1)
        gain = np.maximum(mu + sigma * rng.standard_normal(n) - f_best, 0.0)
        se = gain.std() / math.sqrt(n)
        ei = gp.expected_improvement(mu, sigma**2, f_best)
        if se == 0.0:  # f_best many sigmas above mu: no sample improves
            worst = max(worst, 0.0 if ei < 1e-12 else np.inf)
        else:
            worst = max(worst, abs(ei - gain.mean()) / se)
    standard = gp.expected_improvement(0.5, 1.0, 0.5)
    seconds = time.perf_counter() - t0
    ok = worst <= 3 and abs(standard - 0.398942) <= 1e-3 and seconds < 60
    verdict(2, "EI against Monte Carlo", ok, seconds,
            f"worst gap {worst:.2f} SE, EI(f_best, 1) = {standard:.6f}")


def test_criterion_3_search_finds_argmax(verdict):
    obj = ToyObjective()
    target = obj.argmax()
    t0 = time.perf_counter()
    bo = [bayes_search(toy_bo_space(), obj, 5, 20, rng=np.random.default_rng(s)).best
          for s in range(10)]
    rs = [random_search(toy_bo_space(), obj, 20, np.random.default_rng(s)).best for s in range(10)]
    hits = sum(b.config == target for b in bo)
    bo_med = float(np.median([b.accuracy for b in bo]))
    rs_med = float(np.median([r.accuracy for r in rs]))
    ok = hits >= 8 and bo_med >= rs_med
    verdict(3, "search finds the toy argmax", ok, time.perf_counter() - t0,
            f"{hits}/10 seeds, median {bo_med:.4f} vs random {rs_med:.4f}")


def test_criterion_4_gradients(verdict, grad_problem):
    model, spec, x, y, w, pairs = grad_problem
    t0 = time.perf_counter()
    ce_only = finite_difference_errors(model, spec, x, y, w)
    full = finite_difference_errors(model, spec, x, y, w, pairs)
    # the regularizer on its own, against its own filter-space gradient
    rng = np.random.default_rng(5)
    filters = {(0,): rng.normal(size=(4, 18))}
    _, grads = similarity_regularizer(filters, pairs[:2])
    reg_err, h = 0.0, 1e-6
    f = filters[(0,)]
    for idx in np.ndindex(f.shape):
        old = f[idx]
        f[idx] = old + h
        up = similarity_regularizer(filters, pairs[:2])[0]
        f[idx] = old - h
        down = similarity_regularizer(filters, pairs[:2])[0]
        f[idx] = old
        num = (up - down) / (2 * h)
        scale = max(abs(num), abs(grads[(0,)][idx]))
        reg_err = max(reg_err, abs(num - grads[(0,)][idx]) / scale if scale > 1e-7 else 0.0)
    worst = max(max(ce_only.values()), max(full.values()), reg_err)
    kinds = {type(layer).__name__ for layer in spec.layers} | {"BatchNorm"}
    verdict(4, "finite-difference gradients", worst < 1e-4, time.perf_counter() - t0,
            f"worst rel err {worst:.1e} over {sorted(kinds)} + CE + regularizer")


def test_criterion_5_trajectories_and_cosine(verdict, tiny_data):
    train_set, val = tiny_data
    t0 = time.perf_counter()
    spec = NetworkSpec((Conv(3, 16, "ReLU"), MaxPool(2, 2), Flatten(), Dense(16, "TanH"),
                        Output(3)), (8, 8, 1))
    model = init_model(spec, np.random.default_rng(0))
    model.params[0]["W"][..., 1] = model.params[0]["W"][..., 0]
    store = SnapshotStore(threshold=16)
    train(model, spec, train_set, val, 5, class_weights(train_set), snapshot_store=store)
    trajectories = TrajectoryStore.from_snapshots(store)
    length_ok = trajectories.layers[0].matrix.shape == (16, 5 * 3 * 3 * 1)
    pairs = make_filter_pairs(trajectories, 0, 0.05, threshold=16)
    duplicate_first = (pairs[0].i, pairs[0].j) == (0, 1)

    rng = np.random.default_rng(9)
    cosine_ok = True
    for _ in range(10_000):
        d = int(rng.integers(1, 20))
        u, v = rng.normal(size=d), rng.normal(size=d)
        c = cosine_similarity(u, v)
        a = float(rng.uniform(0.1, 10.0))
        cosine_ok &= (-1.0 <= c <= 1.0 and c == cosine_similarity(v, u)
                      and abs(cosine_similarity(a * u, v) - c) <= 1e-12
                      and abs(cosine_similarity(u, u) - 1.0) <= 1e-12
                      and abs(cosine_similarity(u, -u) + 1.0) <= 1e-12)
    ok = length_ok and duplicate_first and cosine_ok
    verdict(5, "trajectories and cosine", ok, time.perf_counter() - t0,
            f"length {length_ok}, duplicate first {duplicate_first}, cosine {cosine_ok}")


def recount(model, spec):
    """Params and FLOPs from the weight arrays alone."""
    params = sum(a.size for p in model.params for a in p.values())
    h, w = spec.input_shape[:2]
    flops = 0
    for layer, p in zip(spec.layers, model.params):
        if isinstance(layer, Conv):
            k, _, c_in, f = p["W"].shape
            h, w = h - k + 1, w - k + 1
            flops += 2 * k * k * c_in * f * h * w
        elif isinstance(layer, MaxPool):
            h, w = (h - layer.k) // layer.stride + 1, (w - layer.k) // layer.stride + 1
        elif "W" in p:
            flops += 2 * p["W"].size
    return params, flops


def test_criterion_6_exact_accounting(verdict):
    ds = generate_synthetic(4, 75, 10, 10, 1, np.random.default_rng(0))
    train_set, val = split(ds, 0.4, np.random.default_rng(1))
    w = class_weights(train_set)
    spec = NetworkSpec((Conv(3, 20, "ReLU"), Conv(1, 20, "ReLU"), Conv(1, 20, "ReLU"),
                        MaxPool(2, 2), Flatten(), Output(4)), (10, 10, 1),
                       residual_groups=((0, 2),))
    model = init_model(spec, np.random.default_rng(0))
    t0 = time.perf_counter()
    res = prune_loop(model, spec, train_set, val, w, epochs_each=6, threshold=16,
                     max_iterations=3, rng=np.random.default_rng(1))
    problems = []
    if len(res.plans) < 2:
        problems.append(f"only {len(res.plans)} iteration(s) ran")
    # replay every plan on a fresh network of the starting shape and recount
    replay, replay_spec = init_model(spec, np.random.default_rng(0)), spec
    for (before, plan), record in zip(res.plans, res.iterations[1:]):
        replay, replay_spec = delete_filters(replay, replay_spec, plan)
        params, flops = recount(replay, replay_spec)
        # no batch norm here, so every array entry is a parameter
        if (params, flops) != (record.total_params, record.flops):
            problems.append(f"iteration {record.iteration}: recount {(params, flops)} vs "
                            f"{(record.total_params, record.flops)}")
        for idx, victims in plan.deletions.items():
            n = before.layers[idx].filters
            if before.group_of(idx):
                if len(victims) != prune_count(0.05, n):
                    problems.append(f"group layer {idx} lost {len(victims)} of {n}")
            elif len(victims) > prune_count(0.05, n):
                problems.append(f"layer {idx} lost {len(victims)} of {n}")
        if plan.deletions.get(0) != plan.deletions.get(2):
            problems.append("group members lost different filters")
    if recount(res.model, res.spec) != (count_params(res.spec)[0], count_flops(res.spec)):
        problems.append("final model disagrees with its spec")
    verdict(6, "exact parameter and FLOP accounting", not problems, time.perf_counter() - t0,
            "; ".join(problems) or f"{len(res.plans)} iteration(s) checked")


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    outs, seconds = [], []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(name)
        t0 = time.perf_counter()
        pipeline.run(load_config(TOY), out, load_config(TOY)["seed"])
        seconds.append(time.perf_counter() - t0)
        outs.append(out)
    return outs, seconds


@pytest.mark.slow
def test_criterion_7_end_to_end(verdict, toy_runs):
    (out, _), (seconds, _) = toy_runs
    rows = pipeline.read_jsonl(out / "prune_report.jsonl")
    accepted = [r for r in rows if r["accepted"]]
    iterations = len(accepted) - 1
    best = max(r["val_accuracy"] for r in accepted)
    final = accepted[-1]
    drop = 1 - final["eligible_flops"] / rows[0]["eligible_flops"]
    ok = (iterations >= 2 and best - final["val_accuracy"] <= 0.02 and drop >= 0.05
          and seconds < 600)
    verdict(7, "end-to-end run", ok, seconds,
            f"{iterations} accepted iteration(s), accuracy {final['val_accuracy']:.4f} "
            f"(max {best:.4f}), eligible FLOPs -{100 * drop:.1f}%")


@pytest.mark.slow
def test_criterion_8_determinism(verdict, toy_runs):
    (a, b), seconds = toy_runs
    same_log = (a / "search_log.jsonl").read_bytes() == (b / "search_log.jsonl").read_bytes()
    same_ckpt = (a / "pruned.tasc").read_bytes() == (b / "pruned.tasc").read_bytes()
    m1, s1 = checkpoint.load(a / "pruned.tasc")
    m2, s2 = checkpoint.load(b / "pruned.tasc")
    same_weights = s1 == s2 and all(
        np.array_equal(p1[k], p2[k]) for p1, p2 in zip(m1.params, m2.params) for k in p1)
    verdict(8, "same-seed determinism", same_log and same_ckpt and same_weights, sum(seconds),
            f"search log identical {same_log}, checkpoint identical {same_ckpt}")
