"""Acceptance criteria, one test each, timed against their runtime budgets.

Every test prints a single ``criterion N: PASS|FAIL ...`` line; the lines are
also collected into the terminal summary.  Run standalone with
``python tests/test_acceptance.py``.
"""

import math
import random
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
import oracles
from coevolve.backends.toy import CHALLENGER_STATE
from coevolve.challenger_reward import composite_reward, repetition_penalty, uncertainty_reward
from coevolve.curation import RejectReason, informative_band_filter, majority_vote
from coevolve.grpo import clipped_surrogate_loss, compute_advantages, kl_categorical
from coevolve.orchestrator import Engine, load_config, run_loop
from coevolve.similarity import ClusterAssignment, cluster, sentence_bleu
from test_grpo import finite_difference_check, random_instance


def run_criterion(number, title, limit, body):
    start = time.perf_counter()
    detail, ok = "", True
    try:
        detail = body() or ""
    except AssertionError as exc:
        ok, detail = False, str(exc).splitlines()[0] if str(exc) else "assertion failed"
    elapsed = time.perf_counter() - start
    if elapsed >= limit:
        ok = False
        detail = f"over budget; {detail}"
    verdict = "PASS" if ok else "FAIL"
    line = f"criterion {number}: {verdict} {title} ({elapsed:.2f}s / {limit:g}s) {detail}".rstrip()
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def sizes_of(labels):
    out = {}
    for lab in labels:
        out[lab] = out.get(lab, 0) + 1
    return ClusterAssignment(tuple(labels), out)


# -- 1 ------------------------------------------------------------------


def formula_suite():
    assert uncertainty_reward(0.5) == 1.0
    assert uncertainty_reward(1.0) == 0.0 and uncertainty_reward(0.0) == 0.0
    assert close(uncertainty_reward(0.3), 0.6)

    assert np.allclose(repetition_penalty(sizes_of([1, 1, 2, 3]), 1.0, 4), [0.5, 0.5, 0.25, 0.25], atol=1e-9)
    assert np.allclose(repetition_penalty(sizes_of(range(1, 9)), 1.0, 8), [0.125] * 8, atol=1e-9)
    assert repetition_penalty(sizes_of([1, 1, 2]), 0.0, 3) == [0.0] * 3

    assert close(composite_reward(True, 0.6, 0.25), 0.35)
    assert composite_reward(True, 0.1, 0.5) == 0.0
    assert composite_reward(False, 1.0, 0.0) == 0.0

    assert informative_band_filter(0.7, 0.25) == (True, RejectReason.NONE)
    assert informative_band_filter(0.8, 0.25) == (False, RejectReason.TOO_EASY)
    assert informative_band_filter(0.5, 0.0) == (True, RejectReason.NONE)

    # zero-noise limit of the z-score: tiny stabilizer, compare at its scale
    adv = compute_advantages([1, 0, 0, 1], 1e-15)
    assert np.allclose(adv, [1, -1, -1, 1], atol=1e-9)
    assert compute_advantages([1, 1, 1, 1], 1e-6).tolist() == [0.0] * 4
    adv = compute_advantages([1] + [0] * 9, 1e-6)
    assert close(adv[0], 0.9 / (0.3 + 1e-6)) and abs(adv[0] - 3.0) < 1e-4
    assert all(close(a, -0.1 / (0.3 + 1e-6)) for a in adv[1:])

    assert close(clipped_surrogate_loss([1.0], [1.0], 0.2), -1.0)
    assert close(clipped_surrogate_loss([1.5], [1.0], 0.2), -1.2)
    assert close(clipped_surrogate_loss([0.5, 1.0], [-1.0, 1.0], 0.2), -0.1)

    assert kl_categorical([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert close(kl_categorical([1, 0], [0.5, 0.5]), math.log(2))
    assert close(kl_categorical([0.9, 0.1], [0.5, 0.5]), 0.9 * math.log(1.8) + 0.1 * math.log(0.2))
    return "7 functions, 22 examples"


def test_criterion_1_formula_suite():
    run_criterion(1, "formula suite", 1, formula_suite)


# -- 2 ------------------------------------------------------------------


def band_exactness():
    # a majority count of 0 cannot occur, so that end is checked on p_hat directly
    assert informative_band_filter(0.0, 0.25)[0] is False
    for count in range(1, 11):
        v = majority_vote(["7"] * count + [str(100 + i) for i in range(10 - count)], 10)
        assert v.majority_count == count
        kept, _ = informative_band_filter(v.p_hat, 0.25)
        assert kept == (3 <= count <= 7), f"count {count}"
    return "counts 0..10"


def test_criterion_2_band_exactness():
    run_criterion(2, "band exactness at m=10", 1, band_exactness)


# -- 3 ------------------------------------------------------------------


def bleu_equivalence():
    rng = random.Random(2024)
    worst = 0.0
    for _ in range(300):
        a = [f"w{rng.randrange(10)}" for _ in range(rng.randint(1, 20))]
        b = [f"w{rng.randrange(10)}" for _ in range(rng.randint(1, 20))]
        worst = max(worst, abs(sentence_bleu(a, b) - oracles.bleu(a, b)))
    assert worst <= 1e-9, f"max deviation {worst:.3g}"
    return f"300 pairs, max deviation {worst:.1e}"


def test_criterion_3_bleu_oracle():
    run_criterion(3, "BLEU oracle equivalence", 10, bleu_equivalence)


# -- 4 ------------------------------------------------------------------


def partition(labels):
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, set()).add(i)
    return sorted(map(sorted, groups.values()))


def clustering_suite():
    rng = random.Random(4)
    nrng = np.random.default_rng(4)
    for _ in range(100):
        n = rng.randint(2, 12)
        m = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                m[i, j] = m[j, i] = rng.random()
        th = rng.uniform(0.2, 0.8)
        base = cluster(m, th)
        assert list(base.labels) == oracles.average_linkage(m.tolist(), th)
        perm = nrng.permutation(n)
        moved = cluster(m[np.ix_(perm, perm)], th)
        assert partition([base.labels[p] for p in perm]) == partition(moved.labels)
        assert sorted(base.cluster_sizes.values()) == sorted(moved.cluster_sizes.values())

        far = np.full((n, n), th)
        np.fill_diagonal(far, 0)
        assert cluster(far, th).n_clusters == n
        assert cluster(np.zeros((n, n)), th).cluster_sizes == {1: n}

    pairs = np.array([[0, 0.1, 0.9, 0.9], [0.1, 0, 0.9, 0.9], [0.9, 0.9, 0, 0.1], [0.9, 0.9, 0.1, 0]])
    got = cluster(pairs, 0.5)
    assert got.labels == (1, 1, 2, 2) and got.cluster_sizes == {1: 2, 2: 2}
    return "100 instances"


def test_criterion_4_clustering():
    run_criterion(4, "clustering properties", 10, clustering_suite)


# -- 5 ------------------------------------------------------------------


def gradient_check():
    rng = np.random.default_rng(5)
    worst = max(finite_difference_check(random_instance(rng, min_margin=1e-3)) for _ in range(50))
    assert worst <= 1e-4, f"worst relative error {worst:.3g}"
    return f"50 instances, worst relative error {worst:.1e}"


def test_criterion_5_gradient_check():
    run_criterion(5, "GRPO gradient check", 30, gradient_check)


# -- 6 ------------------------------------------------------------------

FRONTIER_ACC = (0.95, 0.7, 0.45, 0.05)
FRONTIER_PROCS = (2, 3, 5, 8)


def frontier_world():
    # with zero distractor logits, P(correct) = e^s / (e^s + P - 1)
    skill = [math.log(a * (p - 1) / (1 - a)) for a, p in zip(FRONTIER_ACC, FRONTIER_PROCS)]
    return {"procedures_per_level": list(FRONTIER_PROCS), "solver_skill": skill, "solver_lure": [0.0] * 4}


def frontier_targeting(tmp):
    target = int(np.argmin([abs(a - 0.5) for a in FRONTIER_ACC]))
    moves = []
    for seed in range(5):
        cfg = load_config("toy-smoke").with_overrides(seed=seed, toy=frontier_world())
        engine = Engine(cfg, tmp / f"s{seed}")
        assert np.allclose(engine.world.solver_accuracy(engine.world.initial_solver_policy()), FRONTIER_ACC)
        start = engine.start()
        before = start.challenger_policy.probs(CHALLENGER_STATE)[target]
        after = engine.run_challenger_phase(start).challenger_policy.probs(CHALLENGER_STATE)[target]
        moves.append(after - before)
        assert after > before, f"seed {seed}: mass on level {target} {before:.4f} -> {after:.4f}"
    return f"level {target} mass gain per seed " + ", ".join(f"{m:+.3f}" for m in moves)


def test_criterion_6_frontier_targeting(tmp_path):
    run_criterion(6, "frontier targeting", 120, lambda: frontier_targeting(tmp_path))


# -- 7 ------------------------------------------------------------------


def closed_loop(tmp):
    gains = []
    for seed in range(5):
        cfg = load_config("toy-smoke").with_overrides(seed=seed, iterations=3)
        _, metrics = run_loop(cfg, tmp / f"s{seed}")
        first = metrics[0]["solver_mean_accuracy"]
        last = [m for m in metrics if m["phase"] == "solver"][-1]["solver_mean_accuracy"]
        gains.append(last - first)
        assert last - first >= 0.05, f"seed {seed}: gain {last - first:.4f}"
    return "gains " + ", ".join(f"{g:.3f}" for g in gains)


def test_criterion_7_closed_loop(tmp_path):
    run_criterion(7, "closed-loop improvement", 600, lambda: closed_loop(tmp_path))


# -- 8 ------------------------------------------------------------------


def label_decay(tmp):
    decreasing, traces = 0, []
    for seed in range(5):
        cfg = load_config("toy-distractor").with_overrides(seed=seed)
        _, metrics = run_loop(cfg, tmp / f"s{seed}")
        pla = [m["pseudo_label_true_accuracy"] for m in metrics if m["phase"] == "curation"]
        assert len(pla) == cfg.iterations
        assert all(isinstance(x, float) and 0.0 <= x <= 1.0 for x in pla), f"seed {seed}: {pla}"
        decreasing += pla[-1] < pla[0]
        traces.append("/".join(f"{x:.2f}" for x in pla))
    assert decreasing >= 4, f"{decreasing}/5 seeds decrease: {traces}"
    return f"{decreasing}/5 seeds decrease ({'; '.join(traces)})"


def test_criterion_8_label_decay(tmp_path):
    run_criterion(8, "label-decay observability", 600, lambda: label_decay(tmp_path))


# -- 9 ------------------------------------------------------------------


def ablations(tmp):
    base = load_config("toy-smoke").with_overrides(iterations=2, pool_size=100)

    def run(name, **over):
        return run_loop(base.with_overrides(**over), tmp / name)[1]

    frozen = run("frozen", ablations={"train_challenger": False})
    assert len({m["challenger_hash"] for m in frozen}) == 1
    assert len({m["solver_hash"] for m in frozen}) == 3

    unfiltered = run("unfiltered", ablations={"filter_enabled": False})
    for m in unfiltered:
        if m["phase"] == "curation":
            assert m["kept"] == m["valid_questions"] and m["too_easy"] == m["too_hard"] == 0

    no_rep = run("no_rep", ablations={"rep_penalty_enabled": False})
    for m in no_rep:
        if m["phase"] == "challenger":
            assert m["mean_rep_penalty"] == 0.0

    shared = run("shared", shared_policy=True)
    assert all(m["challenger_hash"] == m["solver_hash"] for m in shared)
    hashes = [m["challenger_hash"] for m in shared]
    # init plus two trainable phases per iteration, each a new hash
    assert len(set(hashes)) == 5, hashes
    return "train_challenger, filter_enabled, rep_penalty_enabled, shared_policy"


def test_criterion_9_ablations(tmp_path):
    run_criterion(9, "ablation switches", 300, lambda: ablations(tmp_path))


# -- 10 -----------------------------------------------------------------


def determinism(tmp):
    cfg = load_config("toy-smoke").with_overrides(iterations=2, seed=11)
    files = ("metrics.jsonl", "datasets/iter001.jsonl", "datasets/iter002.jsonl")
    run_loop(cfg, tmp / "a")
    run_loop(cfg, tmp / "b")
    for rel in files:
        assert (tmp / "a" / rel).read_bytes() == (tmp / "b" / rel).read_bytes(), f"{rel} differs between runs"
    checked = 0
    for stop in [(1, "challenger"), (1, "curation"), (2, "solver")]:
        out = tmp / f"resume-{stop[0]}-{stop[1]}"
        Engine(cfg, out).run_loop(stop_after=stop)
        Engine(cfg, out).run_loop(resume=out / "checkpoints")
        for rel in files:
            assert (tmp / "a" / rel).read_bytes() == (out / rel).read_bytes(), f"{rel} differs after resume at {stop}"
        checked += 1
    return f"2 identical runs, {checked} interrupt points"


def test_criterion_10_determinism_and_resume(tmp_path):
    run_criterion(10, "determinism and resume", 300, lambda: determinism(tmp_path))


if __name__ == "__main__":
    raise SystemExit(pytest.main([str(Path(__file__)), "-q", "-s"]))
