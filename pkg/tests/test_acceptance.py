"""Acceptance criteria, each run at its stated tolerance.

Every test records one verdict line, printed in the ``acceptance criteria``
section of the pytest summary.  Criterion 10 takes hours and runs only when
``INDIST_ADV_LONG=1``; its outcome is recorded, never asserted.
"""

import json
import math
import os
import sys
import time

import numpy as np
import pytest
from scipy import stats

from indist_adv.evaluation import (ACCURACY_GATE, AttackConfig, ModelSeeds, SweepConfig, attack_rate, church_window,
                                   fit_model, has_clean_band, held_out_accuracy, robust_train_experiment,
                                   scaling_sweep)
from indist_adv.evo_strategy import es_ask, es_init, es_repair, es_tell, minimize, rank
from indist_adv.mlp import grad_check, mlp_init
from indist_adv.parametric_data import UniformPairSupport, membership_batch
from indist_adv.scene_space import (SceneVector, SubprocessOracle, attack_scene, block_mask, flat_dim,
                                    sample_scene, scene_membership)
from indist_adv.seeding import derive_seed, make_rng
from indist_adv.stochasticity import AblationSpec, EvalConfig, Source, find_robust_base, run_ablation

SEED = 2024
SUPPORT = UniformPairSupport(20)
LONG = os.environ.get("INDIST_ADV_LONG") == "1"


def _model_seeds(k):
    return ModelSeeds.derive(SEED, "criterion1", k)


@pytest.fixture(scope="module")
def recipe_models():
    out = []
    for k in range(5):
        model, _, _ = fit_model(20, 1000, _model_seeds(k), support=SUPPORT)
        acc = held_out_accuracy(model, SUPPORT, derive_seed(SEED, "criterion1", k, "test"), 2000)
        out.append((model, acc))
    return out


@pytest.fixture(scope="module")
def prevalence_report(recipe_models):
    model = next(m for m, acc in recipe_models if acc > ACCURACY_GATE)
    rep = attack_rate(model, SUPPORT, n_starts=100, n_repeats=10, attack_cfg=AttackConfig(1500),
                      seed=derive_seed(SEED, "criterion2"))
    return model, rep


def test_c01_training_fidelity(recipe_models, accept):
    t0 = time.perf_counter()
    accs = [acc for _, acc in recipe_models]
    passed = sum(a > ACCURACY_GATE for a in accs)
    ok = passed >= 4
    accept(1, ok, f"held-out accuracy {[round(a, 4) for a in accs]}, {passed}/5 above {ACCURACY_GATE}")
    assert ok


def test_c02_attack_prevalence(prevalence_report, accept):
    _, rep = prevalence_report
    ok = rep.mean_rate >= 0.95
    accept(2, ok, f"mean attack rate {rep.mean_rate:.3f} +- {rep.std_rate:.3f} over 10x100 starts (need >= 0.95)")
    assert ok


def test_c03_distance_scaling(accept):
    cfg = SweepConfig(n_starts=100, n_repeats=1)
    rows = scaling_sweep([20], [1000, 10_000, 100_000], 1, cfg, seed=derive_seed(SEED, "criterion3"))
    dists = [r.mean_distance for r in rows]
    ok = all(d is not None for d in dists) and dists[0] < dists[1] < dists[2]
    detail = ", ".join(f"n={r.size}: acc {r.accuracy:.4f} rate {r.mean_rate} dist {r.mean_distance}" for r in rows)
    accept(3, ok, f"mean distance strictly increasing? {detail}")
    assert ok


def test_c04_robust_training_null_result(accept):
    rep, *_ = robust_train_experiment(20, 10_000, 2000, ModelSeeds.derive(SEED, "criterion4"),
                                      attack_seed=derive_seed(SEED, "criterion4", "attack"),
                                      test_seed=derive_seed(SEED, "criterion4", "test"),
                                      n_starts=100, n_repeats=10)
    before, after = rep.before.mean_rate, rep.after.mean_rate
    ok = rep.n_adversarial == 2000 and after >= 0.95 and abs(after - before) <= 0.05
    accept(4, ok, f"rate before {before:.3f}, after {after:.3f} with {rep.n_adversarial} adversarial points "
                  f"(accuracy {rep.accuracy_before:.4f} -> {rep.accuracy_after:.4f}; need after >= 0.95, "
                  f"|change| <= 0.05)")
    assert ok


def test_c05_church_window_bands(prevalence_report, accept):
    model, rep = prevalence_report
    wins = rep.successes[:20]
    clean = 0
    for k, o in enumerate(wins):
        g = church_window(model, SUPPORT, o.start, o.adversarial, orth_seed=derive_seed(SEED, "orth", k))
        clean += has_clean_band(g)
    ok = len(wins) == 20 and clean >= 18
    accept(5, ok, f"{clean}/{len(wins)} beta=0 rows read Correct+ Adversarial+ OutOfDist+ (need >= 18/20)")
    assert ok


def _sphere(x):
    return float(np.sum(x * x))


def _rosen(x):
    return float(np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))


def _trajectory(x0, sigma0, seed, shift, gens=8):
    s = es_init(x0, sigma0)
    rng = make_rng(seed)
    means = []
    for _ in range(gens):
        X = es_ask(s, rng)
        s = es_tell(s, rank(X, np.array([_rosen(x) + shift for x in X])))
        if s._eig is None:
            s = es_repair(s)
        means.append(s.mean)
    return np.array(means), s.sigma


def test_c06_optimizer_soundness(accept):
    import cma

    sphere_evals, rosen_evals = [], []
    for seed in range(10):
        _, f, n, _ = minimize(_sphere, np.full(10, 3.0), 1.0, make_rng(seed), 6000, target=1e-8)
        sphere_evals.append(n if f < 1e-8 else math.inf)
        _, f, n, _ = minimize(_rosen, np.zeros(5), 0.5, make_rng(seed), 30_000, target=1e-6)
        rosen_evals.append(n if f < 1e-6 else math.inf)
    ref = []
    for fn, x0, s0, target, budget in [(_sphere, [3.0] * 10, 1.0, 1e-8, 6000),
                                       (_rosen, [0.0] * 5, 0.5, 1e-6, 30_000)]:
        es = cma.CMAEvolutionStrategy(x0, s0, {"seed": 3, "verbose": -9, "ftarget": target, "maxfevals": budget})
        es.optimize(fn)
        ref.append(es.result.fbest < target and es.result.evaluations <= budget)
    rng = np.random.default_rng(SEED)
    fuzz_ok = 0
    for _ in range(100):
        d = int(rng.integers(2, 8))
        x0, sigma0, seed = rng.uniform(-3, 3, d), float(rng.uniform(0.1, 2)), int(rng.integers(2**32))
        shift = float(rng.uniform(-1e3, 1e3))
        m1, s1 = _trajectory(x0, sigma0, seed, 0.0)
        m2, s2 = _trajectory(x0, sigma0, seed, shift)
        m3, s3 = _trajectory(x0, sigma0, seed, 0.0)
        fuzz_ok += np.array_equal(m1, m2) and s1 == s2 and np.array_equal(m1, m3) and s1 == s3
    ok = max(sphere_evals) <= 6000 and max(rosen_evals) <= 30_000 and all(ref) and fuzz_ok == 100
    accept(6, ok, f"sphere worst {max(sphere_evals)} evals (<= 6000), rosenbrock worst {max(rosen_evals)} "
                  f"(<= 30000), reference implementation within budgets {ref}, {fuzz_ok}/100 fuzz cases "
                  f"shift-invariant and deterministic")
    assert ok


def test_c07_gradient_correctness(accept):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for k in range(100):
        d = int(rng.integers(1, 9))
        model = mlp_init(d, int(rng.integers(2**63)))
        for b in model.biases:
            b += rng.normal(0, 0.1, b.shape)
        label = int(rng.integers(2))
        lo, hi = SUPPORT.class_range(label)
        x = rng.uniform(lo, hi, d)
        worst = max(worst, grad_check(model, x, label))
    ok = worst < 1e-4
    accept(7, ok, f"max relative gradient error {worst:.2e} over 100 (model, point) pairs (need < 1e-4)")
    assert ok


def test_c08_scene_statistics(accept):
    rng = make_rng(derive_seed(SEED, "criterion8"))
    scenes = [sample_scene(rng) for _ in range(10_000)]
    pos = np.array([s.camera.position for s in scenes])
    radii = np.linalg.norm(pos, axis=1)
    ks = stats.kstest(radii, stats.uniform(loc=0.5, scale=7.5).cdf).statistic
    crit = stats.kstwo.ppf(0.99, len(radii))
    mean_dir = float(np.linalg.norm((pos / radii[:, None]).mean(axis=0)))
    member = sum(scene_membership(s) for s in scenes)
    fuzz = np.random.default_rng(SEED)
    exact = 0
    for i in range(100_000):
        n = int(fuzz.integers(1, 5))
        flat = fuzz.standard_normal(flat_dim(n)) * fuzz.choice([1e-300, 1.0, 1e300])
        exact += np.array_equal(SceneVector.from_flat(flat, n).flat, flat)
    ok = ks < crit and mean_dir < 0.05 and member == 10_000 and exact == 100_000
    accept(8, ok, f"KS {ks:.4f} < {crit:.4f}, mean direction norm {mean_dir:.4f} < 0.05, "
                  f"{member}/10000 members, {exact}/100000 exact round trips")
    assert ok


def test_c09_scene_attack_loop(accept):
    rng = make_rng(derive_seed(SEED, "criterion9"))
    starts = [sample_scene(rng) for _ in range(20)]
    wins, violations = 0, 0
    cmd = [sys.executable, "-m", "indist_adv.oracle_server", "--seed", "0"]
    with SubprocessOracle(cmd) as oracle:
        for i, s in enumerate(starts):
            out = attack_scene(oracle, s, "camera", max_generations=15, seed=derive_seed(SEED, "scene", i))
            if out.success:
                wins += 1
                mask = block_mask(s.n_lights, "camera")
                same = out.adversarial[~mask].tobytes() == s.flat[~mask].tobytes()
                flipped = oracle.classify_flat(out.adversarial[None], s.n_lights)[0][0] != out.true_label
                violations += not (scene_membership(out.adversarial, s.n_lights) and same and flipped)
    ok = wins >= 6 and violations == 0
    accept(9, ok, f"{wins}/20 camera-block attacks succeeded within 15 generations (need >= 6), "
                  f"{violations} membership/inactive-block violations")
    assert ok


@pytest.mark.skipif(not LONG, reason="hours of compute; set INDIST_ADV_LONG=1")
def test_c10_stochasticity_ablation(accept):
    cfg = EvalConfig(n_starts=100, n_repeats=1)
    base, log = find_robust_base(20, 100_000, 10, cfg, seed=derive_seed(SEED, "criterion10"))
    if base is None:
        accept(10, None, f"no robust base among {len(log)} candidates: "
                         + json.dumps([c.to_json() for c in log]))
        return
    means = {}
    for src in Source:
        means[src.value] = run_ablation(AblationSpec(base, src, 10), cfg).mean
    others = [v for k, v in means.items() if k != Source.MODEL_INIT.value]
    margin = means[Source.MODEL_INIT.value] - max(others)
    accept(10, None, f"mean rates {means}; ModelInit margin over the others {margin:.3f} (target >= 0.3)")


def test_c10_placeholder_when_skipped(accept):
    if not LONG:
        accept(10, None, "not run (opt-in: INDIST_ADV_LONG=1)")
