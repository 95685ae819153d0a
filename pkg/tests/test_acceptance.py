"""Acceptance gates, one test per criterion.

Each test records what it measured (shown in the closing summary block as
``criterion N PASS/FAIL ... [measured]``) before asserting, so a failing
gate still reports its numbers. Tolerances are the stated ones.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from helpers import finite_difference_errors, random_two_stack_net
from ppba import attack, config, pipeline, privacy
from ppba.attack import AttackKnowledge, AttackModelSpec, min_norm_reconstruct
from ppba.authsys import BaClassifierSpec, build_classifier
from ppba.privacy import ks_statistic, ks_two_sample
from ppba.projection import (JlParams, draw_ternary, identity_matrix, jl_min_dimension,
                             project, project_rows, sample_matrix, theoretical_sigma)


def _brute_force_d(a, b):
    best = 0.0
    for t in list(a) + list(b):
        fa = sum(1 for v in a if v <= t) / len(a)
        fb = sum(1 for v in b if v <= t) / len(b)
        best = max(best, abs(fa - fb))
    return best


@pytest.mark.criterion(1, "JL prefactor table reproduction")
def test_criterion_01_jl_table(record_property):
    rows = [((1.0, 0.5), 30.0, 30.0), ((0.5, 1.0), 72.0, 73.0), ((0.7, 1.0), 45.92, 46.0)]
    start = time.perf_counter()
    got = [jl_min_dimension(JlParams(100, eps, beta), include_log=False)
           for (eps, beta), _, _ in rows]
    elapsed = time.perf_counter() - start
    record_property("measured", ", ".join(f"{g:.4f}" for g in got) + f"; {elapsed * 1e3:.3f} ms")
    for g, (_, computed, printed) in zip(got, rows):
        assert round(g, 2) == computed
        assert abs(g - printed) <= 1.1
    assert elapsed < 1e-3


@pytest.mark.criterion(2, "classifier parameter counts")
def test_criterion_02_parameter_counts(record_property):
    start = time.perf_counter()
    plain = build_classifier(BaClassifierSpec(68, "plain"), 33).n_params()
    private = build_classifier(BaClassifierSpec(155, "privacy_preserving"), 56).n_params()
    elapsed = time.perf_counter() - start
    record_property("measured", f"plain {plain}, privacy-preserving {private}; {elapsed:.3f} s")
    assert plain == (347_076, 344_516)
    assert private == (31_323, 30_811)
    assert elapsed < 1.0


@pytest.mark.criterion(3, "JL concentration with the full bound")
def test_criterion_03_jl_concentration(record_property):
    d, n, phi = 50, 100, 3.0
    k = math.ceil(jl_min_dimension(JlParams(n, 0.5, 1.0)))
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    diffs = X - Y
    inside = []
    for seed in range(5):
        R = draw_ternary(k, d, phi, seed).astype(np.float64)
        scale = 1.0 / (math.sqrt(k) * theoretical_sigma(phi))
        ratios = np.sum((scale * diffs @ R.T) ** 2, axis=1) / np.sum(diffs ** 2, axis=1)
        inside.append(int(np.sum((ratios >= 0.5) & (ratios <= 1.5))))
    elapsed = time.perf_counter() - start
    record_property("measured", f"k={k}, in-band pairs per matrix {inside}; {elapsed:.2f} s")
    assert min(inside) >= 99
    assert elapsed < 5.0


@pytest.mark.criterion(4, "projection preserves squared norm in expectation")
def test_criterion_04_unbiasedness(record_property):
    d, k, phi = 40, 20, 3.0
    x = np.random.default_rng(1).normal(size=d)
    start = time.perf_counter()
    ratios = np.empty(10_000)
    for i in range(ratios.size):
        xp = project_rows(x, sample_matrix(k, d, phi, seed=10_000 + i))
        ratios[i] = (xp @ xp) / (x @ x)
    elapsed = time.perf_counter() - start
    mean = float(ratios.mean())
    record_property("measured", f"mean ratio {mean:.4f}; {elapsed:.2f} s")
    assert abs(mean - 1.0) <= 0.02
    assert elapsed < 10.0


@pytest.mark.criterion(5, "finite-difference gradient oracle")
def test_criterion_05_gradients(record_property):
    start = time.perf_counter()
    worst = 0.0
    kinds = set()
    for seed in range(20):
        for head in ("softmax", "sigmoid"):
            net, X, Y, loss = random_two_stack_net(seed, head)
            kinds |= {layer.kind for layer in net.layers}
            errors = finite_difference_errors(net, X, Y, loss, seed=seed)
            worst = max(worst, max(errors.values()))
    elapsed = time.perf_counter() - start
    record_property("measured", f"worst relative error {worst:.2e} over {sorted(kinds)}; "
                                f"{elapsed:.1f} s")
    assert worst <= 1e-3
    assert kinds == {"dense", "batch_norm", "relu", "dropout", "softmax", "sigmoid"}
    assert elapsed < 30.0


@pytest.mark.criterion(6, "KS statistic oracle equivalence")
def test_criterion_06_ks_oracle(record_property):
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(200):
        a = rng.integers(0, 8, size=rng.integers(2, 13)).astype(float)
        b = rng.integers(0, 8, size=rng.integers(2, 13)).astype(float)
        mismatches += ks_statistic(a, b) != _brute_force_d(a, b)
    hand = (ks_two_sample([1, 2, 3], [4, 5, 6]).d_statistic,
            ks_two_sample([1, 3], [2, 4]).d_statistic)
    base = np.arange(15, dtype=float)
    curve = sorted((r.d_statistic, r.p_value) for r in
                   (ks_two_sample(base, base + s) for s in np.linspace(0, 16, 65)))
    monotone = all(p1 >= p2 for (_, p1), (_, p2) in zip(curve, curve[1:]))
    elapsed = time.perf_counter() - start
    record_property("measured", f"{mismatches} mismatches, hand cases {hand}, "
                                f"p monotone {monotone}; {elapsed:.2f} s")
    assert mismatches == 0
    assert hand == (1.0, 0.5)
    assert monotone
    assert elapsed < 5.0


@pytest.mark.criterion(7, "minimum-norm reconstruction")
def test_criterion_07_min_norm(record_property):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst_residual, violations, systems, seed = 0.0, 0, 0, 0
    while systems < 100:
        d = int(rng.integers(4, 30))
        k = int(rng.integers(1, d))
        R = sample_matrix(k, d, seed=seed)
        seed += 1
        if np.linalg.matrix_rank(R.dense) < k:
            continue
        systems += 1
        x_prime = project_rows(rng.normal(size=d), R)
        x_hat = min_norm_reconstruct(x_prime, R)
        worst_residual = max(worst_residual, float(np.max(np.abs(project_rows(x_hat, R) - x_prime))))
        A = R.dense
        null = np.eye(d) - A.T @ np.linalg.solve(A @ A.T, A)
        for _ in range(20):
            z = null @ rng.normal(size=d)
            violations += np.linalg.norm(x_hat) > np.linalg.norm(x_hat + z) + 1e-12
    elapsed = time.perf_counter() - start
    record_property("measured", f"max residual {worst_residual:.1e}, "
                                f"{violations} norm violations; {elapsed:.2f} s")
    assert worst_residual <= 1e-8
    assert violations == 0
    assert elapsed < 5.0


def _config(**overrides):
    return config.load(None, {k.replace("__", "."): str(v) for k, v in overrides.items()})


@pytest.mark.criterion(8, "synthetic end-to-end verification and refresh")
def test_criterion_08_end_to_end(tmp_path, record_property):
    cfg = _config(synth__n_users=10, groups__enroll_fraction=1.0)
    start = time.perf_counter()
    pipeline.cmd_generate(cfg, tmp_path)
    enroll = pipeline.cmd_enroll(cfg, tmp_path)
    verify = pipeline.cmd_verify(cfg, tmp_path)
    refresh = pipeline.cmd_refresh(cfg, tmp_path)
    elapsed = time.perf_counter() - start
    val_acc = enroll["final"]["val_accuracy"]
    wrong = verify["unusability"]
    before, new, old = refresh["before"], refresh["new_matrix"], refresh["old_matrix"]
    record_property("measured", (
        f"val acc {val_acc:.3f}; wrong-key acceptance {wrong['sample_acceptance']:.3f} "
        f"(claims {wrong['acceptance']:.3f}); FRR before/after {before['sample_frr']:.3f}/"
        f"{new['sample_frr']:.3f} (claims {before['frr']:.3f}/{new['frr']:.3f}); "
        f"old-key acceptance {old['sample_acceptance']:.3f} (claims {old['acceptance']:.3f}); "
        f"{elapsed:.0f} s"))
    assert val_acc >= 0.90
    assert wrong["sample_acceptance"] <= 0.15
    assert abs(new["sample_frr"] - before["sample_frr"]) <= 0.05
    assert old["sample_acceptance"] <= 0.15
    assert elapsed < 300


def _mean_fraction(recovered, truth):
    return privacy.evaluate_distribution_privacy(recovered, truth).mean_fraction


@pytest.mark.criterion(9, "attack sanity ordering with identity control")
def test_criterion_09_attack_pair(tmp_path, record_property):
    cfg = _config(attack__modes="distribution_only,known_matrix")
    start = time.perf_counter()
    pipeline.cmd_generate(cfg, tmp_path)
    pipeline.cmd_enroll(cfg, tmp_path)
    summary = pipeline.cmd_attack(cfg, tmp_path)
    dist = summary["modes"]["distribution_only"]["mean_fraction"]
    known = summary["modes"]["known_matrix"]["mean_fraction"]

    # identity control: same attackers, victims, network and training settings, k = d
    prep = pipeline.prepare(cfg, tmp_path)
    d = prep.enroll_rows[0].d
    I = identity_matrix(d)
    corpus = attack.build_attack_corpus(prep.attack_profiles,
                                        AttackKnowledge("known_matrix", victim_matrices=(I,)),
                                        d, cfg.seed_for("attack_corpus"))
    tcfg = attack.default_attack_config(cfg.seed_for("attack_model"), cfg["attack.epochs"])
    net, _ = attack.train_attack_model(corpus, AttackModelSpec(d, d, cfg["attack.widths"]), tcfg,
                                       seed=cfg.seed_for("attack_model"))
    recovered = attack.recover_profiles(net, [project(p, I) for p in prep.enroll_rows])
    identity = _mean_fraction(recovered, prep.enroll_rows)
    elapsed = time.perf_counter() - start
    record_property("measured", f"identity {identity:.3f}, distribution-only {dist:.3f}, "
                                f"known-matrix {known:.3f}; {elapsed:.0f} s")
    assert identity >= 0.90
    assert dist < identity
    assert known >= dist
    assert elapsed < 600


def _run_all(cfg, out: Path):
    for name in ("generate", "enroll", "verify", "refresh", "attack", "report"):
        pipeline.COMMANDS[name](cfg, out)
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


@pytest.mark.criterion(10, "determinism under one master seed")
def test_criterion_10_determinism(tmp_path, record_property):
    cfg = _config(train__epochs=5, refresh__epochs=3, attack__epochs=3)
    first = _run_all(cfg, tmp_path / "a")
    second = _run_all(cfg, tmp_path / "b")
    differing = sorted(str(p) for p in set(first) | set(second) if first.get(p) != second.get(p))
    record_property("measured", f"{len(first)} files, {len(differing)} differ")
    assert first.keys() == second.keys()
    assert differing == []
