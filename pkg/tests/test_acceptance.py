"""AC-1 .. AC-10 at their stated tolerances; each prints one PASS/FAIL line."""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE
from oracles import demand_oracle, fd_grad, utility_ref
from pseudeq import autodiff as ad
from pseudeq import baselines as bl
from pseudeq import exchange as ex
from pseudeq import gaes
from pseudeq import kyoto as ky
from pseudeq import nn
from pseudeq import pseudogame as pg
from pseudeq.cli import kyoto_phase_rows, scarf_run

pytestmark = pytest.mark.slow


def report(key: str, ok: bool, detail: str, t0: float) -> None:
    line = f"{key} {'PASS' if ok else 'FAIL'}: {detail} ({time.perf_counter() - t0:.1f}s)"
    ACCEPTANCE[key] = line
    print(line, flush=True)
    assert ok, line


def _economies(family, count, base, n=3, m=5):
    return [ex.sample_economy(family, n, m, None, base + k) for k in range(count)]


def _train(family, seed, T, n_train=500):
    train = _economies(family, n_train, 10 ** 6 * (seed + 1))
    valid = _economies(family, 50, 10 ** 6 * (seed + 1) + 5 * 10 ** 5)
    cfg = gaes.TrainConfig(outer_iters=T, val_every=200, patience=10 ** 6, seed=seed,
                           n_norm_samples=100)
    res = gaes.gaes_train(gaes.ExchangeProblem(train, 100), None, cfg,
                          gaes.ExchangeProblem(valid, 100), timing=False)
    return res.best_model


# ---------------------------------------------------------------- AC-1

def test_ac1_autodiff_matches_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d_in, d_h, d_out = rng.integers(2, 6, size=3)
        out_act = ("identity", "softmax")[seed % 2]
        params = nn.init_mlp([d_in, d_h, d_out], rng, hidden_act="relu", out_act=out_act)
        for layer in params.layers:
            layer.b[:] = rng.normal(0, 0.5, layer.b.shape)
        x = rng.normal(size=(4, d_in))
        w = rng.normal(size=(4, d_out))
        tape = ad.Tape()
        loss = ad.tsum(nn.forward(params, x, tape) * w)
        grads = nn.param_grads(params, tape, ad.backward(tape, loss))
        arrays = params.arrays()
        for k, g in enumerate(arrays):
            def f(v, k=k):
                saved = arrays[k].copy()
                arrays[k][...] = v
                val = float(np.sum(nn.forward(params, x, ad.Tape()).value * w))
                arrays[k][...] = saved
                return val
            ref = fd_grad(f, g.copy(), h=1e-5)
            err = np.linalg.norm(grads[k] - ref) / max(np.linalg.norm(ref), np.linalg.norm(grads[k]), 1e-8)
            worst = max(worst, err)
    report("AC-1", worst <= 1e-5, f"worst relative gradient error {worst:.2e} over 100 MLPs", t0)


# ---------------------------------------------------------------- AC-2

def test_ac2_demand_oracle_optimality():
    t0 = time.perf_counter()
    worst_gap, worst_walras, bad = -np.inf, 0.0, 0
    for fam in ex.FAMILIES:
        for k in range(200):
            rng = np.random.default_rng([k, ex.FAMILIES.index(fam)])
            m = int(rng.integers(2, 6))
            v = rng.uniform(0.05, 1.0, m)
            rho = rng.uniform(-1.25, -0.75) if (fam == "ces" and k % 2) else rng.uniform(0.25, 0.95)
            p = rng.uniform(0.05, 1.0, m)
            p /= p.sum()
            budget = float(rng.uniform(0.1, 2.0))
            x = ex.demands(fam, v[None], np.array([rho]), p, np.array([budget]))[0]
            if np.any(x < -1e-12) or p @ x > budget + 1e-8:
                bad += 1
            worst_walras = max(worst_walras, abs(p @ x - budget))
            y = demand_oracle(fam, v, rho, p, budget, restarts=3, seed=k)
            y = np.clip(y, 0, None) * min(1.0, budget / max(p @ np.clip(y, 0, None), 1e-300))
            gap = utility_ref(fam, v, rho, y) - utility_ref(fam, v, rho, x)
            worst_gap = max(worst_gap, gap)
    ok = bad == 0 and worst_gap <= 1e-6 and worst_walras <= 1e-8
    report("AC-2", ok, f"oracle-minus-closed-form utility max {worst_gap:.1e}, "
                       f"Walras residual max {worst_walras:.1e}, infeasible {bad}/800", t0)


# ---------------------------------------------------------------- AC-3

def test_ac3_tatonnement_converges_on_cobb_douglas():
    t0 = time.perf_counter()
    valid = _economies("cobb_douglas", 10, 7000)
    run = lambda e, eta: bl.tatonnement(e, eta, 500, timing=False)
    eta = bl.select_eta(run, valid).eta
    finals = np.array([run(e, eta).last for e in _economies("cobb_douglas", 50, 8000)])
    frac = float(np.mean(finals <= 1e-3))
    report("AC-3", frac >= 0.95, f"eta={eta}: {frac:.0%} of 50 economies reach <= 1e-3", t0)


# ---------------------------------------------------------------- AC-4

def test_ac4_gaes_linear_quality():
    t0 = time.perf_counter()
    test = _economies("linear", 50, 9 * 10 ** 6)
    prob = gaes.ExchangeProblem(test, 1000, norm_seed=123)
    scores = []
    for seed in range(3):
        model = _train("linear", seed, 2000)
        scores.append(float(np.mean(prob.exploitability(model) / prob.denominators())))
    med = float(np.median(scores))
    report("AC-4", med < 0.1, f"median over seeds of mean normalized exploitability {med:.4f} "
                              f"(seeds {', '.join(f'{s:.4f}' for s in scores)})", t0)


# ---------------------------------------------------------------- AC-5

def test_ac5_gaes_beats_tatonnement_on_leontief():
    t0 = time.perf_counter()
    test = _economies("leontief", 50, 9 * 10 ** 6)
    valid = _economies("leontief", 10, 9 * 10 ** 6 + 500)
    run = lambda e, eta: bl.tatonnement(e, eta, 500, timing=False)
    eta = bl.select_eta(run, valid).eta
    tat = float(np.mean([run(e, eta).last for e in test]))
    prob = gaes.ExchangeProblem(test, 10)
    ours = [float(prob.exploitability(_train("leontief", seed, 2000)).mean()) for seed in range(3)]
    med = float(np.median(ours))
    report("AC-5", med <= tat, f"GAES median mean exploitability {med:.3e} vs tuned tatonnement "
                               f"{tat:.3e} (eta={eta})", t0)


# ---------------------------------------------------------------- AC-6

def test_ac6_learned_discriminator_adequacy():
    t0 = time.perf_counter()
    train = _economies("linear", 500, 11 * 10 ** 6)
    valid = _economies("linear", 50, 12 * 10 ** 6)
    cfg = gaes.TrainConfig(outer_iters=1, inner_iters=0, warmup_iters=2000, lr_disc=1e-3,
                           lr_gen=0.0, discriminator="learned", seed=0, n_norm_samples=10)
    res = gaes.gaes_train(gaes.ExchangeProblem(train, 10), None, cfg, timing=False)
    reps = [e for e in valid for _ in range(4)]
    prob = gaes.ExchangeProblem(reps, 10)
    rng = np.random.default_rng(5)
    draws = [ex.uniform_feasible_outcomes(e, 4, rng) for e in valid]
    P = np.concatenate([d[0] for d in draws])
    X = np.concatenate([d[1] for d in draws])
    phi = np.array([ex.outcome_exploitability(e, P[k], X[k]) for k, e in enumerate(reps)])
    psi = prob.learned_regret(res.model, P, X)
    frac = float(np.mean(psi >= 0.5 * phi))
    report("AC-6", frac >= 0.8, f"learned regret >= 0.5 x exploitability on {frac:.1%} of 200 outcomes", t0)


# ---------------------------------------------------------------- AC-7

def test_ac7_kyoto_replication():
    t0 = time.perf_counter()
    base = ky.sample_kyoto(2, 0)
    train = ky.sample_statics(base, 500, 1)
    test = ky.statics_instances(base, ky.beta_grid(10))
    cfg = gaes.TrainConfig(outer_iters=5000, lr_gen=1e-2, val_every=500, patience=10 ** 6,
                           seed=0, n_norm_samples=1000)
    res = gaes.gaes_train_kyoto(train, None, cfg, valid=ky.sample_statics(base, 50, 2), timing=False)
    rows = kyoto_phase_rows(test, res.best_model, n_norm_samples=1000)
    mean_norm = float(np.mean([r[5] for r in rows]))
    agree = float(np.mean([r[3] == r[4] for r in rows]))
    report("AC-7", mean_norm < 0.05 and agree >= 0.7,
           f"mean normalized exploitability {mean_norm:.2e}, label agreement {agree:.0%}", t0)


# ---------------------------------------------------------------- AC-8

def test_ac8_scarf_spirals_out():
    t0 = time.perf_counter()
    centre = np.full(3, 1 / 3)
    out = 0
    for seed in range(20):
        tr = scarf_run(1e-2, 500, seed, timing=False)
        out += np.linalg.norm(tr.final - centre) > np.linalg.norm(tr.snapshots[0] - centre)
    report("AC-8", out >= 18, f"{out}/20 seeds end farther from the centre than they started", t0)


# ---------------------------------------------------------------- AC-9

def test_ac9_brute_force_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    g = pg.nonlipschitz_example()
    for a in ([0.25, 0.25], [1.0, 1.0]):
        a = np.array(a)
        worst = max(worst, abs(pg.brute_force_exploitability(g, a, 101) - pg.exploitability(g, a)))
    rng = np.random.default_rng(0)
    for _ in range(5):
        game = pg.bimatrix_adapter(rng.uniform(-1, 1, (2, 2)), rng.uniform(-1, 1, (2, 2)))
        x, y = rng.dirichlet([1, 1]), rng.dirichlet([1, 1])
        a = np.concatenate([x, y])
        worst = max(worst, abs(pg.brute_force_exploitability(game, a, 101) - pg.exploitability(game, a)))
    closed = 0.0
    for a1 in np.linspace(0, 1, 21):
        for a2 in np.linspace(0, 1, 21):
            if a2 < a1 ** 2 or a1 < a2 ** 2:
                continue
            val = pg.exploitability(g, np.array([a1, a2]))
            closed = max(closed, abs(val - pg.nonlipschitz_closed_form(a1, a2)))
    report("AC-9", worst <= 0.01 and closed <= 1e-6,
           f"brute-force gap {worst:.1e}, closed-form gap {closed:.1e}", t0)


# ---------------------------------------------------------------- AC-10

def _is_correctly_rounded_inv_sqrt(f: float, t: int) -> bool:
    """True iff the float f is the nearest double to 1/sqrt(t), decided in exact rationals."""
    lo = (Fraction(math.nextafter(f, 0.0)) + Fraction(f)) / 2
    hi = (Fraction(f) + Fraction(math.nextafter(f, math.inf))) / 2
    # lo < 1/sqrt(t) < hi  <=>  lo^2 t < 1 < hi^2 t
    return lo * lo * t <= 1 <= hi * hi * t


def test_ac10_theorem1_schedules_exact():
    t0 = time.perf_counter()
    ok = True
    for pl in (Fraction(1), Fraction(2), Fraction(3, 7)):
        cfg = gaes.TrainConfig(schedule="theorem1", pl_constant=float(pl))
        for s in range(1, 11):
            ok &= gaes.theorem1_disc_lr(Fraction(s), pl) == Fraction(2 * s + 1) / (pl * (s + 1) ** 2)
            if pl.denominator == 1:
                ok &= Fraction(gaes.disc_lr(cfg, s)) == Fraction(float(Fraction(2 * s + 1, (s + 1) ** 2) / pl))
    for t in range(1, 11):
        f = gaes.theorem1_gen_lr(t)
        ok &= _is_correctly_rounded_inv_sqrt(f, t)
        ok &= gaes.gen_lr(gaes.TrainConfig(schedule="theorem1", pl_constant=1.0), t - 1) == f
        root = math.isqrt(t)
        if root * root == t:
            ok &= f == float(Fraction(1, root))
    report("AC-10", bool(ok), "both schedules equal their closed forms for t, s in 1..10", t0)
