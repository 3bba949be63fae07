"""Acceptance criteria, checked at their stated tolerances."""
import time

import numpy as np

from lvreduce import averaging as av
from lvreduce.experiments import (
    averaging_study,
    integrator_orders,
    oracle_study,
    residual_study,
    run_invariants,
    slope_study,
    transient_decay,
)
from lvreduce.model import SIGMA_EXAMPLE


def test_sigma_reproduction(report):
    start = time.perf_counter()
    rep = av.stability_report(av.stability_setup(SIGMA_EXAMPLE), SIGMA_EXAMPLE["eps"])
    elapsed = time.perf_counter() - start
    ok_naive = abs(rep.sigma_naive - (-0.0122)) <= 0.005
    ok_sigma = abs(rep.sigma - 0.0228) <= 0.005
    opposite = rep.sigma * rep.sigma_naive < 0
    passed = ok_naive and ok_sigma and opposite and elapsed < 10
    report(1, "sigma reproduction", passed,
           f"sigma_naive={rep.sigma_naive:.4f} (target -0.0122 +- 0.005), sigma={rep.sigma:.4f} "
           f"(target 0.0228 +- 0.005), opposite signs={opposite}, {elapsed:.1f}s")
    assert passed


def test_convergence_slopes(pipe, report):
    start = time.perf_counter()
    res = slope_study(pipe, (0.2, 0.1, 0.05, 0.025), order=1)
    elapsed = time.perf_counter() - start
    sp, sq = res.fit_p.slope, res.fit_q.slope
    passed = 0.85 <= sp <= 1.25 and 0.85 <= sq <= 1.25 and elapsed < 300
    report(2, "convergence slopes", passed,
           f"slope p={sp:.3f} (stderr {res.fit_p.stderr:.3f}), q={sq:.3f} (stderr {res.fit_q.stderr:.3f}), "
           f"window [0.85, 1.25], errors p={['%.2e' % e for e in res.err_p]}, {elapsed:.1f}s")
    assert passed


def test_transient_decay(pipe, report):
    mu = pipe.mu
    runs = {eps: transient_decay(pipe, eps, orders=(0,))[0] for eps in (0.1, 0.01)}
    ratio = runs[0.1].plateau / runs[0.01].plateau
    rates_ok = all(r.rate >= 0.5 * mu for r in runs.values())
    passed = rates_ok and 5 <= ratio <= 20
    report(3, "transient decay", passed,
           f"rates {runs[0.1].rate:.2f} / {runs[0.01].rate:.2f} vs 0.5*mu={0.5 * mu:.2f}, "
           f"plateaus {runs[0.1].plateau:.2e} / {runs[0.01].plateau:.2e}, ratio {ratio:.2f} (window [5, 20])")
    assert passed


def test_pde_residual_scaling(pipe, report):
    res = residual_study(pipe, (0.1, 0.05, 0.025))
    r1, r2 = res.ratios_order1, res.ratios_order2
    passed = all(abs(r - 2) <= 0.5 for r in r1) and all(abs(r - 4) <= 1.0 for r in r2)
    report(4, "PDE residual scaling", passed,
           f"order-1 ratios {['%.3f' % r for r in r1]} (2 +- 25%), order-2 ratios {['%.3f' % r for r in r2]} (4 +- 25%)")
    assert passed


def test_fixed_point_oracle(pipe, report):
    res = oracle_study(pipe, (0.1, 0.05, 0.025), n_points=5)
    passed = abs(res.fit.slope - 2) <= 0.3
    report(5, "fixed-point oracle", passed,
           f"slope {res.fit.slope:.3f} (2 +- 0.3), errors {['%.2e' % e for e in res.errors]}, "
           f"median contraction {['%.3f' % c for c in res.contraction]}")
    assert passed


def test_structural_invariants(report):
    start = time.perf_counter()
    results = run_invariants()
    elapsed = time.perf_counter() - start
    failed = [name for name, ok, _, _ in results if not ok]
    passed = not failed and elapsed < 60
    report(6, "structural invariants", passed,
           f"{len(results) - len(failed)}/{len(results)} passed"
           + (f", failed: {failed}" if failed else "") + f", {elapsed:.1f}s")
    assert passed


def test_averaging_orders(pipe, report):
    res = averaging_study(pipe, (0.1, 0.05, 0.025, 0.0125))
    s0, s1 = res.fit0.slope, res.fit1.slope
    passed = abs(s0 - 1) <= 0.2 and abs(s1 - 2) <= 0.3
    report(7, "averaging orders", passed,
           f"order-0 uniform slope {s0:.3f} (1 +- 0.2), order-1 stroboscopic slope {s1:.3f} (2 +- 0.3)")
    assert passed


def test_integrator_self_consistency(pipe, report):
    res = integrator_orders(pipe)
    passed = abs(res.implicit_euler_order - 1) <= 0.2 and abs(res.rk4_order - 4) <= 0.3
    report(8, "integrator self-consistency", passed,
           f"implicit Euler order {res.implicit_euler_order:.3f} (1 +- 0.2), RK4 order {res.rk4_order:.3f} (4 +- 0.3)")
    assert np.isfinite(res.rk4_order) and passed
