import json

import numpy as np
import pytest

from lvreduce import averaging as av
from lvreduce.manifold import compute_h1, vandermonde
from lvreduce.model import SIGMA_EXAMPLE, EquilibriumBranch, LVParams, SpeciesBranch
from lvreduce.periodic import TWO_PI, PeriodicMatrixFn, QuadratureRule
from lvreduce.reduction import reduce_synthetic

RULE = QuadratureRule(512)
XS = np.array([[0.3, 0.7], [1.2, 0.4], [2.0, 1.5]])


@pytest.fixture(scope="module")
def constant_reduction(pipe):
    return av.naive_reduction(pipe.reduction)


def test_theta_independent_average_is_identity(constant_reduction):
    f = constant_reduction.fields
    F0 = av.average_F0(f, RULE)
    assert np.allclose(F0(XS), f.F(XS, np.zeros((3, 2)), 0.0), atol=1e-12)


def test_theta_independent_bracket_vanishes(constant_reduction):
    f = constant_reduction.fields
    h1 = compute_h1(f)
    F1 = av.average_F1(f, h1, RULE)
    coeffs = av.averaged_lv_coefficients(constant_reduction, h1, RULE)
    assert np.allclose(F1(XS), coeffs.correction_poly()(XS), atol=1e-12)
    assert np.abs(av.bracket(f, XS, np.full(3, 0.4), np.full(3, 2.9))).max() <= 1e-15


def test_zero_rates_average_to_zero(zero_reduction):
    f = zero_reduction.fields
    avg = av.averaged_field(f, compute_h1(f), RULE)
    assert np.abs(avg(XS, 0.1)).max() == 0.0


def test_order0_lotka_volterra_form(pipe):
    F0 = av.average_F0(pipe.fields, RULE)
    support = {e for e, c in zip(F0.exps, F0.coef) if np.abs(c).max() > 1e-14}
    assert support == {(1, 0), (0, 1), (1, 1)}
    assert abs(F0.term((1, 0))[1]) < 1e-14 and abs(F0.term((0, 1))[0]) < 1e-14
    coeffs = av.averaged_lv_coefficients(pipe.reduction, pipe.manifold.h1, RULE)
    assert np.allclose(coeffs.order0_poly().coef, F0.coef, atol=1e-10)


def test_correction_matches_direct_average(pipe):
    f, h1 = pipe.fields, pipe.manifold.h1
    coeffs = av.averaged_lv_coefficients(pipe.reduction, h1, RULE)
    theta = np.linspace(0, TWO_PI, RULE.panels + 1)
    _, JZ, _, _ = f.jacobians(XS[None], np.zeros((1, 3, 2)), theta[:, None])
    corr = np.einsum("tbij,tbj->tbi", JZ, h1(XS[None], theta[:, None]))
    direct = av._mean(corr, RULE)
    assert np.allclose(coeffs.correction_poly()(XS), direct, atol=1e-10)


def test_simpson_and_fourier_double_integrals_agree(pipe):
    f, h1 = pipe.fields, pipe.manifold.h1
    a = av.average_F1(f, h1, QuadratureRule(1024), method="simpson")
    b = av.average_F1(f, h1, QuadratureRule(1024), method="fourier", harmonics=8)
    assert np.abs(a(XS) - b(XS)).max() <= 1e-8


def test_constant_equilibria_coefficients():
    half = np.array([0.5, 0.5])
    br = SpeciesBranch.prescribed(lambda t: np.broadcast_to(half, np.shape(t) + (2,)).copy(),
                                  lambda t: np.zeros(np.shape(t) + (2,)), 2)
    pr = LVParams([0.4, 0.3], [0.2, 0.1], [0.1, 0.2], [0.5, 0.3])
    minus = PeriodicMatrixFn.constant([[-1.0]])
    red = reduce_synthetic(pr, minus, minus, EquilibriumBranch(br, br), 256)
    c = av.averaged_lv_coefficients(red, compute_h1(red.fields), RULE)
    assert np.allclose(c.alpha_p0, 0.5) and np.allclose(c.alpha_p1, 0.25)
    assert np.allclose(c.alpha_q0, 0.5) and np.allclose(c.alpha_q1, 0.25)


def test_zero_manifold_gives_zero_betas(pipe):
    from lvreduce.manifold import PolyPeriodic, _exps

    zero = PolyPeriodic.zero(2, exps=tuple(_exps(2)))
    c = av.averaged_lv_coefficients(pipe.reduction, zero, RULE)
    assert all(np.abs(b).max() == 0 for b in c.beta_p + c.beta_q)


def test_sigma_requires_two_sites(pipe):
    c = av.averaged_lv_coefficients(pipe.reduction, pipe.manifold.h1, RULE)
    assert np.isfinite(av.sigma_value(c, 0.1))


def _fourier_sigma(data, eps, n=512):
    """Independent sigma: scalar periodic solves done by FFT, u_k = g_k / (i k + 1)."""
    th = np.arange(n) * TWO_PI / n
    k = np.fft.fftfreq(n, 1.0 / n)

    def green(g):  # periodic solution of u' = -u + g
        return np.real(np.fft.ifft(np.fft.fft(g) / (1j * k + 1.0)))

    a = data["a0"] + data["a1"] * np.cos(th) + data["a_m1"] * np.sin(th)
    da = -data["a1"] * np.sin(th) + data["a_m1"] * np.cos(th)
    I = green(-da)
    P = np.stack([1 - a - I, a + I], axis=-1)
    Q = np.broadcast_to([1 - data["b"], data["b"]], P.shape)
    bp, bq = np.asarray(data["b_p"]), np.asarray(data["b_q"])
    PQ = P * Q
    cp = -(bp[0] * PQ[:, 0] - (PQ @ bp) * P[:, 0])
    cq = bq[0] * PQ[:, 0] - (PQ @ bq) * Q[:, 0]
    Hp2 = -np.stack([1, -1])[None] * green(cp)[:, None]
    Hq2 = -np.stack([1, -1])[None] * green(cq)[:, None]
    return eps * (bp @ (Hq2 * P).mean(axis=0) + bq @ (Hp2 * Q).mean(axis=0))


def test_sigma_matches_fourier_oracle():
    rep = av.stability_report(av.stability_setup(SIGMA_EXAMPLE), 0.1)
    assert rep.sigma == pytest.approx(_fourier_sigma(SIGMA_EXAMPLE, 0.1), abs=1e-8)
    naive = dict(SIGMA_EXAMPLE, a1=0.0, a_m1=0.0)
    assert rep.sigma_naive == pytest.approx(_fourier_sigma(naive, 0.1), abs=1e-8)


def test_sigma_grid_insensitive():
    red = av.stability_setup(SIGMA_EXAMPLE)
    vals = [av.stability_report(red, 0.1, QuadratureRule(n)).sigma for n in (512, 1024, 2048)]
    assert max(vals) - min(vals) <= 1e-6


def test_constant_data_sigma_equals_naive():
    data = dict(SIGMA_EXAMPLE, a1=0.0, a_m1=0.0)
    rep = av.stability_report(av.stability_setup(data), 0.1)
    assert rep.sigma == pytest.approx(rep.sigma_naive, abs=1e-14)  # equal up to rounding of the grid mean
    assert rep.verdict == rep.verdict_naive


def test_report_serialises():
    rep = av.stability_report(av.stability_setup(SIGMA_EXAMPLE), 0.1, inputs={"a0": 6.0})
    d = json.loads(rep.to_json())
    assert set(d) >= {"sigma", "sigma_naive", "verdict", "verdict_naive", "grid", "inputs"}
    assert d["verdict"] == ("stable" if d["sigma"] < 0 else "unstable")


def test_autonomous_poly_gradient():
    exps = ((1, 0), (1, 1), (0, 2))
    p = av.AutonomousPoly(exps, np.array([[1.0, 0.0], [2.0, -1.0], [0.0, 3.0]]))
    X = np.array([0.4, 1.3])
    J = p.dX(X)
    h = 1e-6
    for a in range(2):
        e = np.zeros(2)
        e[a] = h
        assert np.allclose(J[:, a], (p(X + e) - p(X - e)) / (2 * h), atol=1e-8)
    assert np.allclose(p(X), vandermonde(X, exps) @ p.coef)
