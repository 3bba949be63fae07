"""Averaging of the reduced slow flow over the fast phase.

``F~0(X) = <F(X, 0, .)>`` and
``F~1(X) = <dF/dZ(X, 0, .) h1(X, .)> - (1/2T) int_0^T int_0^theta [F0(s), F0(theta)] ds dtheta``
with ``[a, b] = a' b - b' a``. Averages are taken with composite Simpson;
the double integral is cross-checked by a closed form on Fourier modes.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np
from scipy.integrate import cumulative_simpson

from .manifold import ManifoldExpansion, PolyPeriodic, _exps, compute_h1, fit_monomials, vandermonde
from .model import LVParams, SpeciesBranch, EquilibriumBranch, ModelError, projections
from .periodic import TWO_PI, PeriodicMatrixFn, QuadratureRule, simpson_integrate
from .reduction import Reduction, ReducedVectorFields, reduce_model, reduce_synthetic


@dataclass(frozen=True)
class AutonomousPoly:
    """``u(X) = sum_k c_k X^{e_k}`` with constant vector coefficients."""

    exps: tuple
    coef: np.ndarray  # (n_mono, 2)

    def __call__(self, X):
        return vandermonde(X, self.exps) @ self.coef

    def dX(self, X):
        X = np.asarray(X, dtype=float)
        e = np.asarray(self.exps)
        cols = []
        for a in range(2):
            ea = e.copy()
            fac = ea[:, a].astype(float)
            ea[:, a] = np.maximum(ea[:, a] - 1, 0)
            cols.append((np.prod(X[..., None, :] ** ea, axis=-1) * fac) @ self.coef)
        return np.stack(cols, axis=-1)

    def term(self, exp):
        return self.coef[self.exps.index(tuple(exp))]

    @classmethod
    def zero(cls):
        return cls(((0, 0),), np.zeros((1, 2)))


@dataclass(frozen=True)
class AveragedField:
    F0: AutonomousPoly
    F1: AutonomousPoly
    order: int = 1

    def __call__(self, X, eps):
        out = self.F0(X)
        if self.order >= 1:
            out = out + eps * self.F1(X)
        return out

    def with_order(self, order):
        return AveragedField(self.F0, self.F1, order)


def _grid(rule: QuadratureRule):
    return np.linspace(0.0, TWO_PI, rule.panels + 1)


def _mean(values, rule):
    """Simpson period-average along axis 0 of samples on ``_grid(rule)``."""
    return simpson_integrate(lambda _: values, 0.0, TWO_PI, rule) / TWO_PI


def average_F0(fields: ReducedVectorFields, rule: QuadratureRule | None = None) -> AutonomousPoly:
    rule = rule or QuadratureRule(1024)
    exps = _exps(2)
    Xs = np.array(list(product(np.arange(3.0), np.arange(3.0))))
    theta = _grid(rule)
    Z = np.zeros((Xs.shape[0], 2 * fields.m))
    vals = fields.F(Xs[None], Z[None], theta[:, None])
    return AutonomousPoly(tuple(exps), fit_monomials(_mean(vals, rule), Xs, exps))


def _bracket_data(fields, X, theta):
    Z = np.zeros(np.shape(X)[:-1] + (2 * fields.m,))
    F0 = fields.F(X, Z, theta)
    JX, JZ, _, _ = fields.jacobians(X, Z, theta)
    return F0, JX, JZ


def bracket(fields, X, s, theta):
    """``[F0(X, s), F0(X, theta)]`` with analytic Jacobians."""
    Fs, Js, _ = _bracket_data(fields, X, s)
    Ft, Jt, _ = _bracket_data(fields, X, theta)
    return np.einsum("...ij,...j->...i", Js, Ft) - np.einsum("...ij,...j->...i", Jt, Fs)


def bracket_double_integral(F0, J, rule: QuadratureRule):
    """``int_0^T int_0^theta (J(s) F0(theta) - J(theta) F0(s)) ds dtheta`` by iterated Simpson.

    ``F0`` is ``(M+1, ..., 2)`` and ``J`` is ``(M+1, ..., 2, 2)`` on the uniform grid.
    """
    theta = _grid(rule)
    S = cumulative_simpson(F0, x=theta, axis=0, initial=0.0)
    JS = cumulative_simpson(J, x=theta, axis=0, initial=0.0)
    integrand = np.einsum("t...ij,t...j->t...i", JS, F0) - np.einsum("t...ij,t...j->t...i", J, S)
    return simpson_integrate(lambda _: integrand, 0.0, TWO_PI, rule)


def bracket_double_integral_fourier(F0, J, harmonics=8):
    """Same double integral from truncated Fourier expansions (samples on ``[0, T)``).

    With ``u(s) = sum_j u_j e^{ijs}`` and ``v(theta) = sum_k v_k e^{ik theta}``,
    ``int_0^T v(theta) int_0^theta u(s) ds dtheta`` is
    ``u_0 (v_0 T^2/2 + sum_{k!=0} v_k T/(ik)) + sum_{j!=0} (u_j/(ij)) T (v_{-j} - v_0)``.
    """
    M = F0.shape[0]
    cF = np.fft.fft(F0, axis=0) / M
    cJ = np.fft.fft(J, axis=0) / M
    ks = np.fft.fftfreq(M, d=1.0 / M).astype(int)
    keep = np.abs(ks) <= harmonics
    T = TWO_PI

    def D(cu, cv, contract):
        # cu, cv indexed by mode along axis 0; contract(a, b) forms the product
        idx = {k: i for i, k in enumerate(ks)}
        u0, v0 = cu[idx[0]], cv[idx[0]]
        total = contract(u0, v0) * (T * T / 2.0)
        for k in ks[keep]:
            if k == 0:
                continue
            total = total + contract(u0, cv[idx[k]]) * (T / (1j * k))
            total = total + contract(cu[idx[k]], cv[idx[-k]] - v0) * (T / (1j * k))
        return total

    def mat_vec(a, b):
        return np.einsum("...ij,...j->...i", a, b)

    first = D(cJ, cF, mat_vec)                      # int J(s) ds, weighted by F0(theta)
    second = D(cF, cJ, lambda a, b: mat_vec(b, a))  # int F0(s) ds, weighted by J(theta)
    return np.real(first - second)


def average_F1(fields: ReducedVectorFields, h1: PolyPeriodic, rule: QuadratureRule | None = None,
               method="simpson", harmonics=8) -> AutonomousPoly:
    rule = rule or QuadratureRule(1024)
    exps = _exps(3)
    Xs = np.array(list(product(np.arange(4.0), np.arange(4.0))))
    theta = _grid(rule)
    F0, JX, JZ = _bracket_data(fields, Xs[None], theta[:, None])
    corr = np.einsum("tbij,tbj->tbi", JZ, h1(Xs[None], theta[:, None]))
    if method == "simpson":
        D = bracket_double_integral(F0, JX, rule)
    elif method == "fourier":
        D = bracket_double_integral_fourier(F0[:-1], JX[:-1], harmonics)
    else:
        raise ValueError(f"unknown method {method!r}")
    vals = _mean(corr, rule) - D / (2.0 * TWO_PI)
    return AutonomousPoly(tuple(exps), fit_monomials(vals, Xs, exps))


def averaged_field(fields, h1, rule=None, order=1) -> AveragedField:
    return AveragedField(average_F0(fields, rule), average_F1(fields, h1, rule), order)


# ---------------------------------------------------------------------------
# averaged Lotka-Volterra coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AveragedLVCoefficients:
    """Sitewise averaged integrals (length-N vectors) plus the LV rates they multiply.

    ``P = p_eq + h0_p`` lifted to sites; ``H_p1``, ``H_p2`` are the lifted
    coefficient functions in ``h1_p = H_p1 x_p - H_p2 x_p x_q``.
    """

    params: LVParams
    alpha_p0: np.ndarray
    alpha_p1: np.ndarray
    alpha_q0: np.ndarray
    alpha_q1: np.ndarray
    beta_p: tuple  # beta_p0 .. beta_p4
    beta_q: tuple

    def order0_poly(self):
        pr = self.params
        exps = tuple(_exps(2))
        c = np.zeros((len(exps), 2))
        c[exps.index((1, 0)), 0] = pr.a_p @ self.alpha_p0
        c[exps.index((1, 1)), 0] = -(pr.b_p @ self.alpha_p1)
        c[exps.index((0, 1)), 1] = -(pr.a_q @ self.alpha_q0)
        c[exps.index((1, 1)), 1] = pr.b_q @ self.alpha_q1
        return AutonomousPoly(exps, c)

    def correction_poly(self):
        """``<dF/dZ h1>`` assembled from the beta integrals (bracket excluded)."""
        pr = self.params
        bp, bq = self.beta_p, self.beta_q
        exps = tuple(_exps(3))
        c = np.zeros((len(exps), 2))
        i = exps.index
        # prey total: a_p p - b_p p q with p = x_p P + eps (H_p1 x_p - H_p2 x_p x_q)
        c[i((1, 0)), 0] = pr.a_p @ bp[0]
        c[i((1, 1)), 0] = -(pr.b_p @ bp[1] + pr.a_p @ bp[2])
        c[i((1, 2)), 0] = pr.b_p @ bp[3]
        c[i((2, 1)), 0] = pr.b_p @ bp[4]
        # predator total: -a_q q + b_q p q
        c[i((0, 1)), 1] = -(pr.a_q @ bq[0])
        c[i((1, 1)), 1] = pr.b_q @ bq[1] + pr.a_q @ bq[2]
        c[i((2, 1)), 1] = -(pr.b_q @ bq[3])
        c[i((1, 2)), 1] = -(pr.b_q @ bq[4])
        return AutonomousPoly(exps, c)


def averaged_lv_coefficients(reduction: Reduction, h1: PolyPeriodic,
                             rule: QuadratureRule | None = None) -> AveragedLVCoefficients:
    rule = rule or QuadratureRule(1024)
    fields = reduction.fields
    m = fields.m
    _, J2 = projections(fields.n_sites)
    theta = _grid(rule)
    P = fields.P(theta)
    Q = fields.Q(theta)
    lift = lambda v: v @ J2.T  # noqa: E731
    Hp1 = lift(h1.coefficient((1, 0))(theta)[:, :m])
    Hp2 = -lift(h1.coefficient((1, 1))(theta)[:, :m])
    Hq1 = lift(h1.coefficient((0, 1))(theta)[:, m:])
    Hq2 = -lift(h1.coefficient((1, 1))(theta)[:, m:])
    avg = lambda v: _mean(v, rule)  # noqa: E731
    beta_p = (avg(Hp1), avg(Hp1 * Q) + avg(Hq1 * P), avg(Hp2), avg(Hp2 * Q), avg(Hq2 * P))
    beta_q = (avg(Hq1), avg(Hq1 * P) + avg(Hp1 * Q), avg(Hq2), avg(Hq2 * P), avg(Hp2 * Q))
    return AveragedLVCoefficients(reduction.params, avg(P), avg(P * Q), avg(Q), avg(P * Q), beta_p, beta_q)


# ---------------------------------------------------------------------------
# stability indicator
# ---------------------------------------------------------------------------

@dataclass
class StabilityReport:
    sigma: float
    sigma_naive: float | None
    verdict: str
    verdict_naive: str | None = None
    eps: float = 0.0
    grid: int = 0
    inputs: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, default=float)


def _verdict(s):
    return "stable" if s < 0 else "unstable"


def sigma_value(coeffs: AveragedLVCoefficients, eps):
    """``eps (sum b_p <h_q2 P> + sum b_q <h_p2 Q>)`` for two sites."""
    if coeffs.params.n_sites != 2:
        raise ModelError("the stability criterion is stated for two sites")
    pr = coeffs.params
    return float(eps * (pr.b_p @ coeffs.beta_p[4] + pr.b_q @ coeffs.beta_q[4]))


def sigma_indicator(coeffs: AveragedLVCoefficients, eps) -> StabilityReport:
    s = sigma_value(coeffs, eps)
    return StabilityReport(s, None, _verdict(s), eps=float(eps))


def naive_reduction(reduction: Reduction, n_nodes=1024) -> Reduction:
    """Replace every periodic datum by its period mean, then reduce again."""
    theta = np.arange(n_nodes) * (TWO_PI / n_nodes)

    def const(fn, dim):
        mean = fn.eval(theta).mean(axis=0)
        return PeriodicMatrixFn.constant(mean)

    Kp = const(reduction.Kt_p, reduction.Kt_p.dimension)
    Kq = const(reduction.Kt_q, reduction.Kt_q.dimension)
    branch = EquilibriumBranch(reduction.branch.p.averaged(n_nodes), reduction.branch.q.averaged(n_nodes))
    return reduce_synthetic(reduction.params, Kp, Kq, branch, n_nodes)


def stability_report(reduction: Reduction, eps, rule: QuadratureRule | None = None,
                     naive: Reduction | None = None, inputs=None) -> StabilityReport:
    rule = rule or QuadratureRule(1024)
    h1 = compute_h1(reduction.fields)
    s = sigma_value(averaged_lv_coefficients(reduction, h1, rule), eps)
    naive = naive or naive_reduction(reduction)
    s0 = sigma_value(averaged_lv_coefficients(naive, compute_h1(naive.fields), rule), eps)
    return StabilityReport(s, s0, _verdict(s), _verdict(s0), float(eps), rule.panels, dict(inputs or {}))


def stability_setup(preset: dict, n_nodes=1024) -> Reduction:
    """Synthetic two-site setup: projected transport constants and prescribed equilibria.

    ``p_eq = (1 - a, a)`` with ``a = a0 + a1 cos + a_m1 sin`` and ``q_eq = (1 - b, b)``.
    These equilibria need not be positive; they are used as given.
    """
    a0, a1, am1, b = (float(preset[k]) for k in ("a0", "a1", "a_m1", "b"))
    params = LVParams(preset["a_p"], preset["b_p"], preset["a_q"], preset["b_q"])
    k = float(preset.get("projected_transport", -1.0))
    kq = float(preset.get("projected_transport_q", k))

    def a(t):
        return a0 + a1 * np.cos(t) + am1 * np.sin(t)

    def da(t):
        return -a1 * np.sin(t) + am1 * np.cos(t)

    def vec(x):
        return np.stack([1.0 - x, x], axis=-1)

    p = SpeciesBranch.prescribed(lambda t: vec(a(np.asarray(t, float))),
                                 lambda t: np.stack([-da(np.asarray(t, float)), da(np.asarray(t, float))], axis=-1), 2)
    q = SpeciesBranch.prescribed(lambda t: vec(np.full(np.shape(t), b)),
                                 lambda t: np.zeros(np.shape(t) + (2,)), 2)
    Kp = PeriodicMatrixFn.constant(np.array([[k]]))
    Kq = PeriodicMatrixFn.constant(np.array([[kq]]))
    return reduce_synthetic(params, Kp, Kq, EquilibriumBranch(p, q), n_nodes)
