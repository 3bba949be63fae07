"""Time-periodic center manifold ``Z = h_eps(X, theta)`` of the reduced system.

The expansion ``h_eps = eps h1 + eps^2 h2 + ...`` has a zero leading term and
its coefficients solve periodic linear problems::

    d h1/dtheta = B h1 + G(X, 0, theta)
    d h2/dtheta = B h2 + dG/dZ(X, 0, theta) h1 - dh1/dX F(X, 0, theta)

For Lotka-Volterra interactions both right-hand sides are polynomial in
``X``, so each coefficient is stored as periodic functions multiplying
monomials ``x_p^i x_q^j``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .periodic import TWO_PI, FourierSeries, ResolventCache, periodic_green_solve
from .reduction import ReducedVectorFields

LOGGER = logging.getLogger(__name__)

EXACTNESS_TOL = 1e-9


class PolynomialFitError(RuntimeError):
    """Samples are not reproduced by the assumed monomial basis."""


class ContractionError(RuntimeError):
    """Successive fixed-point iterates stopped contracting."""


def _exps(degree):
    """Exponents ``(i, j)`` of ``x_p^i x_q^j`` with ``i + j <= degree``, graded."""
    out = []
    for d in range(degree + 1):
        for i in range(d, -1, -1):
            out.append((i, d - i))
    return out


def vandermonde(X, exps):
    X = np.asarray(X, dtype=float)
    e = np.asarray(exps)
    return np.prod(X[..., None, :] ** e, axis=-1)


def fit_monomials(values, X, exps, tol=EXACTNESS_TOL):
    """Coefficients ``c`` with ``values[..., i, :] = sum_k V[i, k] c[..., k, :]``.

    ``values`` has shape ``(..., n_points, d)``. Raises if the fit leaves a
    relative residual above ``tol``.
    """
    V = vandermonde(X, exps)
    pinv = np.linalg.pinv(V)
    coef = np.einsum("kp,...pd->...kd", pinv, values)
    resid = np.einsum("pk,...kd->...pd", V, coef) - values
    scale = max(1.0, float(np.abs(values).max()))
    err = float(np.abs(resid).max()) / scale
    if err > tol:
        raise PolynomialFitError(f"monomial fit residual {err:.3g} exceeds {tol:.1g}")
    return coef


@dataclass(frozen=True)
class PolyPeriodic:
    """``u(X, theta) = sum_k c_k(theta) X^{e_k}`` with periodic vector coefficients."""

    exps: tuple
    coef: FourierSeries  # value shape (n_mono, d)

    @classmethod
    def from_samples(cls, exps, samples):
        return cls(tuple(exps), FourierSeries(samples))

    @property
    def dimension(self):
        return self.coef.value_shape[1]

    def __call__(self, X, theta):
        c = self.coef(theta)
        V = vandermonde(X, self.exps)
        return np.einsum("...k,...kd->...d", V, c)

    def dX(self, X, theta):
        """Jacobian ``(..., d, 2)`` with respect to ``X``."""
        X = np.asarray(X, dtype=float)
        c = self.coef(theta)
        e = np.asarray(self.exps)
        cols = []
        for a in range(2):
            ea = e.copy()
            fac = ea[:, a].astype(float)
            ea[:, a] = np.maximum(ea[:, a] - 1, 0)
            V = np.prod(X[..., None, :] ** ea, axis=-1) * fac
            cols.append(np.einsum("...k,...kd->...d", V, c))
        return np.stack(cols, axis=-1)

    def dtheta(self, X, theta):
        c = self.coef.derivative()(theta)
        return np.einsum("...k,...kd->...d", vandermonde(X, self.exps), c)

    def coefficient(self, exp):
        """Periodic coefficient (a callable of theta) of one monomial."""
        k = self.exps.index(tuple(exp))
        return lambda theta: self.coef(theta)[..., k, :]

    def max_abs_coefficient(self, exp, n=256):
        theta = np.arange(n) * (TWO_PI / n)
        return float(np.abs(self.coefficient(exp)(theta)).max())

    def support(self, tol=1e-12):
        """Monomials whose coefficient is not identically zero."""
        theta = self.coef.grid
        c = np.abs(self.coef(theta)).max(axis=(0, 2))
        scale = max(c.max(), 1e-300)
        return [e for e, v in zip(self.exps, c) if v > tol * scale]

    @classmethod
    def zero(cls, d, exps=((0, 0),)):
        return cls(tuple(exps), FourierSeries(np.zeros((4, len(exps), d))))


def _green_poly(cache: ResolventCache, exps, forcing_values):
    """Periodic solve for every monomial coefficient; forcing ``(2n+1, n_mono, d)``."""
    f = np.transpose(forcing_values, (0, 2, 1))
    u = periodic_green_solve(cache, lambda th: f)
    samples = np.transpose(u(u.grid), (0, 2, 1))
    return PolyPeriodic.from_samples(exps, samples)


def _sample_points(degree):
    g = np.arange(degree + 1, dtype=float)
    return np.array(list(product(g, g)))


def _fine_grid(cache):
    return np.arange(2 * cache.n_nodes + 1) * (0.5 * cache.grid_step)


def compute_h1(fields: ReducedVectorFields, cache: ResolventCache | None = None) -> PolyPeriodic:
    """First manifold coefficient, periodic in theta and quadratic in ``X``."""
    cache = cache or fields.cache
    exps = _exps(2)
    Xs = _sample_points(2)
    theta = _fine_grid(cache)
    Zs = np.zeros((Xs.shape[0], 2 * fields.m))
    rhs = fields.G(Xs[None], Zs[None], theta[:, None])
    coef = fit_monomials(rhs, Xs, exps)
    return _green_poly(cache, exps, coef)


def h2_forcing(fields: ReducedVectorFields, h1: PolyPeriodic, X, theta):
    Z0 = np.zeros(np.shape(X)[:-1] + (2 * fields.m,))
    F0 = fields.F(X, Z0, theta)
    _, _, _, dGdZ = fields.jacobians(X, Z0, theta)
    h = h1(X, theta)
    return (np.einsum("...ij,...j->...i", dGdZ, h)
            - np.einsum("...ij,...j->...i", h1.dX(X, theta), F0))


def compute_h2(fields: ReducedVectorFields, h1: PolyPeriodic, cache: ResolventCache | None = None) -> PolyPeriodic:
    """Second manifold coefficient, cubic in ``X``."""
    cache = cache or fields.cache
    exps = _exps(3)
    Xs = _sample_points(3)
    theta = _fine_grid(cache)
    rhs = h2_forcing(fields, h1, Xs[None], theta[:, None])
    coef = fit_monomials(rhs, Xs, exps)
    return _green_poly(cache, exps, coef)


def green_residual(fields: ReducedVectorFields, h: PolyPeriodic, forcing, X, n_theta=256):
    """Max over a theta grid of ``|dh/dtheta - B h - forcing(X, theta)|``."""
    theta = np.arange(n_theta) * (TWO_PI / n_theta)
    X = np.asarray(X, dtype=float)
    th = theta[:, None]
    Xb = np.broadcast_to(X, (n_theta,) + X.shape)
    val = h(Xb, th)
    dval = h.dtheta(Xb, th)
    Bv = np.einsum("tij,tbj->tbi", fields.B.eval(theta), val)
    return float(np.abs(dval - Bv - forcing(Xb, th)).max())


@dataclass(frozen=True)
class ManifoldExpansion:
    """Truncated expansion ``h~ = eps h1 (+ eps^2 h2)``; the zeroth term is identically 0."""

    order: int
    h1: PolyPeriodic
    h2: PolyPeriodic | None = None

    def __post_init__(self):
        if self.order not in (0, 1, 2):
            raise ValueError("order must be 0, 1 or 2")
        if self.order == 2 and self.h2 is None:
            raise ValueError("order 2 needs h2")

    @staticmethod
    def h0(X, theta, m2):
        return np.zeros(np.shape(X)[:-1] + (m2,))

    @property
    def dimension(self):
        return self.h1.dimension

    def truncated(self, order):
        return ManifoldExpansion(order, self.h1, self.h2)

    def __call__(self, X, theta, eps):
        X = np.asarray(X, dtype=float)
        out = np.zeros(np.broadcast_shapes(X.shape[:-1], np.shape(theta)) + (self.dimension,))
        if self.order >= 1:
            out = out + eps * self.h1(X, theta)
        if self.order >= 2:
            out = out + eps ** 2 * self.h2(X, theta)
        return out

    def dX(self, X, theta, eps):
        X = np.asarray(X, dtype=float)
        out = np.zeros(np.broadcast_shapes(X.shape[:-1], np.shape(theta)) + (self.dimension, 2))
        if self.order >= 1:
            out = out + eps * self.h1.dX(X, theta)
        if self.order >= 2:
            out = out + eps ** 2 * self.h2.dX(X, theta)
        return out

    def dtheta(self, X, theta, eps):
        X = np.asarray(X, dtype=float)
        out = np.zeros(np.broadcast_shapes(X.shape[:-1], np.shape(theta)) + (self.dimension,))
        if self.order >= 1:
            out = out + eps * self.h1.dtheta(X, theta)
        if self.order >= 2:
            out = out + eps ** 2 * self.h2.dtheta(X, theta)
        return out


def manifold_expansion(fields: ReducedVectorFields, order=2) -> ManifoldExpansion:
    h1 = compute_h1(fields)
    h2 = compute_h2(fields, h1) if order >= 2 else None
    return ManifoldExpansion(order, h1, h2)


def structural_coefficients(h1: PolyPeriodic, m):
    """Split ``h1`` into ``h_p1 x_p - h_p2 x_p x_q`` and ``h_q1 x_q - h_q2 x_p x_q``.

    Returns a dict of callables of theta, each ``(..., m)``.
    """
    def block(exp, lo, sign=1.0):
        c = h1.coefficient(exp)
        return lambda th: sign * c(th)[..., lo:lo + m]

    return {
        "h_p1": block((1, 0), 0),
        "h_p2": block((1, 1), 0, -1.0),
        "h_q1": block((0, 1), m),
        "h_q2": block((1, 1), m, -1.0),
    }


def pde_residual(h: ManifoldExpansion, fields: ReducedVectorFields, eps, X, theta):
    """Norm of the invariance defect of ``Z = h~(X, theta)``.

    ``delta = (1/eps)(dh/dtheta - B h) - G(X, h, theta) + dh/dX F(X, h, theta)``.
    """
    X = np.asarray(X, dtype=float)
    val = h(X, theta, eps)
    F, G = fields.FG(X, val, theta)
    Bh = np.einsum("...ij,...j->...i", fields.B.eval(theta), val)
    delta = (h.dtheta(X, theta, eps) - Bh) / eps - G + np.einsum("...ij,...j->...i", h.dX(X, theta, eps), F)
    return np.linalg.norm(delta, axis=-1)


def export_tables(h1: PolyPeriodic, h2: PolyPeriodic | None, m, path, n_theta=256):
    """CSV of the structural coefficient functions sampled on a theta grid."""
    theta = np.arange(n_theta + 1) * (TWO_PI / n_theta)
    cols = {"theta": theta[:, None]}
    s1 = structural_coefficients(h1, m)
    for k in ("h_p1", "h_q1", "h_p2", "h_q2"):
        cols[k] = s1[k](theta)
    if h2 is not None:
        for e in h2.support():
            cols["h2_" + "".join(f"{'pq'[a]}{n}" for a, n in enumerate(e) if n)] = h2.coefficient(e)(theta)
    header, data = [], []
    for name, arr in cols.items():
        if arr.shape[1] == 1:
            header.append(name)
        else:
            header.extend(f"{name}_{i + 1}" for i in range(arr.shape[1]))
        data.append(arr)
    table = np.hstack(data)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table:
            w.writerow(["%.17g" % v for v in row])
    return path


# ---------------------------------------------------------------------------
# fixed-point oracle
# ---------------------------------------------------------------------------

@dataclass
class OracleResult:
    values: np.ndarray  # (k, 2m) estimates of h_eps at the query points
    iterate_distances: list = field(default_factory=list)
    contraction_factors: list = field(default_factory=list)
    horizon: float = 0.0
    iterations: int = 0


def _chebyshev(lo, hi, n):
    k = np.arange(n)
    x = np.cos(np.pi * (2 * k + 1) / (2 * n))
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * x


def fixed_point_oracle(fields: ReducedVectorFields, eps, X0, theta0, truncation=None,
                       iterations=20, tol=1e-12, box=None, n_cheb=6, degree=5,
                       n_theta=16, steps_per_period=128, mu=None) -> OracleResult:
    """Iterate the integral operator whose fixed point is the center manifold.

    ``(T h)(X0, theta0) = eps int_{-L}^0 R(theta0, theta0+u) b_h(u) du`` with
    ``b_h`` the forcing ``G`` along the backward slow path driven by ``h``. The
    iterate ``h`` lives on a Chebyshev tensor grid in ``X`` times a uniform
    phase grid; the query points ride along in the same batch. The integral
    is evaluated by integrating ``dZ/du = B Z + eps b`` from ``Z(-L) = 0``,
    which is independent of the Green-function route used by :func:`compute_h1`.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float)) % TWO_PI
    d = 2 * fields.m
    mu = mu or fields.cache.decay_rate_estimate
    L = truncation if truncation is not None else max(np.log(1e12) / mu, TWO_PI)
    du = TWO_PI / steps_per_period
    n_steps = int(np.ceil(L / du))
    L = n_steps * du
    if box is None:
        lo = np.minimum(X0.min(axis=0), 0.0)
        hi = X0.max(axis=0) * 1.1 + 0.1
    else:
        lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    nodes = [_chebyshev(lo[a], hi[a], n_cheb) for a in range(2)]
    Xc = np.array(list(product(nodes[0], nodes[1])))
    exps = _exps(degree)
    nc = Xc.shape[0]
    # phases visited are theta_b - k du/4; tabulate data on quarter-step lattices
    n_lat = 4 * steps_per_period
    q = TWO_PI / n_lat
    if n_lat % n_theta:
        raise ValueError("n_theta must divide 4 * steps_per_period")
    thc = np.arange(n_theta) * (TWO_PI / n_theta)
    offsets = np.concatenate([[0.0], theta0 % q])
    lattice = offsets[:, None] + np.arange(n_lat) * q  # (n_off, n_lat)
    Xb = np.vstack([np.tile(Xc, (n_theta, 1)), X0])
    off_idx = np.concatenate([np.zeros(nc * n_theta, int), 1 + np.arange(X0.shape[0])])
    base_idx = np.concatenate([np.repeat(np.arange(n_theta) * (n_lat // n_theta), nc),
                               np.rint((theta0 - theta0 % q) / q).astype(int) % n_lat])
    nb = Xb.shape[0]
    P_tab = fields.P(lattice)
    Q_tab = fields.Q(lattice)
    B_tab = fields.B.eval(lattice)

    def at(k):
        """Gather indices for the phase ``theta_b - k q``."""
        return off_idx, (base_idx - k) % n_lat

    coef = np.zeros((n_theta, len(exps), d))
    result = OracleResult(values=np.zeros((X0.shape[0], d)), horizon=L)
    prev = np.zeros((nb, d))  # the starting guess h = 0
    n_half = 2 * n_steps
    for it in range(iterations):
        c_tab = FourierSeries(coef)(lattice)  # (n_off, n_lat, n_mono, d)

        def h_at(X, k):
            idx = at(k)
            return np.einsum("bk,bkd->bd", vandermonde(X, exps), c_tab[idx])

        def data(k):
            idx = at(k)
            return P_tab[idx], Q_tab[idx]

        def rhs_x(X, k):
            return eps * fields.FG(X, h_at(X, k), None, data(k))[0]

        # backward slow path on the half grid: u_j = -j du/2 is lattice index 2j
        Xs = np.empty((n_half + 1, nb, 2))
        Xs[0] = Xb
        X = Xb.copy()
        hs = -0.5 * du
        for j in range(n_half):
            k = 2 * j
            k1 = rhs_x(X, k)
            k2 = rhs_x(X + 0.5 * hs * k1, k + 1)
            k3 = rhs_x(X + 0.5 * hs * k2, k + 1)
            k4 = rhs_x(X + hs * k3, k + 2)
            X = X + (hs / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            Xs[j + 1] = X
        if not np.all(np.isfinite(Xs)):
            raise ContractionError("backward slow path diverged")
        b = np.empty((n_half + 1, nb, d))
        for j in range(n_half + 1):
            b[j] = eps * fields.FG(Xs[j], h_at(Xs[j], 2 * j), None, data(2 * j))[1]
        # Z forward from u = -L (half index n_half) to u = 0
        Z = np.zeros((nb, d))
        for s in range(n_steps):
            j0 = n_half - 2 * s
            B0, Bm, B1 = B_tab[at(2 * j0)], B_tab[at(2 * j0 - 2)], B_tab[at(2 * j0 - 4)]
            f0, fm, f1 = b[j0], b[j0 - 1], b[j0 - 2]
            k1 = np.einsum("bij,bj->bi", B0, Z) + f0
            k2 = np.einsum("bij,bj->bi", Bm, Z + 0.5 * du * k1) + fm
            k3 = np.einsum("bij,bj->bi", Bm, Z + 0.5 * du * k2) + fm
            k4 = np.einsum("bij,bj->bi", B1, Z + du * k3) + f1
            Z = Z + (du / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        coef = fit_monomials(Z[:nc * n_theta].reshape(n_theta, nc, d), Xc, exps, tol=np.inf)
        result.values = Z[nc * n_theta:]
        result.iterations = it + 1
        dist = float(np.abs(Z - prev).max())
        result.iterate_distances.append(dist)
        if len(result.iterate_distances) >= 2 and result.iterate_distances[-2] > 0:
            result.contraction_factors.append(dist / result.iterate_distances[-2])
        if len(result.contraction_factors) >= 3 and all(c > 1 for c in result.contraction_factors[-3:]):
            raise ContractionError(f"iterates stopped contracting at iteration {it}")
        if dist <= tol * max(1e-300, float(np.abs(Z).max())):
            break
        prev = Z
    return result


# ---------------------------------------------------------------------------
# shadowing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShadowInit:
    t_star: float
    X_star: np.ndarray
    X0_eps: np.ndarray


def reduced_rhs(fields: ReducedVectorFields, h: ManifoldExpansion, eps, theta0):
    def rhs(t, X):
        th = theta0 + t / eps
        return fields.F(X, h(X, th, eps), th)
    return rhs


def shadow_initial_data(fields: ReducedVectorFields, h: ManifoldExpansion, eps, X_star, t_star,
                        theta0=0.0, steps_per_period=64, alpha=None) -> ShadowInit:
    """Altered initial data whose reduced trajectory hits ``X_star`` at ``t_star``."""
    from .integrators import rk4_path

    X_star = np.asarray(X_star, dtype=float)
    if t_star == 0:
        return ShadowInit(0.0, X_star, X_star.copy())
    n = max(1, int(np.ceil(t_star / (eps * TWO_PI / steps_per_period))))
    ts, Xs = rk4_path(reduced_rhs(fields, h, eps, theta0), X_star, t_star, 0.0, n)
    alpha = fields.domain_radius if alpha is None else alpha
    if np.any(np.linalg.norm(Xs, axis=-1) > alpha):
        raise ValueError("backward shadowing path leaves the domain ball")
    return ShadowInit(float(t_star), X_star, Xs[-1])
