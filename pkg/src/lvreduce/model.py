"""Prey-predator metapopulation model with fast periodic migration.

The full system on ``N`` sites reads::

    p' = (1/eps) K_p(t/eps) p + f(p, q)
    q' = (1/eps) K_q(t/eps) q + g(p, q)

with column-sum-free transport matrices built from transfer rates and a
sitewise Lotka-Volterra interaction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .periodic import TWO_PI, DEFAULT_NODES, FourierSeries, PeriodicMatrixFn

TOL_NULL = 1e-10


class ModelError(ValueError):
    """Model data violates a structural hypothesis."""


# ---------------------------------------------------------------------------
# transfer rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rate:
    """A T-periodic transfer rate ``theta -> sigma(theta)``."""

    fn: Callable[[np.ndarray], np.ndarray]
    dfn: Callable[[np.ndarray], np.ndarray]
    label: str = ""

    def __call__(self, theta):
        return self.fn(np.asarray(theta, dtype=float))

    def derivative(self, theta):
        return self.dfn(np.asarray(theta, dtype=float))


def parse_rate(expr) -> Rate:
    """Build a rate from a model-file expression.

    Accepted forms: ``"const c"``, ``"cos_offset a b"`` (``a cos + b``),
    ``"sin_offset a b"`` (``a sin + b``), a bare number, or a list of
    samples on a uniform grid of one period (trigonometric interpolation).
    """
    if isinstance(expr, (int, float)):
        expr = f"const {expr}"
    if isinstance(expr, (list, tuple)):
        series = FourierSeries(np.asarray(expr, dtype=float))
        d = series.derivative()
        return Rate(series, d, label="tabulated")
    parts = str(expr).split()
    kind, args = parts[0], [float(a) for a in parts[1:]]
    if kind == "const" and len(args) == 1:
        c = args[0]
        return Rate(lambda t: np.full(np.shape(t), c), lambda t: np.zeros(np.shape(t)), expr)
    if kind == "cos_offset" and len(args) == 2:
        a, b = args
        return Rate(lambda t: a * np.cos(t) + b, lambda t: -a * np.sin(t), expr)
    if kind == "sin_offset" and len(args) == 2:
        a, b = args
        return Rate(lambda t: a * np.sin(t) + b, lambda t: a * np.cos(t), expr)
    raise ModelError(f"cannot parse rate expression {expr!r}")


@dataclass(frozen=True)
class MigrationRates:
    """Off-diagonal transfer rates; ``sigma_p[i][j]`` moves preys from site j to i."""

    n_sites: int
    sigma_p: tuple
    sigma_q: tuple

    @classmethod
    def from_expressions(cls, sigma_p, sigma_q):
        n = len(sigma_p)

        def build(table):
            if len(table) != n or any(len(row) != n for row in table):
                raise ModelError("rate tables must be N x N")
            return tuple(tuple(None if i == j or table[i][j] is None else parse_rate(table[i][j])
                               for j in range(n)) for i in range(n))

        return cls(n, build(sigma_p), build(sigma_q))


@dataclass(frozen=True)
class LVParams:
    """Sitewise Lotka-Volterra rates (all nonnegative)."""

    a_p: np.ndarray
    b_p: np.ndarray
    a_q: np.ndarray
    b_q: np.ndarray

    def __post_init__(self):
        for name in ("a_p", "b_p", "a_q", "b_q"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(v < 0):
                raise ModelError(f"{name} has negative entries")
            object.__setattr__(self, name, v)

    @property
    def n_sites(self):
        return self.a_p.size

    def scaled(self, factor):
        return LVParams(self.a_p * factor, self.b_p * factor, self.a_q * factor, self.b_q * factor)


def build_transport(rates: MigrationRates, samples=DEFAULT_NODES):
    """Transport matrices ``K_p``, ``K_q`` with zero column sums."""
    n = rates.n_sites
    check = np.arange(samples) * (TWO_PI / samples)

    def make(table):
        for i in range(n):
            for j in range(n):
                r = table[i][j]
                if r is not None and np.any(r(check) < 0):
                    raise ModelError(f"negative transfer rate at ({i}, {j})")

        def assemble(theta, deriv):
            theta = np.asarray(theta, dtype=float)
            K = np.zeros(theta.shape + (n, n))
            for i in range(n):
                for j in range(n):
                    r = table[i][j]
                    if r is not None:
                        K[..., i, j] = r.derivative(theta) if deriv else r(theta)
            idx = np.arange(n)
            K[..., idx, idx] = -K.sum(axis=-2)
            return K

        return PeriodicMatrixFn(n, lambda t: assemble(t, False), lambda t: assemble(t, True))

    return make(rates.sigma_p), make(rates.sigma_q)


def verify_spectrum(K: PeriodicMatrixFn, samples=DEFAULT_NODES, tol_null=TOL_NULL):
    """Check that 0 is a simple eigenvalue with the rest in the open left half-plane.

    Returns
    -------
    beta : float
        Half of the uniform spectral gap, ``Re(lambda) <= -2 beta``.
    """
    theta = np.arange(samples) * (K.period / samples)
    Ks = K.eval(theta)
    if np.any(np.abs(Ks.sum(axis=-2)) > tol_null):
        raise ModelError("transport matrix has nonzero column sums")
    ev = np.linalg.eigvals(Ks)
    order = np.argsort(np.abs(ev), axis=-1)
    ev = np.take_along_axis(ev, order, axis=-1)
    if np.any(np.abs(ev[:, 0]) > tol_null):
        raise ModelError("0 is not an eigenvalue at some phase")
    if K.dimension < 2:
        raise ModelError("need at least two sites")
    if np.any(np.abs(ev[:, 1]) <= 1e3 * tol_null):
        raise ModelError("eigenvalue 0 is not simple")
    top = np.max(np.real(ev[:, 1:]), axis=-1)
    if np.any(top >= 0):
        raise ModelError("a nonzero eigenvalue has nonnegative real part")
    return 0.5 * float(np.min(-top))


# ---------------------------------------------------------------------------
# equilibria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeciesBranch:
    """Sum-one kernel vector ``theta -> v(theta)`` of one transport matrix."""

    eval: Callable[[np.ndarray], np.ndarray]
    eval_derivative: Callable[[np.ndarray], np.ndarray]
    n_sites: int
    synthetic: bool = False

    def __call__(self, theta):
        return self.eval(theta)

    @classmethod
    def prescribed(cls, fn, dfn, n_sites):
        """A branch given in closed form; no positivity or kernel checks."""
        return cls(fn, dfn, n_sites, synthetic=True)

    def averaged(self, samples=DEFAULT_NODES):
        theta = np.arange(samples) * (TWO_PI / samples)
        mean = np.asarray(self.eval(theta)).mean(axis=0)
        return SpeciesBranch.prescribed(lambda t: np.broadcast_to(mean, np.shape(t) + mean.shape).copy(),
                                        lambda t: np.zeros(np.shape(t) + mean.shape), self.n_sites)


@dataclass(frozen=True)
class EquilibriumBranch:
    p: SpeciesBranch
    q: SpeciesBranch

    def p_eq(self, theta):
        return self.p.eval(theta)

    def q_eq(self, theta):
        return self.q.eval(theta)


def _kernel_solve(K):
    """Sum-one kernel vectors of batched matrices with ``1^T K = 0``."""
    n = K.shape[-1]
    ones = np.ones((n, n))
    A = K - ones
    rhs = -np.ones(K.shape[:-1])
    return np.linalg.solve(A, rhs[..., None])[..., 0], A


def equilibrium_branch(K: PeriodicMatrixFn, samples=DEFAULT_NODES, tol_null=TOL_NULL) -> SpeciesBranch:
    """Perron vector of ``K(theta)`` normalised to unit sum, with its phase derivative.

    The vector solves ``(K - 1 1^T) v = -1``, which is nonsingular when the
    kernel is one-dimensional; differentiating gives
    ``v' = -(K - 1 1^T)^{-1} K' v``.
    """
    verify_spectrum(K, samples, tol_null)

    def ev(theta):
        v, _ = _kernel_solve(K.eval(theta))
        return v

    def dev(theta):
        v, A = _kernel_solve(K.eval(theta))
        rhs = -(K.eval_derivative(theta) @ v[..., None])
        return np.linalg.solve(A, rhs)[..., 0]

    theta = np.arange(samples) * (K.period / samples)
    v = ev(theta)
    resid = np.abs((K.eval(theta) @ v[..., None])[..., 0]).max()
    if resid > tol_null:
        raise ModelError(f"kernel residual {resid:.3g} exceeds tolerance")
    if np.any(v <= 0):
        raise ModelError("equilibrium has nonpositive entries (Perron vector expected)")
    return SpeciesBranch(ev, dev, K.dimension)


# ---------------------------------------------------------------------------
# interactions and projections
# ---------------------------------------------------------------------------

def lv_rhs(params: LVParams, p, q):
    """Sitewise Lotka-Volterra terms ``(f, g)``; broadcasts over leading axes."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pq = p * q
    f = params.a_p * p - params.b_p * pq
    g = -params.a_q * q + params.b_q * pq
    return f, g


def lv_jacobian(params: LVParams, p, q):
    """Diagonals of ``df/dp, df/dq, dg/dp, dg/dq``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return (params.a_p - params.b_p * q, -params.b_p * p,
            params.b_q * q, -params.a_q + params.b_q * p)


def projections(n_sites):
    """``J1`` drops the last coordinate, ``J2`` restores it as minus the sum."""
    if n_sites < 2:
        raise ModelError("projections need at least two sites")
    m = n_sites - 1
    J1 = np.hstack([np.eye(m), np.zeros((m, 1))])
    J2 = np.vstack([np.eye(m), -np.ones((1, m))])
    return J1, J2


def projected_transport(K: PeriodicMatrixFn) -> PeriodicMatrixFn:
    J1, J2 = projections(K.dimension)
    return PeriodicMatrixFn.sandwich(J1, K, J2)


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FullModel:
    rates: MigrationRates
    params: LVParams
    K_p: PeriodicMatrixFn
    K_q: PeriodicMatrixFn
    eps: float
    spectral_gap_beta: float
    name: str = "model"

    @classmethod
    def build(cls, rates: MigrationRates, params: LVParams, eps, name="model"):
        if rates.n_sites != params.n_sites:
            raise ModelError("rate tables and LV parameters disagree on N")
        if not eps > 0:
            raise ModelError("eps must be positive")
        K_p, K_q = build_transport(rates)
        beta = min(verify_spectrum(K_p), verify_spectrum(K_q))
        return cls(rates, params, K_p, K_q, float(eps), beta, name)

    @property
    def n_sites(self):
        return self.rates.n_sites

    def with_eps(self, eps):
        return replace(self, eps=float(eps))

    def with_params(self, params):
        return replace(self, params=params)

    def branch(self) -> EquilibriumBranch:
        return EquilibriumBranch(equilibrium_branch(self.K_p), equilibrium_branch(self.K_q))

    def rhs(self, t, p, q):
        theta = t / self.eps
        f, g = lv_rhs(self.params, p, q)
        dp = (self.K_p.eval(theta) @ p) / self.eps + f
        dq = (self.K_q.eval(theta) @ q) / self.eps + g
        return dp, dq

    def without_transport(self):
        zero = [[None] * self.n_sites for _ in range(self.n_sites)]
        rates = MigrationRates.from_expressions(zero, zero)
        K_p, K_q = build_transport(rates)
        return replace(self, rates=rates, K_p=K_p, K_q=K_q, spectral_gap_beta=0.0)


# ---------------------------------------------------------------------------
# presets and model files
# ---------------------------------------------------------------------------

N2_EXAMPLE = {
    "name": "paper-n2",
    "n_sites": 2,
    "sigma_p": [[None, "sin_offset 1 2"], ["cos_offset 1 2", None]],
    "sigma_q": [[None, "cos_offset 1 2"], ["sin_offset 1 2", None]],
    "a_p": [0.4, 0.3],
    "b_p": [0.2, 0.1],
    "a_q": [0.1, 0.2],
    "b_q": [0.5, 0.3],
    "eps": 0.1,
    "p0": [0.1, 0.2],
    "q0": [0.3, 0.4],
}

# Synthetic stability setup: projected transport -1, prescribed equilibria.
SIGMA_EXAMPLE = {
    "name": "paper-sigma",
    "n_sites": 2,
    "projected_transport": -1.0,
    "a0": 6.0,
    "a1": 3.0,
    "a_m1": 2.5,
    "b": 0.06,
    "a_p": [0.4, 0.3],
    "b_p": [0.2, 0.1],
    "a_q": [0.1, 0.2],
    "b_q": [0.5, 0.3],
    "eps": 0.1,
}

PRESETS = {"paper-n2": N2_EXAMPLE, "paper-sigma": SIGMA_EXAMPLE}


def model_from_dict(data) -> FullModel:
    if "sigma_p" not in data:
        raise ModelError(f"model {data.get('name')!r} has no transfer rates")
    rates = MigrationRates.from_expressions(data["sigma_p"], data["sigma_q"])
    params = LVParams(data["a_p"], data["b_p"], data["a_q"], data["b_q"])
    if rates.n_sites != int(data.get("n_sites", rates.n_sites)):
        raise ModelError("n_sites does not match the rate tables")
    return FullModel.build(rates, params, data.get("eps", 0.1), data.get("name", "model"))


def load_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ModelError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


def load_model_file(path) -> dict:
    """Read a JSON model definition (same keys as the presets)."""
    with open(Path(path)) as fh:
        return json.load(fh)


def example_model(eps=None) -> FullModel:
    m = model_from_dict(N2_EXAMPLE)
    return m if eps is None else m.with_eps(eps)
