"""Periodic linear-algebra kernel.

Periodic matrix functions of the fast phase, the resolvent of the periodic
linear ODE ``u' = B(theta) u``, periodic Green solves and quadrature.

All phase-dependent data derived numerically (equilibria, stiff-term
removers, manifold coefficients) is stored as a :class:`FourierSeries`
sampled on a uniform grid, which gives spectrally accurate evaluation and
differentiation at arbitrary phases.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

LOGGER = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
DEFAULT_NODES = 1024
COND_LIMIT = 1e12


class SpectralHypothesisError(RuntimeError):
    """The monodromy of a periodic generator is not contracting."""


# ---------------------------------------------------------------------------
# periodic functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PeriodicMatrixFn:
    """T-periodic matrix valued function ``theta -> (dimension, dimension)``.

    ``eval`` and ``eval_derivative`` accept a scalar or an array of phases
    and return arrays of shape ``np.shape(theta) + (dimension, dimension)``.
    """

    dimension: int
    eval: Callable[[np.ndarray], np.ndarray]
    eval_derivative: Callable[[np.ndarray], np.ndarray]
    period: float = TWO_PI

    def __call__(self, theta):
        return self.eval(theta)

    @classmethod
    def constant(cls, matrix, period=TWO_PI):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        d = matrix.shape[0]

        def ev(theta):
            return np.broadcast_to(matrix, np.shape(theta) + (d, d)).copy()

        def dev(theta):
            return np.zeros(np.shape(theta) + (d, d))

        return cls(d, ev, dev, period)

    @classmethod
    def block_diagonal(cls, *blocks: "PeriodicMatrixFn"):
        dims = [b.dimension for b in blocks]
        d = sum(dims)
        offsets = np.cumsum([0] + dims)

        def assemble(theta, which):
            out = np.zeros(np.shape(theta) + (d, d))
            for blk, a, b in zip(blocks, offsets[:-1], offsets[1:]):
                out[..., a:b, a:b] = getattr(blk, which)(theta)
            return out

        return cls(d, lambda t: assemble(t, "eval"),
                   lambda t: assemble(t, "eval_derivative"), blocks[0].period)

    @classmethod
    def sandwich(cls, left, inner: "PeriodicMatrixFn", right):
        """``left @ inner(theta) @ right`` for constant ``left``/``right``."""
        left = np.asarray(left, dtype=float)
        right = np.asarray(right, dtype=float)
        return cls(left.shape[0],
                   lambda t: left @ inner.eval(t) @ right,
                   lambda t: left @ inner.eval_derivative(t) @ right,
                   inner.period)


class FourierSeries:
    """Trigonometric interpolant of samples on a uniform periodic grid.

    Parameters
    ----------
    samples : (M, ...) array_like
        Values at ``theta_k = k * period / M``. Trailing dimensions are
        carried through evaluation.
    period : float
        Period of the function.
    tol : float
        Trailing Fourier modes below ``tol * max|c|`` are dropped to make
        evaluation cheap; smooth data typically needs a few dozen modes.
    """

    def __init__(self, samples, period=TWO_PI, tol=1e-16):
        samples = np.asarray(samples, dtype=float)
        self.n_samples = samples.shape[0]
        self.value_shape = samples.shape[1:]
        self.period = float(period)
        coef = np.fft.rfft(samples, axis=0) / self.n_samples
        m = self.n_samples
        weights = np.ones(coef.shape[0])
        weights[1:] = 2.0
        if m % 2 == 0:
            # Nyquist mode appears once in the interpolant
            weights[-1] = 1.0
        coef = coef * weights.reshape((-1,) + (1,) * len(self.value_shape))
        mag = np.abs(coef).reshape(coef.shape[0], -1).max(axis=1)
        scale = mag.max() if mag.size else 0.0
        keep = np.nonzero(mag > tol * scale)[0]
        kmax = int(keep[-1]) + 1 if keep.size else 1
        self._coef = coef[:kmax]
        self._k = np.arange(kmax)

    @classmethod
    def from_function(cls, fn, n_samples=DEFAULT_NODES, period=TWO_PI, tol=1e-16):
        theta = np.arange(n_samples) * (period / n_samples)
        return cls(fn(theta), period=period, tol=tol)

    @property
    def n_modes(self):
        return self._k.size

    @property
    def grid(self):
        return np.arange(self.n_samples) * (self.period / self.n_samples)

    def mean(self):
        return np.real(self._coef[0])

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        omega = TWO_PI / self.period
        phase = np.exp(1j * omega * theta[..., None] * self._k)
        flat = self._coef.reshape(self._coef.shape[0], -1)
        out = np.real(phase @ flat)
        return out.reshape(theta.shape + self.value_shape)

    def derivative(self) -> "FourierSeries":
        omega = TWO_PI / self.period
        new = object.__new__(FourierSeries)
        new.n_samples = self.n_samples
        new.value_shape = self.value_shape
        new.period = self.period
        factor = (1j * omega * self._k).reshape((-1,) + (1,) * len(self.value_shape))
        new._coef = self._coef * factor
        new._k = self._k
        return new

    def harmonics(self, n):
        """Complex coefficients ``c_k`` with ``f = Re(sum c_k e^{ik w theta})``, ``k <= n``."""
        out = np.zeros((n + 1,) + self.value_shape, dtype=complex)
        k = min(n + 1, self._coef.shape[0])
        out[:k] = self._coef[:k]
        return out


def stack_series(series, period=TWO_PI, n_samples=None):
    """Resample several series onto one grid and stack their values."""
    n = n_samples or max(s.n_samples for s in series)
    theta = np.arange(n) * (period / n)
    vals = [s(theta).reshape(n, -1) for s in series]
    return FourierSeries(np.concatenate(vals, axis=1), period=period)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Composite Simpson rule with an even number of panels."""

    panels: int = 1024
    kind: str = "composite-simpson"

    def __post_init__(self):
        if self.panels <= 0 or self.panels % 2:
            raise ValueError(f"Simpson rule needs an even positive panel count, got {self.panels}")


def simpson_integrate(f, a, b, rule: QuadratureRule | None = None):
    """Integrate ``f`` over ``[a, b]`` with composite Simpson.

    ``f`` is evaluated once on the array of abscissae and may return
    vector values (abscissa axis first).
    """
    rule = rule or QuadratureRule()
    if b < a:
        raise ValueError("simpson_integrate expects b >= a")
    x = np.linspace(a, b, rule.panels + 1)
    y = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite integrand values")
    return integrate.simpson(y, x=x, axis=0)


# ---------------------------------------------------------------------------
# resolvent
# ---------------------------------------------------------------------------

def _rk4_linear(B0, Bm, B1, h):
    """One RK4 step of ``R' = B R`` from ``R = Id``; batched over leading axes."""
    d = B0.shape[-1]
    eye = np.eye(d)
    k1 = B0
    k2 = Bm @ (eye + 0.5 * h[..., None, None] * k1)
    k3 = Bm @ (eye + 0.5 * h[..., None, None] * k2)
    k4 = B1 @ (eye + h[..., None, None] * k3)
    return eye + (h[..., None, None] / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _chain(mats):
    out = mats[0]
    for m in mats[1:]:
        out = m @ out
    return out


class ResolventCache:
    """Resolvent ``R(theta, s)`` of ``du/dtheta = B(theta) u``.

    Step propagators between the uniform nodes ``theta_k = k * grid_step``
    are built from two RK4 half steps each, so that Simpson panels can use
    the cell midpoints. Arguments beyond a period use the periodicity of
    the generator and powers of the base-point monodromy.

    Parameters
    ----------
    generator : PeriodicMatrixFn
        The matrix ``B(theta)``.
    n_nodes : int
        Nodes per period; ``grid_step = period / n_nodes``.
    """

    def __init__(self, generator: PeriodicMatrixFn, n_nodes=DEFAULT_NODES):
        self.generator = generator
        self.period = generator.period
        self.n_nodes = int(n_nodes)
        self.grid_step = self.period / self.n_nodes
        d = generator.dimension
        self.dimension = d

        half = 0.5 * self.grid_step
        quarter = np.arange(4 * self.n_nodes + 1) * (0.25 * self.grid_step)
        Bq = generator.eval(quarter)
        steps = np.full(2 * self.n_nodes, half)
        self._half = _rk4_linear(Bq[0:-1:2], Bq[1::2], Bq[2::2], steps)
        self._step = self._half[1::2] @ self._half[0::2]
        if not np.all(np.isfinite(self._step)):
            raise FloatingPointError("resolvent integration produced non-finite entries")

        phi = np.empty((self.n_nodes + 1, d, d))
        phi[0] = np.eye(d)
        for k in range(self.n_nodes):
            phi[k + 1] = self._step[k] @ phi[k]
        self._phi = phi
        self.monodromy = phi[-1]
        self.spectral_radius = float(np.max(np.abs(np.linalg.eigvals(self.monodromy))))
        if self.spectral_radius >= 1.0:
            raise SpectralHypothesisError(
                f"monodromy spectral radius {self.spectral_radius:.6g} >= 1")
        self.decay_constant_estimate, self.decay_rate_estimate = estimate_decay(self)

    @property
    def nodes(self):
        return np.arange(self.n_nodes + 1) * self.grid_step

    @property
    def node_propagators(self):
        """``R(theta_k, 0)`` for ``k = 0..n_nodes``."""
        return self._phi

    def _partial(self, b, a):
        h = np.asarray(b - a, dtype=float)
        mid = 0.5 * (a + b)
        B = self.generator.eval(np.array([a, mid, b]))
        return _rk4_linear(B[0], B[1], B[2], h)

    def _within(self, b, a):
        """``R(b, a)`` for ``0 <= a <= b <= period``."""
        h = self.grid_step
        n = self.n_nodes
        i = min(int(np.floor(a / h)), n - 1)
        j = min(int(np.floor(b / h)), n - 1)
        if i == j:
            return self._partial(b, a)
        first = self._partial((i + 1) * h, a)
        last = self._partial(b, j * h)
        mats = [first] + list(self._step[i + 1:j]) + [last]
        return _chain(mats)

    def _forward(self, theta, s):
        T = self.period
        shift = np.floor(s / T) * T
        theta, s = theta - shift, s - shift
        n_per = int(np.floor((theta - s) / T))
        top = theta - n_per * T
        if top <= T:
            inner = self._within(top, s)
        else:
            inner = self._within(top - T, 0.0) @ self._within(T, s)
        if n_per == 0:
            return inner
        base = self._within(s, 0.0) @ self._within(T, s)
        return inner @ np.linalg.matrix_power(base, n_per)

    def resolvent(self, theta, s):
        """Return ``R(theta, s)`` (backward spans use the matrix inverse)."""
        theta = float(theta)
        s = float(s)
        if theta == s:
            return np.eye(self.dimension)
        if theta > s:
            return self._forward(theta, s)
        return np.linalg.inv(self._forward(s, theta))


def resolvent(cache: ResolventCache, theta, s):
    return cache.resolvent(theta, s)


def estimate_decay(cache: ResolventCache, horizon=None, samples_per_period=64):
    """Least-squares fit of ``log ||R(t, 0)|| ~ log C - mu t`` on ``[0, horizon]``.

    Returns
    -------
    (C, mu) : tuple of float
    """
    T = cache.period
    horizon = 10 * T if horizon is None else float(horizon)
    stride = max(1, cache.n_nodes // samples_per_period)
    node_idx = np.arange(0, cache.n_nodes, stride)
    t_list, norms = [], []
    power = np.eye(cache.dimension)
    k = 0
    while True:
        for idx in node_idx:
            t = k * T + idx * cache.grid_step
            if t > horizon + 1e-12:
                break
            t_list.append(t)
            norms.append(np.linalg.norm(cache.node_propagators[idx] @ power, 2))
        else:
            power = cache.monodromy @ power
            k += 1
            continue
        break
    t_arr = np.asarray(t_list)
    norms = np.asarray(norms)
    if np.any(~np.isfinite(norms)) or np.any(norms <= 0):
        raise FloatingPointError("resolvent norm vanished or is non-finite")
    slope, intercept = np.polyfit(t_arr, np.log(norms), 1)
    mu = -slope
    if mu <= 0:
        raise SpectralHypothesisError(f"fitted decay rate {mu:.6g} is not positive")
    return float(np.exp(intercept)), float(mu)


def periodic_green_solve(cache: ResolventCache, forcing):
    """Unique periodic solution of ``u' = B(theta) u + forcing(theta)``.

    Parameters
    ----------
    cache : ResolventCache
    forcing : callable
        Maps an array of phases ``(n,)`` to values ``(n, d)`` or
        ``(n, d, k)``; the trailing axis holds independent right-hand sides.

    Returns
    -------
    FourierSeries
        ``u`` sampled at the cache nodes, evaluable at any phase.

    Notes
    -----
    ``u(0) = (Id - R(T,0))^{-1} int_0^T R(T,phi) f(phi) dphi`` and
    ``u(theta_k) = R(theta_k,0) u(0) + int_0^theta_k R(theta_k,phi) f(phi) dphi``;
    the Duhamel integrals are accumulated cell by cell with Simpson's rule.
    """
    n, h, d = cache.n_nodes, cache.grid_step, cache.dimension
    fine = np.arange(2 * n + 1) * (0.5 * h)
    f = np.asarray(forcing(fine), dtype=float)
    squeeze = f.ndim == 2
    if squeeze:
        f = f[..., None]
    if f.shape[:2] != (2 * n + 1, d):
        raise ValueError(f"forcing returned shape {f.shape}, expected ({2 * n + 1}, {d}, ...)")
    if not np.all(np.isfinite(f)):
        raise FloatingPointError("non-finite forcing values")
    # Simpson on each cell [theta_k, theta_k+1] propagated to its right end
    cells = (h / 6.0) * (cache._step @ f[0:-1:2]
                         + 4.0 * (cache._half[1::2] @ f[1::2])
                         + f[2::2])
    w = np.zeros((n + 1,) + f.shape[1:])
    for k in range(n):
        w[k + 1] = cache._step[k] @ w[k] + cells[k]
    lhs = np.eye(d) - cache.monodromy
    cond = np.linalg.cond(lhs)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SpectralHypothesisError(f"Id - R(T,0) is numerically singular (cond={cond:.3g})")
    u0 = np.linalg.solve(lhs, w[-1])
    u = cache.node_propagators @ u0 + w
    u = u[:-1]
    if squeeze:
        u = u[..., 0]
    return FourierSeries(u, period=cache.period)
