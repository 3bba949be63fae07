"""Slow-fast coordinates and the reduced vector fields.

Coordinates: ``x_p = 1^T p`` (total prey), ``y_p = p - x_p p_eq(theta)``,
``y~_p = J1 y_p`` and ``z_p = y~_p + x_p I_p(theta)``, where ``I_p`` removes
the ``1/eps`` forcing caused by the moving equilibrium. In ``X = (x_p, x_q)``
and ``Z = (z_p, z_q)`` the system reads::

    X' = F(X, Z, theta)
    Z' = (1/eps) B(theta) Z + G(X, Z, theta),    theta = t / eps

With ``P = p_eq - J2 I_p`` the state is recovered as ``p = x_p P + J2 z_p``,
and ``F = (1^T f, 1^T g)``, ``G = (J1 (f - (1^T f) P), J1 (g - (1^T g) Q))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import EquilibriumBranch, FullModel, LVParams, lv_jacobian, lv_rhs, projections
from .periodic import (
    DEFAULT_NODES,
    TWO_PI,
    FourierSeries,
    PeriodicMatrixFn,
    ResolventCache,
    periodic_green_solve,
)


@dataclass(frozen=True)
class SlowFastFrame:
    x_p: np.ndarray
    x_q: np.ndarray
    y_p: np.ndarray
    y_q: np.ndarray
    yt_p: np.ndarray
    yt_q: np.ndarray
    z_p: Optional[np.ndarray] = None
    z_q: Optional[np.ndarray] = None

    @property
    def X(self):
        return np.stack([self.x_p, self.x_q], axis=-1)

    @property
    def Z(self):
        if self.z_p is None:
            raise ValueError("frame was built without a stiff remover")
        return np.concatenate([self.z_p, self.z_q], axis=-1)


def to_slow_fast(p, q, theta, branch: EquilibriumBranch, remover=None) -> SlowFastFrame:
    """Split populations into totals and zero-sum deviations from equilibrium."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    J1, _ = projections(p.shape[-1])
    x_p = p.sum(axis=-1)
    x_q = q.sum(axis=-1)
    y_p = p - x_p[..., None] * branch.p_eq(theta)
    y_q = q - x_q[..., None] * branch.q_eq(theta)
    yt_p = y_p @ J1.T
    yt_q = y_q @ J1.T
    z_p = z_q = None
    if remover is not None:
        z_p = yt_p + x_p[..., None] * remover.I_p(theta)
        z_q = yt_q + x_q[..., None] * remover.I_q(theta)
    return SlowFastFrame(x_p, x_q, y_p, y_q, yt_p, yt_q, z_p, z_q)


def from_slow_fast(frame: SlowFastFrame, theta, branch: EquilibriumBranch):
    p = frame.x_p[..., None] * branch.p_eq(theta) + frame.y_p
    q = frame.x_q[..., None] * branch.q_eq(theta) + frame.y_q
    return p, q


# ---------------------------------------------------------------------------
# stiff remover
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StiffRemover:
    """Periodic factors ``I_p``, ``I_q`` with ``h0_p(x, theta) = -x I_p(theta)``."""

    I_p: FourierSeries
    I_q: FourierSeries
    cache_p: ResolventCache
    cache_q: ResolventCache

    def h0_p(self, x, theta):
        return -np.asarray(x)[..., None] * self.I_p(theta)

    def h0_q(self, x, theta):
        return -np.asarray(x)[..., None] * self.I_q(theta)


def build_stiff_remover(Kt: PeriodicMatrixFn, branch_derivative, n_nodes=DEFAULT_NODES):
    """Solve ``I' = K~ I + J1 v'`` for the periodic ``I``.

    Returns ``(I, cache)`` where ``cache`` is the resolvent of ``K~``.
    """
    m = Kt.dimension
    J1, _ = projections(m + 1)
    cache = ResolventCache(Kt, n_nodes)
    I = periodic_green_solve(cache, lambda th: branch_derivative(th) @ J1.T)
    return I, cache


def stiff_remover(Kt_p, Kt_q, branch: EquilibriumBranch, n_nodes=DEFAULT_NODES) -> StiffRemover:
    I_p, c_p = build_stiff_remover(Kt_p, branch.p.eval_derivative, n_nodes)
    I_q, c_q = build_stiff_remover(Kt_q, branch.q.eval_derivative, n_nodes)
    return StiffRemover(I_p, I_q, c_p, c_q)


def prec_residual(I: FourierSeries, Kt: PeriodicMatrixFn, branch_derivative, n_samples=256):
    """Max defect of ``h0 = -I`` (unit mass) in ``dh0/dtheta = K~ h0 - v~'``."""
    theta = np.arange(n_samples) * (TWO_PI / n_samples)
    J1, _ = projections(Kt.dimension + 1)
    h0 = -I(theta)
    dh0 = -I.derivative()(theta)
    rhs = (Kt.eval(theta) @ h0[..., None])[..., 0] - branch_derivative(theta) @ J1.T
    return float(np.abs(dh0 - rhs).max())


# ---------------------------------------------------------------------------
# reduced vector fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedVectorFields:
    """``F``, ``G`` and ``B`` of the slow-fast system, with analytic Jacobians.

    Arrays broadcast over leading axes: ``X`` is ``(..., 2)``, ``Z`` is
    ``(..., 2N-2)`` and ``theta`` is ``(...)``.
    """

    params: LVParams
    P: FourierSeries
    Q: FourierSeries
    B: PeriodicMatrixFn
    cache: ResolventCache
    domain_radius: float = np.inf

    @property
    def n_sites(self):
        return self.params.n_sites

    @property
    def m(self):
        return self.n_sites - 1

    def with_radius(self, alpha):
        return ReducedVectorFields(self.params, self.P, self.Q, self.B, self.cache, float(alpha))

    def reconstruct(self, X, Z, theta):
        """Populations ``(p, q)`` from ``(X, Z)`` at phase ``theta``."""
        X = np.asarray(X, dtype=float)
        Z = np.asarray(Z, dtype=float)
        _, J2 = projections(self.n_sites)
        m = self.m
        p = X[..., :1] * self.P(theta) + Z[..., :m] @ J2.T
        q = X[..., 1:2] * self.Q(theta) + Z[..., m:] @ J2.T
        return p, q

    def decompose(self, p, q, theta):
        """Inverse of :meth:`reconstruct`."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        J1, _ = projections(self.n_sites)
        x_p = p.sum(axis=-1)
        x_q = q.sum(axis=-1)
        z_p = (p - x_p[..., None] * self.P(theta)) @ J1.T
        z_q = (q - x_q[..., None] * self.Q(theta)) @ J1.T
        return np.stack([x_p, x_q], axis=-1), np.concatenate([z_p, z_q], axis=-1)

    def _state(self, X, Z, theta, PQ=None):
        P, Q = (self.P(theta), self.Q(theta)) if PQ is None else PQ
        X = np.asarray(X, dtype=float)
        Z = np.asarray(Z, dtype=float)
        _, J2 = projections(self.n_sites)
        m = self.m
        p = X[..., :1] * P + Z[..., :m] @ J2.T
        q = X[..., 1:2] * Q + Z[..., m:] @ J2.T
        return P, Q, p, q

    def FG(self, X, Z, theta, PQ=None):
        """``(F, G)``; ``PQ`` may carry ``(P(theta), Q(theta))`` precomputed."""
        P, Q, p, q = self._state(X, Z, theta, PQ)
        f, g = lv_rhs(self.params, p, q)
        sf = f.sum(axis=-1)
        sg = g.sum(axis=-1)
        F = np.stack([sf, sg], axis=-1)
        Gp = (f - sf[..., None] * P)[..., :-1]
        Gq = (g - sg[..., None] * Q)[..., :-1]
        return F, np.concatenate([Gp, Gq], axis=-1)

    def F(self, X, Z, theta):
        return self.FG(X, Z, theta)[0]

    def G(self, X, Z, theta):
        return self.FG(X, Z, theta)[1]

    def jacobians(self, X, Z, theta):
        """``(dF/dX, dF/dZ, dG/dX, dG/dZ)`` with shapes ``(...,2,2)``, ``(...,2,2m)``, ``(...,2m,2)``, ``(...,2m,2m)``."""
        P, Q, p, q = self._state(X, Z, theta)
        n, m = self.n_sites, self.m
        _, J2 = projections(n)
        fp, fq, gp, gq = lv_jacobian(self.params, p, q)  # diagonals (..., n)
        shape = p.shape[:-1]
        # derivative of (p, q) w.r.t. (X, Z): (..., 2n, 2 + 2m)
        D = np.zeros(shape + (2 * n, 2 + 2 * m))
        D[..., :n, 0] = P
        D[..., n:, 1] = Q
        D[..., :n, 2:2 + m] = J2
        D[..., n:, 2 + m:] = J2
        # df, dg w.r.t. (p, q): block diagonal pieces
        Lf = fp[..., None] * D[..., :n, :] + fq[..., None] * D[..., n:, :]
        Lg = gp[..., None] * D[..., :n, :] + gq[..., None] * D[..., n:, :]
        sLf = Lf.sum(axis=-2)
        sLg = Lg.sum(axis=-2)
        Gp = (Lf - P[..., :, None] * sLf[..., None, :])[..., :-1, :]
        Gq = (Lg - Q[..., :, None] * sLg[..., None, :])[..., :-1, :]
        JF = np.stack([sLf, sLg], axis=-2)
        JG = np.concatenate([Gp, Gq], axis=-2)
        return JF[..., :2], JF[..., 2:], JG[..., :2], JG[..., 2:]

    def B_eval(self, theta):
        return self.B.eval(theta)


def assemble_FG(model, branch: EquilibriumBranch, remover: StiffRemover,
                n_nodes=DEFAULT_NODES, domain_radius=np.inf) -> ReducedVectorFields:
    """Build ``F``, ``G`` and ``B`` from a model (or bare LV parameters)."""
    params = model.params if isinstance(model, FullModel) else model
    _, J2 = projections(params.n_sites)
    theta = np.arange(n_nodes) * (TWO_PI / n_nodes)
    P = FourierSeries(branch.p_eq(theta) - remover.I_p(theta) @ J2.T)
    Q = FourierSeries(branch.q_eq(theta) - remover.I_q(theta) @ J2.T)
    B = PeriodicMatrixFn.block_diagonal(remover.cache_p.generator, remover.cache_q.generator)
    cache = ResolventCache(B, remover.cache_p.n_nodes)
    return ReducedVectorFields(params, P, Q, B, cache, float(domain_radius))


@dataclass(frozen=True)
class Reduction:
    """Everything derived from one model: branch, stiff remover and fields."""

    params: LVParams
    branch: EquilibriumBranch
    remover: StiffRemover
    fields: ReducedVectorFields
    Kt_p: PeriodicMatrixFn
    Kt_q: PeriodicMatrixFn

    @property
    def decay_rate(self):
        return self.fields.cache.decay_rate_estimate


def reduce_model(model: FullModel, n_nodes=DEFAULT_NODES, branch=None) -> Reduction:
    from .model import projected_transport

    branch = branch if branch is not None else model.branch()
    Kt_p = projected_transport(model.K_p)
    Kt_q = projected_transport(model.K_q)
    return reduce_synthetic(model.params, Kt_p, Kt_q, branch, n_nodes)


def reduce_synthetic(params: LVParams, Kt_p, Kt_q, branch: EquilibriumBranch,
                     n_nodes=DEFAULT_NODES) -> Reduction:
    """Reduction from projected transport and a prescribed equilibrium branch."""
    remover = stiff_remover(Kt_p, Kt_q, branch, n_nodes)
    fields = assemble_FG(params, branch, remover, n_nodes)
    return Reduction(params, branch, remover, fields, Kt_p, Kt_q)


def domain_monitor(traj, alpha) -> bool:
    """True iff every sample keeps ``|X| <= alpha`` and ``|Z| <= alpha``."""
    X, Z = traj.slow_fast()
    nx = np.linalg.norm(X, axis=-1)
    nz = np.linalg.norm(Z, axis=-1) if Z is not None else np.zeros_like(nx)
    return bool(np.all(nx <= alpha) and np.all(nz <= alpha))


def first_violation(traj, alpha):
    """Time of the first sample leaving the ball, or ``None``."""
    X, Z = traj.slow_fast()
    norm = np.linalg.norm(X, axis=-1)
    if Z is not None:
        norm = np.maximum(norm, np.linalg.norm(Z, axis=-1))
    bad = np.nonzero(norm > alpha)[0]
    return None if bad.size == 0 else float(traj.times[bad[0]])
