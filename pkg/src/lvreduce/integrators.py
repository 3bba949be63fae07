"""Time integrators and trajectory capture.

The stiff reference is implicit Euler with a Newton solve per step and the
analytic Jacobian of the full model. Reduced and averaged systems are
non-stiff and use classical RK4.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .model import FullModel, lv_jacobian, lv_rhs
from .periodic import TWO_PI

LOGGER = logging.getLogger(__name__)

FRAMES = ("pq", "slowfast", "reduced", "averaged")


class NewtonError(RuntimeError):
    """Implicit step did not converge."""


class NonFiniteStateError(FloatingPointError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "implicit_euler"
    dt: float = 1e-3
    newton_tol: float = 1e-12
    newton_max_iter: int = 20
    capture_stride: int = 1

    def __post_init__(self):
        if self.method not in ("implicit_euler", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1 or self.capture_stride < 1:
            raise ValueError("newton_max_iter and capture_stride must be >= 1")

    @classmethod
    def reference(cls, eps, **kw):
        """Implicit Euler with ``dt = eps^3``."""
        return cls(method="implicit_euler", dt=eps ** 3, **kw)

    @classmethod
    def rk4_for(cls, eps, steps_per_period=128, **kw):
        return cls(method="rk4", dt=eps * TWO_PI / steps_per_period, **kw)


@dataclass
class Trajectory:
    frame: str
    times: np.ndarray
    states: np.ndarray
    columns: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] != self.times.size:
            raise ValueError("states must be (n_times, dim)")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if len(self.columns) != self.states.shape[1]:
            raise ValueError("column names do not match state dimension")

    @property
    def final(self):
        return self.states[-1]

    def slow_fast(self):
        """``(X, Z)`` arrays; ``Z`` is ``None`` for averaged trajectories."""
        if self.frame in ("slowfast", "reduced"):
            return self.states[:, :2], self.states[:, 2:]
        if self.frame == "averaged":
            return self.states, None
        if "xz" in self.meta:
            X, Z = self.meta["xz"]
            return X, Z
        raise ValueError("pq trajectory carries no slow-fast data; use with_slow_fast")

    def with_slow_fast(self, fields):
        """Attach ``(X, Z)`` computed through the frame changes of ``fields``."""
        if self.frame != "pq":
            return self
        n = self.states.shape[1] // 2
        eps = self.meta["eps"]
        theta = self.meta.get("theta0", 0.0) + self.times / eps
        X, Z = fields.decompose(self.states[:, :n], self.states[:, n:], theta)
        self.meta["xz"] = (X, Z)
        return self

    def pq(self):
        if self.frame != "pq":
            raise ValueError("not a pq trajectory")
        n = self.states.shape[1] // 2
        return self.states[:, :n], self.states[:, n:]

    def to_csv(self, path):
        write_csv(self, path)


def columns_for(frame, n_sites=2):
    if frame == "pq":
        return [f"p_{i + 1}" for i in range(n_sites)] + [f"q_{i + 1}" for i in range(n_sites)]
    if frame == "averaged":
        return ["x_p", "x_q"]
    m = n_sites - 1
    return ["x_p", "x_q"] + [f"z_p_{i + 1}" for i in range(m)] + [f"z_q_{i + 1}" for i in range(m)]


def write_csv(traj: Trajectory, path):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + list(traj.columns))
        for t, row in zip(traj.times, traj.states):
            w.writerow(["%.17g" % t] + ["%.17g" % v for v in row])
    return path


def read_csv(path, frame, meta=None) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return Trajectory(frame, body[:, 0], body[:, 1:], header[1:], dict(meta or {}))


# ---------------------------------------------------------------------------
# implicit Euler for the full model
# ---------------------------------------------------------------------------

def integrate_full(model: FullModel, p0, q0, t_end, cfg: IntegratorConfig | None = None,
                   t0=0.0, chunk=4096) -> Trajectory:
    """Integrate the stiff model by implicit Euler (or RK4 if configured)."""
    eps = model.eps
    cfg = cfg or IntegratorConfig.reference(eps)
    n = model.n_sites
    y = np.concatenate([np.asarray(p0, float), np.asarray(q0, float)])
    if y.size != 2 * n or not np.all(np.isfinite(y)):
        raise ValueError("initial state must be finite with 2N entries")
    n_steps = int(round((t_end - t0) / cfg.dt))
    if n_steps < 1 or abs(n_steps * cfg.dt - (t_end - t0)) > 1e-9 * max(1.0, t_end):
        n_steps = max(1, int(np.ceil((t_end - t0) / cfg.dt - 1e-9)))
    dt = (t_end - t0) / n_steps
    params = model.params
    stride = cfg.capture_stride
    times = [t0]
    states = [y.copy()]
    eye = np.eye(2 * n)
    iters_total = 0
    max_resid = 0.0

    def lv(y):
        f, g = lv_rhs(params, y[:n], y[n:])
        return np.concatenate([f, g])

    def lv_jac(y):
        fp, fq, gp, gq = lv_jacobian(params, y[:n], y[n:])
        return np.block([[np.diag(fp), np.diag(fq)], [np.diag(gp), np.diag(gq)]])

    A_chunk = None
    for k in range(n_steps):
        if cfg.method == "implicit_euler":
            j = k % chunk
            if j == 0:
                # transport at the step end times, built in batches
                A_chunk = _transport_blocks(model, t0 + np.arange(k + 1, min(k + chunk, n_steps) + 1) * dt)
            A = A_chunk[j]
            base = y
            r = -dt * (A @ y + lv(y))
            for it in range(cfg.newton_max_iter):
                J = eye - dt * (A + lv_jac(y))
                y = y - np.linalg.solve(J, r)
                r = y - base - dt * (A @ y + lv(y))
                res = float(np.abs(r).max())
                if res <= cfg.newton_tol:
                    break
            else:
                raise NewtonError(f"Newton failed at step {k + 1} (t={t0 + (k + 1) * dt:.6g}), residual {res:.3g}")
            iters_total += it + 1
            max_resid = max(max_resid, res)
        else:
            t = t0 + k * dt

            def rhs(tau, v):
                return model_rhs(model, tau, v)

            y = _rk4_step(rhs, t, y, dt)
        if not np.all(np.isfinite(y)):
            raise NonFiniteStateError(f"non-finite state at step {k + 1}")
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            times.append(t0 + (k + 1) * dt)
            states.append(y.copy())
    # phase is t/eps for absolute times
    meta = {"eps": eps, "dt": dt, "method": cfg.method, "theta0": 0.0,
            "newton_iterations": iters_total, "max_newton_residual": max_resid}
    return Trajectory("pq", np.array(times), np.array(states), columns_for("pq", n), meta)


def _transport_blocks(model: FullModel, times):
    theta = np.asarray(times) / model.eps
    Kp = model.K_p.eval(theta)
    Kq = model.K_q.eval(theta)
    n = model.n_sites
    A = np.zeros(theta.shape + (2 * n, 2 * n))
    A[..., :n, :n] = Kp
    A[..., n:, n:] = Kq
    return A / model.eps


def model_rhs(model: FullModel, t, y):
    n = model.n_sites
    dp, dq = model.rhs(t, y[..., :n], y[..., n:])
    return np.concatenate([dp, dq], axis=-1)


# ---------------------------------------------------------------------------
# RK4
# ---------------------------------------------------------------------------

def _rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_path(rhs: Callable, y0, t0, t1, n_steps, stride=1):
    """Fixed-step RK4 from ``t0`` to ``t1`` (either direction)."""
    y = np.asarray(y0, dtype=float).copy()
    h = (t1 - t0) / n_steps
    ts = [t0]
    ys = [y.copy()]
    for k in range(n_steps):
        y = _rk4_step(rhs, t0 + k * h, y, h)
        if not np.all(np.isfinite(y)):
            raise NonFiniteStateError(f"non-finite state at step {k + 1}")
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            ts.append(t0 + (k + 1) * h)
            ys.append(y.copy())
    return np.array(ts), np.array(ys)


def _steps(t_end, t0, dt):
    return max(1, int(np.ceil((t_end - t0) / dt - 1e-9)))


def integrate_reduced(fields, h, X0, theta0, t_end, cfg: IntegratorConfig | None = None,
                      eps=None, check_domain=True) -> Trajectory:
    """RK4 for ``X' = F(X, h~(X, theta), theta)`` with ``Z = h~(X, theta)`` reconstructed."""
    if eps is None:
        raise ValueError("eps is required")
    cfg = cfg or IntegratorConfig.rk4_for(eps)

    def rhs(t, X):
        th = theta0 + t / eps
        return fields.F(X, h(X, th, eps), th)

    ts, Xs = rk4_path(rhs, X0, 0.0, t_end, _steps(t_end, 0.0, cfg.dt), cfg.capture_stride)
    Zs = h(Xs, theta0 + ts / eps, eps)
    traj = Trajectory("reduced", ts, np.hstack([Xs, Zs]), columns_for("reduced", fields.n_sites),
                      {"eps": eps, "dt": (t_end / _steps(t_end, 0.0, cfg.dt)), "method": "rk4",
                       "theta0": theta0, "order": h.order})
    if check_domain and np.isfinite(fields.domain_radius):
        from .reduction import first_violation

        bad = first_violation(traj, fields.domain_radius)
        if bad is not None:
            raise DomainError(f"reduced trajectory leaves the ball of radius {fields.domain_radius} at t={bad:.6g}")
    return traj


class DomainError(RuntimeError):
    """Trajectory left the ball where the reduction is valid."""


def integrate_slowfast(fields, eps, X0, Z0, theta0, t_end, dt=None, stride=1) -> Trajectory:
    """Explicit RK4 on the full ``(X, Z)`` system (needs ``dt`` well below ``eps``)."""
    dt = dt or eps * TWO_PI / 512
    m2 = 2 * fields.m

    def rhs(t, Y):
        th = theta0 + t / eps
        X, Z = Y[:2], Y[2:]
        F, G = fields.FG(X, Z, th)
        return np.concatenate([F, fields.B.eval(th) @ Z / eps + G])

    Y0 = np.concatenate([np.asarray(X0, float), np.asarray(Z0, float).reshape(m2)])
    n = _steps(t_end, 0.0, dt)
    ts, Ys = rk4_path(rhs, Y0, 0.0, t_end, n, stride)
    return Trajectory("slowfast", ts, Ys, columns_for("slowfast", fields.n_sites),
                      {"eps": eps, "dt": t_end / n, "method": "rk4", "theta0": theta0})


def integrate_averaged(avg, eps, X0, t_end, cfg: IntegratorConfig | None = None) -> Trajectory:
    """RK4 for the autonomous averaged field ``F0 (+ eps F1)``."""
    cfg = cfg or IntegratorConfig(method="rk4", dt=min(1e-2, eps * TWO_PI / 64))

    def rhs(t, X):
        return avg(X, eps)

    n = _steps(t_end, 0.0, cfg.dt)
    ts, Xs = rk4_path(rhs, X0, 0.0, t_end, n, cfg.capture_stride)
    return Trajectory("averaged", ts, Xs, columns_for("averaged"),
                      {"eps": eps, "dt": t_end / n, "method": "rk4", "order": avg.order})


def lv_first_integral(params, p, q):
    """Sum over sites of the classical per-site Lotka-Volterra invariant."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    return np.sum(params.b_q * p - params.a_q * np.log(p) + params.b_p * q - params.a_p * np.log(q), axis=-1)
