"""Numerical studies and the experiment runner behind the CLI."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import averaging as av
from .integrators import (
    IntegratorConfig,
    Trajectory,
    integrate_averaged,
    integrate_full,
    integrate_reduced,
    write_csv,
)
from .manifold import (
    ManifoldExpansion,
    compute_h1,
    compute_h2,
    export_tables,
    fixed_point_oracle,
    pde_residual,
)
from .model import PRESETS, FullModel, ModelError, load_model_file, load_preset, model_from_dict
from .periodic import TWO_PI
from .reduction import Reduction, domain_monitor, from_slow_fast, reduce_model, to_slow_fast

LOGGER = logging.getLogger(__name__)

KINDS = ("direct_run", "manifold_tables", "reduced_run", "averaged_run", "transient_decay",
         "slope_study", "sigma_report", "oracle_check")


class ValidationError(ValueError):
    """Invalid experiment request (exit code 1)."""


# ---------------------------------------------------------------------------
# slope fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float


def fit_slope(errors) -> SlopeFit:
    """Least squares on ``(ln eps, ln e)`` for pairs ``(eps, e)``."""
    pts = np.asarray(errors, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (eps, error) pairs")
    if np.any(pts <= 0):
        raise ValueError("errors and eps values must be positive")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    if pts.shape[0] == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return SlopeFit(float(slope), float(y[0] - slope * x[0]), 0.0)
    r = stats.linregress(x, y)
    return SlopeFit(float(r.slope), float(r.intercept), float(r.stderr))


# ---------------------------------------------------------------------------
# shared setup
# ---------------------------------------------------------------------------

@dataclass
class Pipeline:
    """Model, reduction and manifold coefficients for one preset."""

    model: FullModel | None
    reduction: Reduction
    manifold: ManifoldExpansion
    data: dict

    @property
    def fields(self):
        return self.reduction.fields

    @property
    def mu(self):
        return self.reduction.decay_rate

    def X0(self):
        p0 = np.asarray(self.data["p0"], float)
        q0 = np.asarray(self.data["q0"], float)
        return np.array([p0.sum(), q0.sum()])

    def expansion(self, order):
        return ManifoldExpansion(order, self.manifold.h1, self.manifold.h2)


def build_pipeline(data: dict) -> Pipeline:
    if "sigma_p" in data:
        model = model_from_dict(data)
        red = reduce_model(model)
    else:
        model = None
        red = av.stability_setup(data)
    h1 = compute_h1(red.fields)
    h2 = compute_h2(red.fields, h1)
    return Pipeline(model, red, ManifoldExpansion(2, h1, h2), dict(data))


def _require_model(pipe: Pipeline):
    if pipe.model is None:
        raise ValidationError("this experiment needs a model with transfer rates")
    return pipe.model


def _stride_for(n_steps, target):
    """Divisor of ``n_steps`` closest to ``target`` (shared capture grid)."""
    divs = [d for d in range(1, int(np.sqrt(n_steps)) + 1) if n_steps % d == 0]
    divs = divs + [n_steps // d for d in divs]
    return min(divs, key=lambda d: (abs(d - target), d))


def on_manifold_state(pipe: Pipeline, X0, theta0, eps, order):
    h = pipe.expansion(order)
    Z0 = h(X0, theta0, eps)
    return pipe.fields.reconstruct(X0, Z0, theta0)


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------

@dataclass
class SlopeStudyResult:
    eps: list
    err_p: list
    err_q: list
    err_p1: list
    fit_p: SlopeFit
    fit_q: SlopeFit
    fit_p1: SlopeFit
    order: int
    horizon_factor: float

    def residuals(self, which="p"):
        """Fit residuals ``ln e - (intercept + slope ln eps)``."""
        err, fit = {"p": (self.err_p, self.fit_p), "q": (self.err_q, self.fit_q),
                    "p1": (self.err_p1, self.fit_p1)}[which]
        return (np.log(err) - fit.intercept - fit.slope * np.log(self.eps)).tolist()

    def rows(self):
        return list(zip(self.eps, self.err_p, self.err_q, self.err_p1))


def slope_study(pipe: Pipeline, eps_list=(0.2, 0.1, 0.05, 0.025), order=1,
                horizon_factor=10.0, rk4_per_period=128) -> SlopeStudyResult:
    """Max error of the reconstructed reduced solution against implicit Euler on ``[0, c eps]``."""
    if len(eps_list) < 4:
        raise ValidationError("a slope study needs at least four eps values")
    model = _require_model(pipe)
    X0 = pipe.X0()
    h = pipe.expansion(order)
    out = {"p": [], "q": [], "p1": []}
    for eps in eps_list:
        m = model.with_eps(eps)
        p0, q0 = on_manifold_state(pipe, X0, 0.0, eps, order)
        t_end = horizon_factor * eps
        n = int(round(t_end / eps ** 3))
        k = _stride_for(n, TWO_PI / (rk4_per_period * eps ** 2))
        ref = integrate_full(m, p0, q0, t_end, IntegratorConfig(dt=t_end / n, capture_stride=k))
        red = integrate_reduced(pipe.fields, h, X0, 0.0, t_end,
                                IntegratorConfig(method="rk4", dt=k * t_end / n), eps=eps)
        P, Q = pipe.fields.reconstruct(red.states[:, :2], red.states[:, 2:], red.times / eps)
        rp, rq = ref.pq()
        out["p"].append(float(np.abs(P - rp).max()))
        out["q"].append(float(np.abs(Q - rq).max()))
        out["p1"].append(float(np.abs(P[:, 0] - rp[:, 0]).max()))
    eps_list = list(map(float, eps_list))
    fits = {k: fit_slope(list(zip(eps_list, v))) for k, v in out.items()}
    return SlopeStudyResult(eps_list, out["p"], out["q"], out["p1"], fits["p"], fits["q"], fits["p1"],
                            order, horizon_factor)


@dataclass
class TransientResult:
    eps: float
    order: int
    theta: np.ndarray
    error: np.ndarray
    rate: float
    plateau: float
    trajectory: Trajectory | None = None


def transient_decay(pipe: Pipeline, eps, orders=(0, 1), span=12.0, plateau_from=8.0,
                    samples_per_unit=50, p0=None, q0=None):
    """Distance of an off-manifold direct run to ``Z = h~(X, theta)`` against ``t/eps``.

    The decay rate is fitted on the samples lying more than 20x above the
    plateau (median of the error for ``t/eps >= plateau_from``).
    """
    model = _require_model(pipe).with_eps(eps)
    p0 = np.asarray(pipe.data["p0"] if p0 is None else p0, float)
    q0 = np.asarray(pipe.data["q0"] if q0 is None else q0, float)
    t_end = span * eps
    n = int(round(t_end / eps ** 3))
    k = _stride_for(n, n / (span * samples_per_unit))
    traj = integrate_full(model, p0, q0, t_end, IntegratorConfig(dt=t_end / n, capture_stride=k))
    traj.with_slow_fast(pipe.fields)
    X, Z = traj.slow_fast()
    theta = traj.times / eps
    results = {}
    for order in orders:
        h = pipe.expansion(order)
        err = np.linalg.norm(Z - h(X, theta, eps), axis=-1)
        plateau = float(np.median(err[theta >= plateau_from]))
        sel = (err > 20.0 * plateau) & (theta > 0.0)
        rate = float(-np.polyfit(theta[sel], np.log(err[sel]), 1)[0]) if sel.sum() >= 3 else float("nan")
        results[order] = TransientResult(float(eps), order, theta, err, rate, plateau, traj)
    return results


@dataclass
class ResidualStudy:
    eps: list
    residual_order1: list
    residual_order2: list

    @property
    def ratios_order1(self):
        r = self.residual_order1
        return [r[i] / r[i + 1] for i in range(len(r) - 1)]

    @property
    def ratios_order2(self):
        r = self.residual_order2
        return [r[i] / r[i + 1] for i in range(len(r) - 1)]


def residual_study(pipe: Pipeline, eps_list=(0.1, 0.05, 0.025), n_points=20, n_theta=64, seed=0, radius=2.0):
    X = random_points(n_points, radius, seed)
    theta = np.arange(n_theta) * (TWO_PI / n_theta)
    r1, r2 = [], []
    for eps in eps_list:
        r1.append(float(pde_residual(pipe.expansion(1), pipe.fields, eps, X[:, None], theta[None]).max()))
        r2.append(float(pde_residual(pipe.expansion(2), pipe.fields, eps, X[:, None], theta[None]).max()))
    return ResidualStudy(list(eps_list), r1, r2)


def random_points(n, radius, seed):
    """Points of the positive quadrant inside the ball of given radius."""
    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.random(n))
    ang = 0.5 * np.pi * rng.random(n)
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)


@dataclass
class OracleStudy:
    eps: list
    errors: list  # max over points of |oracle - eps h1|
    fit: SlopeFit | None
    contraction: list
    iterations: list
    points: list
    phases: list
    second_order_residual: list


def oracle_study(pipe: Pipeline, eps_list=(0.1, 0.05, 0.025), n_points=5, seed=1, radius=2.0):
    X0 = random_points(n_points, radius, seed)
    th0 = np.random.default_rng(seed + 1000).random(n_points) * TWO_PI
    h1, h2 = pipe.manifold.h1, pipe.manifold.h2
    errs, contr, iters, resid2 = [], [], [], []
    for eps in eps_list:
        res = fixed_point_oracle(pipe.fields, eps, X0, th0)
        ref1 = eps * h1(X0, th0)
        errs.append(float(np.abs(res.values - ref1).max()))
        resid2.append(float(np.abs(res.values - ref1 - eps ** 2 * h2(X0, th0)).max()))
        contr.append(float(np.median(res.contraction_factors)) if res.contraction_factors else 0.0)
        iters.append(res.iterations)
    eps_list = list(map(float, eps_list))
    fit = fit_slope(list(zip(eps_list, errs))) if len(eps_list) >= 2 else None
    return OracleStudy(eps_list, errs, fit, contr, iters,
                       X0.tolist(), th0.tolist(), resid2)


@dataclass
class AveragingStudy:
    eps: list
    err_order0: list
    err_order1_strobe: list
    fit0: SlopeFit
    fit1: SlopeFit


def averaging_study(pipe: Pipeline, eps_list=(0.1, 0.05, 0.025, 0.0125), t_final=5.0, steps_per_period=128):
    """Reduced (order-1 manifold) vs averaged flows, both by RK4 on a shared grid."""
    X0 = pipe.X0()
    avg = av.averaged_field(pipe.fields, pipe.manifold.h1)
    h = pipe.expansion(1)
    e0, e1 = [], []
    for eps in eps_list:
        periods = max(1, int(round(t_final / (eps * TWO_PI))))
        t_end = periods * eps * TWO_PI
        cfg = IntegratorConfig(method="rk4", dt=eps * TWO_PI / steps_per_period)
        red = integrate_reduced(pipe.fields, h, X0, 0.0, t_end, cfg, eps=eps)
        a0 = integrate_averaged(avg.with_order(0), eps, X0, t_end, cfg)
        a1 = integrate_averaged(avg.with_order(1), eps, X0, t_end, cfg)
        Xr = red.states[:, :2]
        strobe = slice(0, None, steps_per_period)
        e0.append(float(np.abs(Xr - a0.states).max()))
        e1.append(float(np.abs(Xr[strobe] - a1.states[strobe]).max()))
    eps_list = list(map(float, eps_list))
    return AveragingStudy(eps_list, e0, e1, fit_slope(list(zip(eps_list, e0))), fit_slope(list(zip(eps_list, e1))))


@dataclass
class OrderCheck:
    implicit_euler_order: float
    rk4_order: float
    implicit_euler_diffs: list
    rk4_diffs: list


def integrator_orders(pipe: Pipeline, eps=0.1, t_end=1.0):
    """Richardson estimates: implicit Euler on the full model, RK4 on the reduced system."""
    model = _require_model(pipe).with_eps(eps)
    p0 = np.asarray(pipe.data["p0"], float)
    q0 = np.asarray(pipe.data["q0"], float)
    finals = []
    for k in range(3):
        dt = eps ** 3 / 2 ** k
        finals.append(integrate_full(model, p0, q0, t_end, IntegratorConfig(dt=dt)).final)
    d_ie = [float(np.abs(finals[0] - finals[1]).max()), float(np.abs(finals[1] - finals[2]).max())]
    h = pipe.expansion(1)
    X0 = pipe.X0()
    finals = []
    for k in range(3):
        cfg = IntegratorConfig(method="rk4", dt=eps * TWO_PI / (8 * 2 ** k))
        finals.append(integrate_reduced(pipe.fields, h, X0, 0.0, t_end, cfg, eps=eps).final[:2])
    d_rk = [float(np.abs(finals[0] - finals[1]).max()), float(np.abs(finals[1] - finals[2]).max())]
    return OrderCheck(float(np.log2(d_ie[0] / d_ie[1])), float(np.log2(d_rk[0] / d_rk[1])), d_ie, d_rk)


def sigma_study(data: dict):
    red = av.stability_setup(data)
    eps = float(data.get("eps", 0.1))
    inputs = {k: data[k] for k in ("a0", "a1", "a_m1", "b", "b_p", "b_q", "eps") if k in data}
    return av.stability_report(red, eps, inputs=inputs)


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    kind: str
    preset: str | None = "paper-n2"
    model_file: str | None = None
    eps: list = field(default_factory=list)
    t_end: float | None = None
    out: str = "out"
    order: int = 1
    options: dict = field(default_factory=dict)

    def validate(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown experiment kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if (self.preset is None) == (self.model_file is None):
            raise ValidationError("give exactly one of preset or model file")
        for e in self.eps:
            if not 0 < e < 1:
                raise ValidationError(f"eps values must lie in (0, 1), got {e}")
        if self.t_end is not None and not self.t_end > 0:
            raise ValidationError("t_end must be positive")
        if self.order not in (0, 1, 2):
            raise ValidationError("order must be 0, 1 or 2")

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in ("kind", "preset", "model_file", "eps", "t_end", "out", "order", "options") if k in d}
        if "eps" in known and not isinstance(known["eps"], list):
            known["eps"] = [known["eps"]]
        return cls(**known)

    def load_data(self):
        try:
            return load_preset(self.preset) if self.preset else load_model_file(self.model_file)
        except (ModelError, OSError, json.JSONDecodeError) as exc:
            raise ValidationError(str(exc)) from exc


@dataclass
class ExperimentResult:
    status: int
    files: list
    summary: dict


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["%.17g" % v if isinstance(v, (float, np.floating)) else v for v in row])
    return str(path)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return str(path)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"cannot serialise {type(o)}")


def _tag(eps):
    return f"{eps:g}".replace(".", "p")


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    spec.validate()
    data = spec.load_data()
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = _RUNNERS[spec.kind]
    if spec.kind == "sigma_report":
        pipe = None
    else:
        pipe = build_pipeline(data)
    start = time.perf_counter()
    files, summary = handler(spec, data, pipe, out)
    summary["elapsed_s"] = round(time.perf_counter() - start, 3)
    LOGGER.info("%s finished in %.2fs", spec.kind, summary["elapsed_s"])
    return ExperimentResult(0, files, summary)


def _eps_list(spec, data, default):
    return list(spec.eps) if spec.eps else list(default if default is not None else [data.get("eps", 0.1)])


def _direct_one(data, eps, t_end, max_rows, alpha, path):
    pipe = build_pipeline(data)
    model = _require_model(pipe)
    n = int(np.ceil(t_end / eps ** 3))
    stride = max(1, n // max_rows)
    traj = integrate_full(model.with_eps(eps), data["p0"], data["q0"], t_end,
                          IntegratorConfig.reference(eps, capture_stride=stride))
    traj.with_slow_fast(pipe.fields)
    write_csv(traj, path)
    X, Z = traj.slow_fast()
    observed = float(max(np.linalg.norm(X, axis=-1).max(), np.linalg.norm(Z, axis=-1).max()))
    alpha = 10.0 * observed if alpha is None else alpha
    return {"eps": eps, "steps": n, "final": traj.final.tolist(),
            "max_newton_residual": traj.meta["max_newton_residual"],
            "max_norm": observed, "alpha": alpha, "in_domain": domain_monitor(traj, alpha)}


def _run_direct(spec, data, pipe, out):
    _require_model(pipe)
    t_end = spec.t_end or 10.0
    alpha = float(spec.options["alpha"]) if "alpha" in spec.options else None
    max_rows = int(spec.options.get("max_rows", 5000))
    eps_list = _eps_list(spec, data, None)
    paths = [out / f"direct_eps{_tag(eps)}.csv" for eps in eps_list]
    jobs = [(data, eps, t_end, max_rows, alpha, path) for eps, path in zip(eps_list, paths)]
    workers = int(spec.options.get("workers", 1))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_direct_one, *zip(*jobs)))
    else:
        runs = [_direct_one(*job) for job in jobs]
    return [str(p) for p in paths], {"runs": runs}


def _run_tables(spec, data, pipe, out):
    path = export_tables(pipe.manifold.h1, pipe.manifold.h2, pipe.fields.m, out / "manifold_tables.csv")
    return [str(path)], {"monomials_h1": pipe.manifold.h1.support(), "monomials_h2": pipe.manifold.h2.support()}


def _run_reduced(spec, data, pipe, out):
    files, summary = [], {"runs": []}
    t_end = spec.t_end or 10.0
    h = pipe.expansion(spec.order)
    for eps in _eps_list(spec, data, None):
        traj = integrate_reduced(pipe.fields, h, pipe.X0(), 0.0, t_end, IntegratorConfig.rk4_for(eps), eps=eps)
        files.append(str(write_csv(traj, out / f"reduced_order{spec.order}_eps{_tag(eps)}.csv")))
        P, Q = pipe.fields.reconstruct(traj.states[:, :2], traj.states[:, 2:], traj.times / eps)
        pq = Trajectory("pq", traj.times, np.hstack([P, Q]),
                        [f"p_{i + 1}" for i in range(P.shape[1])] + [f"q_{i + 1}" for i in range(Q.shape[1])],
                        {"eps": eps})
        files.append(str(write_csv(pq, out / f"reduced_order{spec.order}_pq_eps{_tag(eps)}.csv")))
        summary["runs"].append({"eps": eps, "final_X": traj.final[:2].tolist()})
    return files, summary


def _run_averaged(spec, data, pipe, out):
    files, summary = [], {"runs": []}
    t_end = spec.t_end or 10.0
    avg = av.averaged_field(pipe.fields, pipe.manifold.h1)
    summary["F0"] = {str(e): c.tolist() for e, c in zip(avg.F0.exps, avg.F0.coef)}
    summary["F1"] = {str(e): c.tolist() for e, c in zip(avg.F1.exps, avg.F1.coef)}
    for eps in _eps_list(spec, data, None):
        for order in (0, 1):
            traj = integrate_averaged(avg.with_order(order), eps, pipe.X0(), t_end)
            files.append(str(write_csv(traj, out / f"averaged_order{order}_eps{_tag(eps)}.csv")))
            summary["runs"].append({"eps": eps, "order": order, "final_X": traj.final.tolist()})
    return files, summary


def _run_transient(spec, data, pipe, out):
    files, summary = [], {"runs": [], "mu_hat": pipe.mu}
    orders = tuple(spec.options.get("orders", (0, 1)))
    for eps in _eps_list(spec, data, [0.1]):
        res = transient_decay(pipe, eps, orders=orders)
        first = res[orders[0]]
        rows = []
        for i in range(first.theta.size):
            row = [first.trajectory.times[i], first.theta[i]]
            for o in orders:
                row += [res[o].error[i], np.log(max(res[o].error[i], 1e-300))]
            rows.append(row)
        header = ["t", "t_over_eps"] + [c for o in orders for c in (f"err_order{o}", f"log_err_order{o}")]
        files.append(_write_rows(out / f"transient_eps{_tag(eps)}.csv", header, rows))
        summary["runs"].append({"eps": eps, **{f"order{o}": {"rate": res[o].rate, "plateau": res[o].plateau}
                                                for o in orders}})
    return files, summary


def _run_slopes(spec, data, pipe, out):
    res = slope_study(pipe, _eps_list(spec, data, [0.2, 0.1, 0.05, 0.025]), order=spec.order)
    f = _write_rows(out / f"slope_study_order{spec.order}.csv", ["eps", "err_p", "err_q", "err_p1"], res.rows())
    summary = {"order": res.order, "slope_p": res.fit_p.slope, "slope_q": res.fit_q.slope,
               "slope_p1": res.fit_p1.slope, "stderr_p": res.fit_p.stderr, "stderr_q": res.fit_q.stderr,
               "intercept_p": res.fit_p.intercept, "intercept_q": res.fit_q.intercept,
               "residuals_p": res.residuals("p"), "residuals_q": res.residuals("q")}
    return [f, _write_json(out / f"slope_study_order{spec.order}.json", summary)], summary


def _run_sigma(spec, data, pipe, out):
    if "a0" not in data:
        raise ValidationError("sigma_report needs the stability setup keys a0, a1, a_m1, b")
    rep = sigma_study(data)
    summary = asdict(rep)
    return [_write_json(out / "sigma_report.json", summary)], summary


def _run_oracle(spec, data, pipe, out):
    res = oracle_study(pipe, _eps_list(spec, data, [0.1, 0.05, 0.025]))
    summary = asdict(res)
    return [_write_json(out / "oracle_check.json", summary)], summary


_RUNNERS = {
    "direct_run": _run_direct,
    "manifold_tables": _run_tables,
    "reduced_run": _run_reduced,
    "averaged_run": _run_averaged,
    "transient_decay": _run_transient,
    "slope_study": _run_slopes,
    "sigma_report": _run_sigma,
    "oracle_check": _run_oracle,
}


# ---------------------------------------------------------------------------
# invariant suite
# ---------------------------------------------------------------------------

def run_invariants(seed=0):
    """Fast structural checks; returns ``[(name, passed, value, limit)]``."""
    from .periodic import periodic_green_solve

    rng = np.random.default_rng(seed)
    pipe = build_pipeline(PRESETS["paper-n2"])
    model, fields = pipe.model, pipe.fields
    out = []

    theta = rng.random(64) * TWO_PI
    colsum = max(np.abs(model.K_p.eval(theta).sum(axis=-2)).max(), np.abs(model.K_q.eval(theta).sum(axis=-2)).max())
    out.append(("column sums of K vanish", bool(colsum == 0.0), float(colsum), 0.0))

    pure = model.with_params(model.params.scaled(0.0))
    br = model.branch()
    p0, q0 = br.p_eq(0.0), br.q_eq(0.0)
    traj = integrate_full(pure, p0, q0, 1e4 * model.eps ** 3)
    drift = float(np.abs(traj.states[:, :2].sum(axis=1) - p0.sum()).max())
    out.append(("mass conservation under pure transport", drift <= 1e-10, drift, 1e-10))

    cache = fields.cache
    worst = 0.0
    for _ in range(50):
        s, u, t = np.sort(rng.random(3) * TWO_PI)
        worst = max(worst, float(np.abs(cache.resolvent(t, s) - cache.resolvent(t, u) @ cache.resolvent(u, s)).max()))
    out.append(("cocycle law", worst <= 1e-8, worst, 1e-8))

    sol = periodic_green_solve(cache, lambda th: np.stack([np.cos(th), np.sin(2 * th)], axis=-1))
    th = np.arange(256) * (TWO_PI / 256)
    res = sol.derivative()(th) - np.einsum("tij,tj->ti", fields.B.eval(th), sol(th)) \
        - np.stack([np.cos(th), np.sin(2 * th)], axis=-1)
    green = float(np.abs(res).max())
    out.append(("periodic Green residual", green <= 1e-8, green, 1e-8))

    p = rng.random((1000, 2)) * 3
    q = rng.random((1000, 2)) * 3
    ph = rng.random(1000) * TWO_PI
    fr = to_slow_fast(p, q, ph, br, pipe.reduction.remover)
    pp, qq = from_slow_fast(fr, ph, br)
    X, Z = fields.decompose(p, q, ph)
    p2, q2 = fields.reconstruct(X, Z, ph)
    rt = float(max(np.abs(pp - p).max(), np.abs(qq - q).max(), np.abs(p2 - p).max(), np.abs(q2 - q).max()))
    out.append(("frame round trip", rt <= 1e-12, rt, 1e-12))

    Xb = rng.random((32, 2)) * 2
    s, t = rng.random(32) * TWO_PI, rng.random(32) * TWO_PI
    anti = float(np.abs(av.bracket(fields, Xb, s, t) + av.bracket(fields, Xb, t, s)).max())
    out.append(("bracket antisymmetry", anti == 0.0, anti, 0.0))

    h = pipe.expansion(0)
    h0 = float(np.abs(h(Xb, s, 0.1)).max())
    out.append(("zeroth manifold term vanishes", h0 == 0.0, h0, 0.0))
    return out
