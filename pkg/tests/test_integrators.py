import numpy as np
import pytest

from lvreduce import averaging as av
from lvreduce.integrators import (
    IntegratorConfig,
    NewtonError,
    Trajectory,
    integrate_averaged,
    integrate_full,
    integrate_reduced,
    lv_first_integral,
    read_csv,
    write_csv,
)
from lvreduce.manifold import ManifoldExpansion, compute_h1
from lvreduce.periodic import TWO_PI


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(newton_tol=-1)
    with pytest.raises(ValueError):
        IntegratorConfig(method="bdf")
    assert IntegratorConfig.reference(0.1).dt == pytest.approx(1e-3)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory("pq", [0, 0], np.zeros((2, 4)), ["t"] * 4)
    with pytest.raises(ValueError):
        Trajectory("pq", [0, 1], np.zeros((2, 3)), ["a"] * 4)
    with pytest.raises(ValueError):
        Trajectory("bogus", [0], np.zeros((1, 1)), ["a"])


def test_pure_transport_conserves_mass(model):
    pure = model.with_params(model.params.scaled(0.0))
    br = model.branch()
    p0 = br.p_eq(0.0)
    traj = integrate_full(pure, p0, br.q_eq(0.0), 1e4 * model.eps ** 3)
    p, q = traj.pq()
    assert traj.times.size == 10001
    assert np.abs(p.sum(axis=1) - p0.sum()).max() <= 1e-10
    assert np.abs(q.sum(axis=1) - 1.0).max() <= 1e-10


def test_newton_residual_bounded(model):
    traj = integrate_full(model, [0.1, 0.2], [0.3, 0.4], 0.5)
    assert traj.meta["max_newton_residual"] <= 1e-12
    assert traj.meta["newton_iterations"] <= 3 * 500


def test_newton_failure_reported(model):
    with pytest.raises(NewtonError, match="step 1"):
        integrate_full(model, [0.1, 0.2], [0.3, 0.4], 0.01, IntegratorConfig(dt=1e-3, newton_max_iter=1,
                                                                           newton_tol=1e-300))


def test_implicit_euler_richardson(model):
    finals = [integrate_full(model, [0.1, 0.2], [0.3, 0.4], 0.5, IntegratorConfig(dt=1e-3 / 2 ** k)).final
              for k in range(3)]
    ratio = np.abs(finals[0] - finals[1]).max() / np.abs(finals[1] - finals[2]).max()
    assert 2 ** 0.8 <= ratio <= 2 ** 1.2


def test_plain_lotka_volterra_invariant(model):
    bare = model.without_transport().with_eps(1.0)
    p0, q0 = np.array([0.5, 0.8]), np.array([0.6, 0.9])
    drifts = []
    for dt in (1e-2, 5e-3):
        traj = integrate_full(bare, p0, q0, 5.0, IntegratorConfig(dt=dt))
        p, q = traj.pq()
        V = lv_first_integral(model.params, p, q)
        drifts.append(np.abs(V - V[0]).max())
    assert 1.6 <= drifts[0] / drifts[1] <= 2.4


def test_reduced_zero_rates_is_constant(zero_reduction):
    f = zero_reduction.fields
    h = ManifoldExpansion(1, compute_h1(f))
    traj = integrate_reduced(f, h, [0.4, 0.9], 0.0, 1.0, eps=0.1)
    assert np.allclose(traj.states[:, :2], [0.4, 0.9], atol=0)


def test_reduced_rk4_order(pipe):
    h = pipe.expansion(1)
    finals = []
    for k in range(3):
        cfg = IntegratorConfig(method="rk4", dt=0.1 * TWO_PI / (8 * 2 ** k))
        finals.append(integrate_reduced(pipe.fields, h, pipe.X0(), 0.0, 1.0, cfg, eps=0.1).final[:2])
    order = np.log2(np.abs(finals[0] - finals[1]).max() / np.abs(finals[1] - finals[2]).max())
    assert order == pytest.approx(4.0, abs=0.3)


def test_reduced_needs_eps(pipe):
    with pytest.raises(ValueError):
        integrate_reduced(pipe.fields, pipe.expansion(1), pipe.X0(), 0.0, 1.0)


def test_reduced_domain_violation(pipe):
    from lvreduce.integrators import DomainError

    fields = pipe.fields.with_radius(0.5)
    with pytest.raises(DomainError, match="t="):
        integrate_reduced(fields, pipe.expansion(1), [0.3, 0.7], 0.0, 5.0, eps=0.1)


def test_on_manifold_reduced_matches_reference(pipe):
    eps = 0.1
    X0 = pipe.X0()
    Z0 = pipe.expansion(1)(X0, 0.0, eps)
    p0, q0 = pipe.fields.reconstruct(X0, Z0, 0.0)
    ref = integrate_full(pipe.model.with_eps(eps), p0, q0, 10 * eps, IntegratorConfig(dt=1e-3, capture_stride=10))
    red = integrate_reduced(pipe.fields, pipe.expansion(1), X0, 0.0, 10 * eps,
                            IntegratorConfig(method="rk4", dt=1e-2), eps=eps)
    P, _ = pipe.fields.reconstruct(red.states[:, :2], red.states[:, 2:], red.times / eps)
    assert np.abs(P - ref.pq()[0]).max() <= eps


def test_averaged_lv_invariant(pipe):
    F0 = av.average_F0(pipe.fields)
    A, B = F0.term((1, 0))[0], -F0.term((1, 1))[0]
    C, D = -F0.term((0, 1))[1], F0.term((1, 1))[1]
    assert min(A, B, C, D) > 0
    avg = av.AveragedField(F0, av.AutonomousPoly.zero(), order=0)
    drifts = []
    for dt in (0.1, 0.05):
        X = integrate_averaged(avg, 0.1, [0.3, 0.7], 20.0, IntegratorConfig(method="rk4", dt=dt)).states
        V = D * X[:, 0] - C * np.log(X[:, 0]) + B * X[:, 1] - A * np.log(X[:, 1])
        drifts.append(np.abs(V - V[0]).max())
    assert np.log2(drifts[0] / drifts[1]) == pytest.approx(4.0, abs=0.5)


def test_averaged_zero_field_constant():
    avg = av.AveragedField(av.AutonomousPoly.zero(), av.AutonomousPoly.zero())
    traj = integrate_averaged(avg, 0.1, [1.0, 2.0], 1.0)
    assert np.all(traj.states == [1.0, 2.0])


def test_averaged_orders_differ_by_eps(pipe):
    avg = av.averaged_field(pipe.fields, pipe.manifold.h1)
    gaps = []
    for eps in (0.1, 0.05):
        a0 = integrate_averaged(avg.with_order(0), eps, [0.3, 0.7], 2.0).states
        a1 = integrate_averaged(avg.with_order(1), eps, [0.3, 0.7], 2.0).states
        gaps.append(np.abs(a0 - a1).max())
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.2)


def test_csv_round_trip_and_determinism(model, tmp_path):
    runs = [integrate_full(model, [0.1, 0.2], [0.3, 0.4], 0.05) for _ in range(2)]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(runs[0], a)
    write_csv(runs[1], b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "t,p_1,p_2,q_1,q_2"
    back = read_csv(a, "pq")
    assert np.array_equal(back.states, runs[0].states) and np.array_equal(back.times, runs[0].times)
