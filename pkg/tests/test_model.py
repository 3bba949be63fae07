import json

import numpy as np
import pytest

from lvreduce.model import (
    N2_EXAMPLE,
    LVParams,
    MigrationRates,
    ModelError,
    build_transport,
    equilibrium_branch,
    load_model_file,
    load_preset,
    lv_rhs,
    model_from_dict,
    parse_rate,
    projected_transport,
    projections,
    verify_spectrum,
)
from lvreduce.periodic import TWO_PI

BETA = (4 - np.sqrt(2)) / 2


def test_transport_at_zero(model):
    assert np.allclose(model.K_p.eval(0.0), [[-3, 2], [3, -2]])
    assert np.allclose(model.K_q.eval(0.0), [[-2, 3], [2, -3]])


def test_column_sums_vanish_exactly(model, rng):
    th = rng.random(200) * 10
    assert np.all(model.K_p.eval(th).sum(axis=-2) == 0)
    assert np.all(model.K_q.eval(th).sum(axis=-2) == 0)


def test_transport_derivative(model):
    th, h = 0.7, 1e-6
    fd = (model.K_p.eval(th + h) - model.K_p.eval(th - h)) / (2 * h)
    assert np.allclose(model.K_p.eval_derivative(th), fd, atol=1e-8)


def test_spectral_gap(model):
    assert verify_spectrum(model.K_p) == pytest.approx(BETA, abs=1e-6)
    assert verify_spectrum(model.K_q) == pytest.approx(BETA, abs=1e-6)
    th = np.linspace(0, TWO_PI, 9)
    ev = np.linalg.eigvals(model.K_p.eval(th))
    nonzero = np.take_along_axis(
        ev, np.argsort(np.abs(ev), axis=1), axis=1)[:, 1]
    assert np.allclose(nonzero, -(np.cos(th) + np.sin(th) + 4))


def test_zero_transport_rejected():
    zero = [[None, 0.0], [0.0, None]]
    K_p, _ = build_transport(MigrationRates.from_expressions(zero, zero))
    with pytest.raises(ModelError):
        verify_spectrum(K_p)


def test_negative_rate_rejected():
    rates = MigrationRates.from_expressions([[None, "cos_offset 3 1"], [1.0, None]], [[None, 1.0], [1.0, None]])
    with pytest.raises(ModelError):
        build_transport(rates)


def test_perron_vector(model, rng):
    br = model.branch()
    assert np.allclose(br.p_eq(0.0), [0.4, 0.6])
    th = rng.random(50) * TWO_PI
    d = np.sin(th) + np.cos(th) + 4
    expect = np.stack([(np.sin(th) + 2) / d, (np.cos(th) + 2) / d], axis=-1)
    assert np.allclose(br.p_eq(th), expect, atol=1e-13)


def test_perron_derivative_matches_difference(model):
    br = model.branch()
    h = 1e-6
    fd = (br.p_eq(1.1 + h) - br.p_eq(1.1 - h)) / (2 * h)
    assert np.allclose(br.p.eval_derivative(1.1), fd, atol=1e-8)


def test_prescribed_predator_equilibrium():
    b = 0.06
    rates = MigrationRates.from_expressions([[None, 1.0], [1.0, None]], [[None, 1 - b], [b, None]])
    _, K_q = build_transport(rates)
    assert np.allclose(equilibrium_branch(K_q).eval(np.linspace(0, 6, 5)), [1 - b, b])


def test_lv_rhs_examples(model):
    f, g = lv_rhs(model.params, np.zeros(2), np.zeros(2))
    assert not f.any() and not g.any()
    f, g = lv_rhs(model.params, np.ones(2), np.ones(2))
    assert np.allclose(f, [0.2, 0.2]) and np.allclose(g, [0.4, 0.1])


def test_lv_rhs_without_interaction(rng):
    pr = LVParams([0.4, 0.3], [0, 0], [0.1, 0.2], [0, 0])
    p, q = rng.random(2), rng.random(2)
    f, g = lv_rhs(pr, p, q)
    assert np.allclose(f, pr.a_p * p) and np.allclose(g, -pr.a_q * q)


def test_projections():
    J1, J2 = projections(2)
    assert np.array_equal(J1, [[1, 0]]) and np.array_equal(J2, [[1], [-1]])
    y = np.array([0.5, -0.5])
    assert np.allclose(J2 @ J1 @ y, y)
    J1, J2 = projections(4)
    assert np.allclose(J1 @ J2, np.eye(3))


def test_projected_transport(model, rng):
    th = rng.random(20) * TWO_PI
    Kt = projected_transport(model.K_p).eval(th)[:, 0, 0]
    assert np.allclose(Kt, -(np.cos(th) + np.sin(th) + 4))


def test_parse_rate_forms():
    assert parse_rate("const 2")(0.3) == 2
    assert parse_rate("cos_offset 1 2")(0.0) == pytest.approx(3)
    assert parse_rate("sin_offset 1 2").derivative(0.0) == pytest.approx(1)
    tab = parse_rate(list(2 + np.cos(np.arange(16) * TWO_PI / 16)))
    assert tab(0.5) == pytest.approx(2 + np.cos(0.5))
    with pytest.raises(ModelError):
        parse_rate("exp 3")


def test_params_validation():
    with pytest.raises(ModelError):
        LVParams([-1, 0], [0, 0], [0, 0], [0, 0])


def test_model_file_roundtrip(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(N2_EXAMPLE))
    m = model_from_dict(load_model_file(path))
    assert np.allclose(m.K_p.eval(0.0), [[-3, 2], [3, -2]])


def test_unknown_preset():
    with pytest.raises(ModelError):
        load_preset("nope")


def test_four_sites():
    n = 4
    table = [[None if i == j else f"cos_offset 0.5 {1 + i + j}" for j in range(n)] for i in range(n)]
    data = dict(N2_EXAMPLE, n_sites=4, sigma_p=table, sigma_q=table,
                a_p=[0.1] * 4, b_p=[0.1] * 4, a_q=[0.1] * 4, b_q=[0.1] * 4)
    m = model_from_dict(data)
    v = m.branch().p_eq(np.linspace(0, 6, 7))
    assert np.allclose(v.sum(axis=-1), 1) and np.all(v > 0)
    assert m.spectral_gap_beta > 0
