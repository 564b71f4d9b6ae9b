import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvqkdsim.channel import identity_sop, is_unitary, rotation
from cvqkdsim.core import RngStream
from cvqkdsim.polctl import (V_MAX, V_PI, JonesObjective, PaddleState, SpsaConfig,
                             optimize_polarization, paddle_unitary, rf_power_objective,
                             spsa_iterate, write_trace_csv)

volts = st.floats(0.0, V_MAX)


def _haar_su2(rng):
    q = rng.standard_normal(4)
    a, b = complex(q[0], q[1]), complex(q[2], q[3])
    n = math.hypot(abs(a), abs(b))
    a, b = a / n, b / n
    return np.array([[a, b], [-np.conj(b), np.conj(a)]])


def test_zero_volts_is_identity():
    assert np.allclose(paddle_unitary(PaddleState((0, 0, 0, 0))), np.eye(2))


@given(st.tuples(volts, volts, volts, volts))
def test_paddle_is_unitary(v):
    assert is_unitary(paddle_unitary(PaddleState(v)))


def test_half_wave_plates():
    # V_pi on a 0 degree plate: pure phase, no coupling
    u = paddle_unitary(PaddleState((V_PI, 0, 0, 0)))
    assert np.allclose(u, np.diag([-1j, 1j]))
    # V_pi on a 45 degree plate swaps x and y
    u = paddle_unitary(PaddleState((0, V_PI, 0, 0)))
    assert abs(u[0, 0]) == pytest.approx(0.0, abs=1e-12)
    assert abs(u[1, 0]) == pytest.approx(1.0)


def test_voltage_range():
    with pytest.raises(ValueError):
        PaddleState((V_MAX + 0.1, 0, 0, 0))
    with pytest.raises(ValueError):
        PaddleState((-0.1, 0, 0, 0))
    with pytest.raises(ValueError):
        PaddleState((0, 0, 0))
    assert PaddleState.clamped([-1, 6, 1, 2]).voltages == (0.0, V_MAX, 1.0, 2.0)


def test_objective_aligned_and_orthogonal():
    zero = PaddleState((0, 0, 0, 0))
    assert JonesObjective(identity_sop(), r_max=3.0)(zero) == pytest.approx(3.0)
    assert JonesObjective(rotation(math.pi, [1, 0, 0]), r_max=3.0)(zero) == pytest.approx(0.0, abs=1e-12)


@given(st.floats(0.0, math.pi / 2))
def test_objective_follows_malus_law(theta):
    # a physical rotation by theta is a 2 theta rotation on the sphere
    obj = JonesObjective(rotation(2 * theta, [0, 1, 0]), r_max=2.0)
    assert obj(PaddleState((0, 0, 0, 0))) == pytest.approx(2.0 * math.cos(theta) ** 2, abs=1e-12)


def test_noisy_objective_needs_rng():
    with pytest.raises(ValueError):
        JonesObjective(identity_sop(), noise=0.01)


def test_rf_power_objective():
    x = np.full(10_000, 2.0)
    assert rf_power_objective(x, floor=1.0) == pytest.approx(3.0)
    noisy = [rf_power_objective(x, 1.0, 0.1, RngStream(i)) for i in range(200)]
    assert np.mean(noisy) == pytest.approx(3.0, abs=0.03)
    with pytest.raises(ValueError):
        rf_power_objective(x[:9999], floor=0.0)


def test_spsa_perturbation_is_rademacher():
    seen = []

    def record(state):
        seen.append(state.array)
        return 0.0

    cfg = SpsaConfig()
    state = PaddleState.neutral()
    rng = RngStream(0)
    for k in range(1, 50):
        seen.clear()
        spsa_iterate(state, k, cfg, record, rng)
        c_k = cfg.c / k ** cfg.gamma
        delta = (seen[0] - seen[1]) / (2 * c_k)
        assert np.allclose(np.abs(delta), 1.0)


def test_spsa_flat_objective_does_not_move():
    state = PaddleState.neutral()
    new, rp, rm = spsa_iterate(state, 1, SpsaConfig(), lambda s: 1.0, RngStream(0))
    assert new == state and rp == rm == 1.0


@given(st.integers(1, 1000), st.floats(-1, 1), st.floats(-1, 1))
def test_spsa_step_bounded_by_gain(k, rp, rm):
    cfg = SpsaConfig()
    values = iter([rp, rm])
    state = PaddleState.neutral()
    new, _, _ = spsa_iterate(state, k, cfg, lambda s: next(values), RngStream(k))
    a_k = cfg.a / (cfg.A + k) ** cfg.alpha
    c_k = cfg.c / k ** cfg.gamma
    bound = a_k * abs(rp - rm) / (2 * c_k)
    assert np.all(np.abs(new.array - state.array) <= bound + 1e-12)


def test_spsa_rejects_zero_index():
    with pytest.raises(ValueError):
        spsa_iterate(PaddleState.neutral(), 0, SpsaConfig(), lambda s: 0.0, RngStream(0))


def test_spsa_converges_on_quadratic():
    target = np.array([2.0, 3.0, 1.5, 4.0])
    cfg = SpsaConfig(n_iter=200, measurement_noise=0.0)
    final, _ = optimize_polarization(PaddleState.neutral(),
                                     lambda s: -float(np.sum((s.array - target) ** 2)),
                                     cfg, RngStream(1))
    assert np.linalg.norm(final.array - target) <= 0.01 * np.linalg.norm(target)


def test_optimum_start_stays_near_r_max():
    start = PaddleState.neutral()
    channel = paddle_unitary(start).conj().T
    rng = RngStream(2)
    obj = JonesObjective(channel, floor=0.25, noise=0.01, rng=rng)
    assert obj.true_value(start) == pytest.approx(1.0)
    final, trace = optimize_polarization(start, obj, SpsaConfig(), rng)
    assert obj.true_value(final) >= 0.95


def test_spsa_improves_random_misalignments():
    rng = RngStream(3)
    improved = 0
    for _ in range(100):
        obj = JonesObjective(_haar_su2(rng), floor=0.25, noise=0.01, rng=rng)
        _, trace = optimize_polarization(PaddleState.neutral(), obj, SpsaConfig(), rng)
        improved += trace[-1].r_true >= trace[0].r_true
    assert improved >= 95


def test_noiseless_trace_best_never_below_start():
    rng = RngStream(4)
    obj = JonesObjective(_haar_su2(rng))
    _, trace = optimize_polarization(PaddleState.neutral(), obj, SpsaConfig(measurement_noise=0.0), rng)
    r = np.array([row.r for row in trace])
    best = np.maximum.accumulate(r)
    assert np.all(np.diff(best) >= 0)
    assert best[-1] >= r[0]
    assert len(trace) == SpsaConfig().n_iter + 1


def test_config_validation():
    with pytest.raises(ValueError):
        SpsaConfig(a=0)
    with pytest.raises(ValueError):
        SpsaConfig(n_iter=0)


def test_trace_csv(tmp_path):
    rng = RngStream(5)
    _, trace = optimize_polarization(PaddleState.neutral(), JonesObjective(_haar_su2(rng)),
                                     SpsaConfig(n_iter=5), rng)
    path = tmp_path / "trace.csv"
    write_trace_csv(path, trace)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iteration", "R", "v1", "v2", "v3", "v4"]
    assert [int(r[0]) for r in rows[1:]] == list(range(6))
    assert float(rows[-1][1]) == pytest.approx(trace[-1].r, rel=1e-8)
