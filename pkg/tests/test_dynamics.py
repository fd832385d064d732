import json
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ringbasins.census import sample_uniform_diffstate
from ringbasins.coupling import CouplingSpec, get_coupling, wrap_angle
from ringbasins.dynamics import (
    DiffState,
    IntegrationError,
    IntegrationOptions,
    RingState,
    TwistedState,
    WindingUndefined,
    energy,
    energy_theta,
    eta_to_theta,
    integrate,
    rhs_eta,
    rhs_theta,
    theta_to_eta,
    winding_from_partial_sum,
    winding_number,
)
from ringbasins.seeding import trial_seed

PI = math.pi
rng = np.random.default_rng(20261015)


def random_theta(n):
    return RingState.wrapped(rng.uniform(-PI, PI, n))


# -- coordinates ---------------------------------------------------------------


def test_theta_to_eta_examples():
    assert np.array_equal(theta_to_eta(RingState(np.zeros(4))).eta, np.zeros(4))
    eta = theta_to_eta(TwistedState(10, 2).ring_state()).eta
    assert np.allclose(eta, 2 * PI / 5, atol=1e-14)
    d = theta_to_eta(RingState([0.0, PI / 2, PI, -PI / 2]))
    assert np.allclose(d.eta, PI / 2, atol=1e-15)
    assert d.eta.sum() == pytest.approx(2 * PI, abs=1e-12)


def test_eta_to_theta_examples():
    assert np.array_equal(eta_to_theta(DiffState(np.zeros(5)), 0.0).theta, np.zeros(5))
    th = eta_to_theta(TwistedState(8, 1).diff_state(), 0.0).theta
    expected = wrap_angle(2 * PI * np.arange(8) / 8)
    assert np.allclose(th, expected, atol=1e-14)


def test_eta_theta_round_trip():
    for _ in range(100):
        d = theta_to_eta(random_theta(int(rng.integers(3, 40))))
        back = theta_to_eta(eta_to_theta(d, float(rng.uniform(-PI, PI))))
        assert np.max(np.abs(wrap_angle(back.eta - d.eta))) < 1e-12


def test_eta_to_theta_rejects_bad_sum():
    with pytest.raises(ValueError):
        eta_to_theta(np.array([0.1, 0.2, 0.3]))


def test_state_validation():
    with pytest.raises(ValueError):
        RingState([0.0, 4.0])
    with pytest.raises(ValueError):
        DiffState([0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        TwistedState(10, 5)
    assert TwistedState(11, 5).diff_state().n == 11


# -- vector fields ---------------------------------------------------------------


@pytest.mark.parametrize("name", ["sawtooth", "half-sine", "tanh-pi", "sine"])
def test_rhs_vanishes_at_twisted_states(name):
    c = get_coupling(name)
    for n, q in [(5, 1), (10, 3), (12, -5)]:
        tw = TwistedState(n, q)
        assert np.max(np.abs(rhs_theta(tw.ring_state(0.3), c))) < 1e-12
        assert np.max(np.abs(rhs_eta(tw.diff_state(), c))) < 1e-12


def test_rhs_theta_example():
    out = rhs_theta(RingState([0.0, 1.0, 0.0]), get_coupling("sawtooth"))
    assert np.allclose(out, [1.0, -2.0, 1.0], atol=1e-15)


def test_rhs_eta_example():
    out = rhs_eta(DiffState([1.0, -1.0, 0.0]), get_coupling("sawtooth"))
    assert np.allclose(out, [-3.0, 3.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("name", ["sawtooth", "half-sine", "tanh-pi", "sine"])
def test_rhs_zero_sum_and_chain_rule(name):
    c = get_coupling(name)
    for _ in range(100):
        s = random_theta(int(rng.integers(3, 30)))
        rt = rhs_theta(s, c)
        re = rhs_eta(theta_to_eta(s), c)
        assert abs(rt.sum()) < 1e-12
        assert abs(re.sum()) < 1e-12
        assert np.max(np.abs(re - (np.roll(rt, -1) - rt))) < 1e-12


@pytest.mark.parametrize("name", ["sawtooth", "half-sine", "tanh-pi", "sine"])
def test_rhs_theta_is_minus_energy_gradient(name):
    c = get_coupling(name)
    h = 1e-6
    for _ in range(100):
        th = random_theta(20).theta
        grad = np.empty_like(th)
        for i in range(th.size):
            e = np.zeros_like(th)
            e[i] = h
            grad[i] = (energy_theta(th + e, c) - energy_theta(th - e, c)) / (2 * h)
        rt = rhs_theta(th, c)
        assert np.max(np.abs(rt + grad)) <= 1e-5 * np.max(np.abs(rt))


# -- winding and energy -------------------------------------------------------------


def test_winding_examples():
    assert winding_number(np.zeros(6)) == 0
    assert winding_number(TwistedState(10, 2).diff_state()) == 2
    d = DiffState([2.0, 2.0, 2.0, wrap_angle(-6.0)])
    assert d.eta[3] == pytest.approx(0.2832, abs=1e-4)
    assert winding_number(d) == 1


def test_winding_partial_sum_form_agrees():
    for _ in range(500):
        d = theta_to_eta(random_theta(int(rng.integers(3, 60))))
        assert winding_number(d) == winding_from_partial_sum(d)


def test_winding_undefined_on_boundary():
    with pytest.raises(WindingUndefined):
        winding_number(np.array([PI, -PI / 2, -PI / 2]))


def test_energy_examples():
    for name in ["sawtooth", "half-sine", "tanh-pi", "sine"]:
        assert energy(np.zeros(7), get_coupling(name)) == 0.0
    saw = get_coupling("sawtooth")
    for n, q in [(10, 1), (10, 4), (33, -7)]:
        assert energy(TwistedState(n, q).diff_state(), saw) == pytest.approx(2 * PI**2 * q * q / n, rel=1e-12)


def test_energy_bounded_below_by_twisted_state():
    saw = get_coupling("sawtooth")
    for _ in range(200):
        d = theta_to_eta(random_theta(15))
        q = winding_number(d)
        assert energy(d, saw) >= 2 * PI**2 * q * q / 15 - 1e-12


# -- integration --------------------------------------------------------------------


def test_integrate_twisted_state_is_immediately_converged():
    rec = integrate(TwistedState(6, 1).diff_state(), get_coupling("sawtooth"))
    assert rec.converged and rec.at_twisted
    assert rec.steps_taken == 0
    assert rec.times == [0.0]


def test_integrate_small_perturbation_returns_to_sync():
    base = np.zeros(6)
    dth = 0.01 * np.array([1, -1, 0.5, 0.25, -0.75, 0.0])
    eta0 = base + (np.roll(dth, -1) - dth)
    eta0 *= 0.01 / np.max(np.abs(eta0))
    rec = integrate(eta0, get_coupling("sawtooth"))
    assert rec.converged and rec.at_twisted
    assert set(rec.winding) == {0}
    assert np.max(np.abs(rec.final_state)) < 1e-5


def _uniform_start(n, seed, i):
    return sample_uniform_diffstate(n, int(trial_seed(seed, i)))


def test_random_half_sine_trajectories_conserve_winding():
    c = get_coupling("half-sine")
    for i in range(100):
        d0 = _uniform_start(20, 11, i)
        q0 = winding_number(d0)
        rec = integrate(d0, c, IntegrationOptions(stride=5))
        assert rec.converged and rec.at_twisted
        assert rec.final_winding == q0
        assert all(q == q0 for q in rec.winding)
        assert rec.max_abs_eta < PI
        assert rec.wrap_events == 0
        e = np.array(rec.energies)
        assert np.all(np.diff(e) <= 1e-9)


def test_integrator_agrees_with_scipy():
    c = get_coupling("tanh-pi")
    d0 = _uniform_start(12, 5, 0)
    rec = integrate(d0, c, IntegrationOptions(t_max=5.0, eps_conv=0.0, atol=1e-12, rtol=1e-10))
    ref = solve_ivp(lambda t, y: rhs_eta(y, c), (0, 5.0), d0.eta, method="DOP853", rtol=1e-12, atol=1e-12)
    assert rec.times[-1] == pytest.approx(5.0)
    assert np.max(np.abs(rec.final_state - ref.y[:, -1])) < 1e-8


def test_sine_can_change_winding():
    c = get_coupling("sine")
    for i in range(1000):
        d0 = _uniform_start(20, 3, i)
        rec = integrate(d0, c)
        if rec.final_winding != winding_number(d0):
            assert rec.wrap_events > 0
            return
    pytest.fail("no sine trajectory out of 1000 changed winding")


def _start_inside_small_region(n, seed):
    r = np.random.default_rng(seed)
    while True:
        head = r.uniform(-PI / 2, PI / 2, n - 1)
        last = wrap_angle(-head.sum())
        if abs(last) < PI / 2:
            return DiffState(np.append(head, last))


def test_sine_conserves_winding_inside_half_pi_region():
    c = get_coupling("sine")
    for i in range(100):
        d0 = _start_inside_small_region(20, i)
        rec = integrate(d0, c, IntegrationOptions(stride=3))
        assert all(q == winding_number(d0) for q in rec.winding)
        assert max(np.max(np.abs(s)) for s in rec.states) < PI / 2


def test_stride_and_final_snapshot():
    rec = integrate(_uniform_start(10, 1, 0), get_coupling("sawtooth"), IntegrationOptions(stride=7))
    assert len(rec.times) >= 2
    assert rec.converged
    assert np.max(np.abs(rhs_eta(rec.final_state, get_coupling("sawtooth")))) < 1e-8


def test_t_max_stops_without_convergence():
    rec = integrate(_uniform_start(10, 1, 0), get_coupling("sawtooth"), IntegrationOptions(t_max=1.0))
    assert not rec.converged
    assert rec.times[-1] == pytest.approx(1.0)


def test_nan_raises_with_partial_record():
    def bad(x):
        return np.where(np.abs(x) > 0.3, np.nan, x)

    c = CouplingSpec("bad", bad, np.ones_like, lambda x: 0.5 * x * x)
    eta0 = np.array([0.2, -0.2, 0.1, -0.1])
    c_ok = integrate(eta0, c)  # stays in |eta| < 0.3, fine
    assert c_ok.converged
    with pytest.raises(IntegrationError) as exc:
        integrate(np.array([1.0, -1.0, 0.5, -0.5]), c)
    assert exc.value.record is not None


def test_record_serialization(tmp_path):
    rec = integrate(_uniform_start(5, 2, 0), get_coupling("half-sine"), IntegrationOptions(stride=10))
    meta, data = rec.write(tmp_path / "traj")
    m = json.loads(meta.read_text())
    assert m["converged"] and m["n"] == 5
    lines = data.read_text().splitlines()
    assert lines[0] == "t,eta_1,eta_2,eta_3,eta_4,eta_5,E,q"
    assert len(lines) == len(rec.times) + 1
