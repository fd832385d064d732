import math

import numpy as np
import pytest

from ringbasins.coupling import get_coupling
from ringbasins.stability import (
    MARGINAL,
    STABLE,
    UNSTABLE,
    closed_form_eigenvalues,
    numerical_jacobian,
    numerical_spectrum,
    perturbation_escapes,
    stability_table,
    twisted_spectrum,
)
from ringbasins.dynamics import TwistedState

COUPLINGS = ["sawtooth", "half-sine", "tanh-pi", "sine"]


def test_sawtooth_eigenvalues():
    for n, q in [(5, 2), (12, -5), (30, 7)]:
        r = twisted_spectrum(n, q, get_coupling("sawtooth"))
        k = np.arange(n)
        assert np.allclose(r.eigenvalues, np.sort(-4 * np.sin(np.pi * k / n) ** 2)[::-1], atol=1e-14)
        assert r.stable and r.fprime_at_twist == 1.0


def test_sine_n8_q3_is_unstable():
    r = twisted_spectrum(8, 3, get_coupling("sine"))
    assert r.fprime_at_twist == pytest.approx(math.cos(3 * math.pi / 4))
    assert r.verdict == UNSTABLE
    assert r.max_nonzero_eigenvalue > 0


def test_report_invariants():
    for name in COUPLINGS:
        for n in (3, 8, 13):
            for q, r in stability_table(n, get_coupling(name)).items():
                ev = r.eigenvalues
                assert np.all(np.diff(ev) <= 0)
                assert np.min(np.abs(ev)) < 1e-12
                assert r.stable == bool(np.all(np.delete(ev, np.argmin(np.abs(ev))) < -1e-12))


def test_closed_form_zero_mode():
    assert closed_form_eigenvalues(7, 2.5)[0] == 0.0


@pytest.mark.parametrize("name", ["sawtooth", "half-sine", "tanh-pi"])
def test_monotone_couplings_all_stable(name):
    table = stability_table(12, get_coupling(name))
    assert sorted(table) == list(range(-5, 6))
    assert all(r.verdict == STABLE for r in table.values())


def test_sine_table_n12():
    table = stability_table(12, get_coupling("sine"))
    for q, r in table.items():
        if abs(q) <= 2:
            assert r.verdict == STABLE
        elif abs(q) == 3:
            assert r.verdict == MARGINAL and not r.stable
        else:
            assert r.verdict == UNSTABLE


def test_sine_stable_iff_below_quarter():
    for n in range(3, 40):
        for q, r in stability_table(n, get_coupling("sine")).items():
            if 4 * abs(q) < n:
                assert r.verdict == STABLE
            elif 4 * abs(q) > n:
                assert r.verdict == UNSTABLE
            else:
                assert r.verdict == MARGINAL


def test_stability_table_rejects_small_n():
    with pytest.raises(ValueError):
        stability_table(2, get_coupling("sawtooth"))


def test_closed_form_matches_finite_differences():
    rng = np.random.default_rng(12)
    done = 0
    while done < 20:
        n = int(rng.integers(3, 31))
        q = int(rng.integers(-((n - 1) // 2), (n - 1) // 2 + 1))
        name = COUPLINGS[int(rng.integers(len(COUPLINGS)))]
        c = get_coupling(name)
        r = twisted_spectrum(n, q, c)
        if r.verdict == MARGINAL:
            continue
        num = numerical_spectrum(n, q, c)
        scale = np.max(np.abs(r.eigenvalues))
        assert np.max(np.abs(num - r.eigenvalues)) <= 1e-5 * scale, (n, q, name)
        done += 1


def test_numerical_jacobian_is_circulant_laplacian():
    c = get_coupling("half-sine")
    tw = TwistedState(9, 2)
    J = numerical_jacobian(tw.diff_state().eta, c)
    fp = math.cos(math.pi * 2 / 9) / 2
    L = -2 * np.eye(9) + np.roll(np.eye(9), 1, axis=1) + np.roll(np.eye(9), -1, axis=1)
    assert np.allclose(J, fp * L, atol=1e-8)


def test_perturbation_confirms_sine_verdicts():
    c = get_coupling("sine")
    # n = 12: q = 5 unstable, q = 1 stable
    assert all(perturbation_escapes(12, 5, c, seed=s) for s in range(10))
    assert not any(perturbation_escapes(12, 1, c, seed=s) for s in range(10))
