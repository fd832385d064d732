"""Linear stability of twisted states.

At eta = 2 pi q / n the Jacobian of the eta flow is f'(2 pi q / n) times the
cyclic second-difference matrix, whose eigenvalues are -4 sin^2(pi k / n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coupling import CouplingSpec
from .dynamics import IntegrationOptions, TwistedState, integrate, rhs_eta
from .seeding import normal_stream

MARGINAL_TOL = 1e-12

STABLE = "stable"
UNSTABLE = "unstable"
MARGINAL = "marginal"


@dataclass
class SpectrumReport:
    n: int
    q: int
    coupling_id: str
    fprime_at_twist: float
    eigenvalues: np.ndarray  # sorted descending; the k = 0 mode is exactly 0
    verdict: str

    @property
    def stable(self) -> bool:
        return self.verdict == STABLE

    @property
    def max_nonzero_eigenvalue(self) -> float:
        # drop one copy of the zero (rotation) mode
        ev = list(self.eigenvalues)
        ev.remove(0.0)
        return max(ev) if ev else 0.0


def closed_form_eigenvalues(n: int, fprime: float) -> np.ndarray:
    k = np.arange(n)
    ev = -4.0 * fprime * np.sin(math.pi * k / n) ** 2
    ev[0] = 0.0
    return ev


def _verdict(nonzero: np.ndarray) -> str:
    if nonzero.size == 0 or np.all(nonzero < -MARGINAL_TOL):
        return STABLE
    if np.any(nonzero > MARGINAL_TOL):
        return UNSTABLE
    return MARGINAL


def twisted_spectrum(n: int, q: int, c: CouplingSpec) -> SpectrumReport:
    """Spectrum of the linearized eta flow at the q-twisted state."""
    twist = TwistedState(n, q).twist
    fp = float(c.f_prime(np.array(twist)))
    if not math.isfinite(fp):
        raise ValueError(f"f' is undefined at 2*pi*q/n = {twist!r}")
    ev = closed_form_eigenvalues(n, fp)
    verdict = _verdict(ev[1:])
    return SpectrumReport(n, q, c.id, fp, np.sort(ev)[::-1], verdict)


def numerical_jacobian(eta: np.ndarray, c: CouplingSpec, h: float = 1e-6) -> np.ndarray:
    """Dense central-difference Jacobian of rhs_eta."""
    eta = np.asarray(eta, dtype=np.float64)
    n = eta.size
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (rhs_eta(eta + e, c) - rhs_eta(eta - e, c)) / (2 * h)
    return J


def numerical_spectrum(n: int, q: int, c: CouplingSpec, h: float = 1e-6) -> np.ndarray:
    """Eigenvalues of the finite-difference Jacobian, sorted descending."""
    J = numerical_jacobian(TwistedState(n, q).diff_state().eta, c, h)
    ev = np.linalg.eigvals(J)
    return np.sort(ev.real)[::-1]


def stability_table(n: int, c: CouplingSpec) -> dict[int, SpectrumReport]:
    """Spectrum report for every twisted state |q| < n/2."""
    if n < 3:
        raise ValueError("stability_table: n must be >= 3")
    qmax = (n - 1) // 2
    return {q: twisted_spectrum(n, q, c) for q in range(-qmax, qmax + 1)}


def perturbation_escapes(
    n: int,
    q: int,
    c: CouplingSpec,
    seed: int,
    eps: float = 1e-6,
    radius: float = 1e-2,
    t_max: float = 200.0,
) -> bool:
    """Does a random eps-perturbation of the twisted state leave the radius-ball?

    The perturbation is applied to the phases, so the eta constraint holds.
    Distance is the max norm on eta.
    """
    base = TwistedState(n, q).diff_state().eta
    z = normal_stream(seed, n)
    dtheta = eps * z / np.max(np.abs(z))
    eta0 = base + (np.roll(dtheta, -1) - dtheta)
    rec = integrate(eta0, c, IntegrationOptions(t_max=t_max, eps_conv=1e-14))
    dev = max(float(np.max(np.abs(s - base))) for s in rec.states)
    return dev > radius
