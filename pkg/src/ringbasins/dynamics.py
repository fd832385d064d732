"""Ring states, vector fields, winding number, energy and time integration.

Phases ``theta`` live on the n-torus; phase differences are
``eta_i = wrap(theta_{i+1} - theta_i)`` with cyclic indices.  The flow in
eta coordinates is the discrete Laplacian of ``f(eta)`` around the cycle.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from .coupling import TWO_PI, CouplingSpec, wrap_angle

logger = logging.getLogger(__name__)

SUM_TOL = 1e-9
BOUNDARY_TOL = 1e-12


class WindingUndefined(ValueError):
    """Some phase difference sits on the basin boundary |eta_i| = pi."""


class IntegrationError(RuntimeError):
    def __init__(self, message: str, record: "TrajectoryRecord | None" = None):
        super().__init__(message)
        self.record = record


# -- states -------------------------------------------------------------------


@dataclass(frozen=True)
class RingState:
    theta: np.ndarray

    def __post_init__(self):
        th = np.array(self.theta, dtype=np.float64)
        if th.ndim != 1 or th.size == 0:
            raise ValueError("RingState: theta must be a non-empty 1-d array")
        if not np.all((th > -math.pi) & (th <= math.pi)):
            raise ValueError("RingState: angles must lie in (-pi, pi]")
        object.__setattr__(self, "theta", th)

    @classmethod
    def wrapped(cls, theta: ArrayLike) -> "RingState":
        return cls(wrap_angle(np.asarray(theta, dtype=np.float64)))

    @property
    def n(self) -> int:
        return self.theta.size


@dataclass(frozen=True)
class DiffState:
    eta: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=np.float64)
        if eta.ndim != 1 or eta.size == 0:
            raise ValueError("DiffState: eta must be a non-empty 1-d array")
        if not np.all((eta > -math.pi) & (eta <= math.pi)):
            raise ValueError("DiffState: phase differences must lie in (-pi, pi]")
        s = float(np.sum(eta))
        if abs(s - TWO_PI * round(s / TWO_PI)) > SUM_TOL:
            raise ValueError(f"DiffState: sum of eta = {s!r} is not a multiple of 2*pi")
        object.__setattr__(self, "eta", eta)

    @property
    def n(self) -> int:
        return self.eta.size


@dataclass(frozen=True)
class TwistedState:
    n: int
    q: int

    def __post_init__(self):
        if self.n < 1 or not abs(self.q) < self.n / 2:
            raise ValueError(f"TwistedState: need |q| < n/2, got n={self.n}, q={self.q}")

    @property
    def twist(self) -> float:
        return TWO_PI * self.q / self.n

    def diff_state(self) -> DiffState:
        return DiffState(np.full(self.n, self.twist))

    def ring_state(self, anchor: float = 0.0) -> RingState:
        return RingState.wrapped(anchor + self.twist * np.arange(self.n))


def _eta(d: DiffState | ArrayLike) -> np.ndarray:
    return d.eta if isinstance(d, DiffState) else np.asarray(d, dtype=np.float64)


def _theta(s: RingState | ArrayLike) -> np.ndarray:
    return s.theta if isinstance(s, RingState) else np.asarray(s, dtype=np.float64)


# -- coordinates --------------------------------------------------------------


def theta_to_eta(s: RingState | ArrayLike) -> DiffState:
    th = _theta(s)
    return DiffState(wrap_angle(np.roll(th, -1) - th))


def eta_to_theta(d: DiffState | ArrayLike, anchor: float = 0.0) -> RingState:
    """Section of the quotient map: theta_1 = anchor, then accumulate eta."""
    eta = _eta(d)
    s = float(np.sum(eta))
    if abs(s - TWO_PI * round(s / TWO_PI)) > SUM_TOL:
        raise ValueError("eta_to_theta: sum of eta violates the 2*pi*Z constraint")
    theta = np.empty_like(eta)
    theta[0] = wrap_angle(anchor)
    for i in range(eta.size - 1):
        theta[i + 1] = wrap_angle(theta[i] + eta[i])
    return RingState(theta)


def diffs_batch(theta: np.ndarray) -> np.ndarray:
    """Wrapped cyclic differences along the last axis."""
    return wrap_angle(np.roll(theta, -1, axis=-1) - theta)


# -- vector fields and energy -------------------------------------------------


def rhs_theta(s: RingState | ArrayLike, c: CouplingSpec) -> np.ndarray:
    th = _theta(s)
    return c.f(np.roll(th, -1) - th) + c.f(np.roll(th, 1) - th)


def rhs_eta(d: DiffState | ArrayLike, c: CouplingSpec) -> np.ndarray:
    g = c.f(_eta(d))
    dg = np.roll(g, -1) - g
    return dg - np.roll(dg, 1)


def energy(d: DiffState | ArrayLike, c: CouplingSpec) -> float:
    return float(np.sum(c.F(_eta(d))))


def energy_theta(s: RingState | ArrayLike, c: CouplingSpec) -> float:
    th = _theta(s)
    return float(np.sum(c.F(np.roll(th, -1) - th)))


# -- winding number -----------------------------------------------------------


def winding_number(d: DiffState | ArrayLike) -> int:
    """Nearest integer to sum(eta) / 2pi.

    Raises :class:`WindingUndefined` when some |eta_i| >= pi - 1e-12.
    """
    eta = _eta(d)
    if np.any(np.abs(eta) >= math.pi - BOUNDARY_TOL):
        raise WindingUndefined("winding number undefined: some |eta_i| is at pi")
    return int(np.rint(np.sum(eta) / TWO_PI))


def winding_from_partial_sum(d: DiffState | ArrayLike) -> int:
    """Same integer from the first n-1 differences only."""
    eta = _eta(d)
    return int(np.rint(np.sum(eta[:-1]) / TWO_PI))


def winding_numbers(eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized winding over the last axis; returns (q, valid)."""
    valid = np.all(np.abs(eta) < math.pi - BOUNDARY_TOL, axis=-1)
    q = np.rint(np.sum(eta, axis=-1) / TWO_PI).astype(np.int64)
    return q, valid


# -- integration --------------------------------------------------------------


@dataclass
class IntegrationOptions:
    atol: float = 1e-9
    rtol: float = 1e-7
    t_max: float = 1e5
    eps_conv: float = 1e-8
    stride: int = 1
    proximity_tol: float = 1e-5
    max_steps: int = 50_000_000
    h0: float | None = None
    # None: 2.5 / (4 max f'), inside the real stability interval of the scheme
    h_max: float | None = None


@dataclass
class TrajectoryRecord:
    n: int
    coupling_id: str
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    winding: list[int | None] = field(default_factory=list)
    converged: bool = False
    steps_taken: int = 0
    rejected_steps: int = 0
    residual: float = math.inf
    at_twisted: bool = False
    wrap_events: int = 0
    max_abs_eta: float = 0.0

    def snapshot(self, t: float, eta: np.ndarray, c: CouplingSpec) -> None:
        self.times.append(float(t))
        self.states.append(eta.copy())
        self.energies.append(energy(eta, c))
        try:
            self.winding.append(winding_number(eta))
        except WindingUndefined:
            self.winding.append(None)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def initial_winding(self) -> int | None:
        return self.winding[0]

    @property
    def final_winding(self) -> int | None:
        return self.winding[-1]

    def metadata(self) -> dict:
        return {
            "n": self.n,
            "coupling": self.coupling_id,
            "snapshots": len(self.times),
            "final_time": self.times[-1] if self.times else None,
            "converged": self.converged,
            "at_twisted": self.at_twisted,
            "steps_taken": self.steps_taken,
            "rejected_steps": self.rejected_steps,
            "residual": self.residual,
            "wrap_events": self.wrap_events,
            "max_abs_eta": self.max_abs_eta,
            "initial_winding": self.initial_winding,
            "final_winding": self.final_winding,
        }

    def write(self, prefix: str | Path) -> tuple[Path, Path]:
        """Write ``<prefix>.json`` (metadata) and ``<prefix>.csv`` (snapshots)."""
        prefix = Path(prefix)
        meta_path = prefix.with_suffix(".json")
        csv_path = prefix.with_suffix(".csv")
        meta_path.write_text(json.dumps(self.metadata(), indent=2) + "\n")
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *[f"eta_{i + 1}" for i in range(self.n)], "E", "q"])
            for t, eta, e, q in zip(self.times, self.states, self.energies, self.winding):
                w.writerow([repr(t), *map(repr, eta.tolist()), repr(e), "" if q is None else q])
        return meta_path, csv_path


# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def _rms(x: np.ndarray) -> float:
    return math.sqrt(float(np.dot(x, x)) / x.size)


def integrate(
    d0: DiffState | ArrayLike,
    c: CouplingSpec,
    opts: IntegrationOptions | None = None,
) -> TrajectoryRecord:
    """Integrate the eta flow with adaptive Dormand-Prince 5(4).

    Stops when ``max|rhs_eta| < eps_conv`` (converged) or at ``t_max``.
    The state is re-wrapped into (-pi, pi] after every accepted step.
    """
    opts = opts or IntegrationOptions()
    y = np.array(_eta(d0), dtype=np.float64)
    n = y.size
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite initial state")
    fn = c.f

    def rhs(v: np.ndarray) -> np.ndarray:
        g = fn(v)
        dg = np.empty_like(g)
        dg[:-1] = g[1:] - g[:-1]
        dg[-1] = g[0] - g[-1]
        out = np.empty_like(g)
        out[1:] = dg[1:] - dg[:-1]
        out[0] = dg[0] - dg[-1]
        return out

    rec = TrajectoryRecord(n=n, coupling_id=c.id)
    rec.max_abs_eta = float(np.max(np.abs(y)))
    t = 0.0
    rec.snapshot(t, y, c)
    k1 = rhs(y)
    rec.residual = float(np.max(np.abs(k1)))
    if rec.residual < opts.eps_conv:
        return _finish(rec, t, y, c, opts, converged=True)

    atol, rtol = opts.atol, opts.rtol
    if opts.h0 is not None:
        h = opts.h0
    else:
        sc = atol + rtol * np.abs(y)
        d0n, d1n = _rms(y / sc), _rms(k1 / sc)
        h0 = 1e-6 if d0n < 1e-5 or d1n < 1e-5 else 0.01 * d0n / d1n
        d2n = _rms((rhs(y + h0 * k1) - k1) / sc) / h0
        h1 = max(1e-6, h0 * 1e-3) if max(d1n, d2n) <= 1e-15 else (0.01 / max(d1n, d2n)) ** 0.2
        h = min(100 * h0, h1)

    h_max = opts.h_max if opts.h_max is not None else _default_h_max(c)
    h = min(h, h_max)
    k = [k1] + [None] * 6
    since_snap = 0
    rejected_last = False
    while True:
        if t >= opts.t_max:
            return _finish(rec, t, y, c, opts, converged=False, force_snap=since_snap > 0)
        if rec.steps_taken >= opts.max_steps:
            return _finish(rec, t, y, c, opts, converged=False, force_snap=since_snap > 0)
        h = min(h, opts.t_max - t)
        if h <= 1e-14 * max(1.0, abs(t)):
            rec.snapshot(t, y, c)
            raise IntegrationError(f"step size underflow at t={t:.6g} (h={h:.3g})", rec)

        for s in range(1, 6):
            acc = y.copy()
            for j, a in enumerate(_A[s]):
                if a:
                    acc += (h * a) * k[j]
            k[s] = rhs(acc)
        y_new = y.copy()
        for j, b in enumerate(_A[6]):
            if b:
                y_new += (h * b) * k[j]
        k[6] = rhs(y_new)
        err = np.zeros_like(y)
        for j, e in enumerate(_E):
            if e:
                err += e * k[j]
        err *= h
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = _rms(err / scale)

        if not np.all(np.isfinite(y_new)) or not math.isfinite(err_norm):
            rec.snapshot(t, y, c)
            raise IntegrationError(f"NaN in state at t={t:.6g}", rec)

        if err_norm <= 1.0:
            t += h
            rec.steps_taken += 1
            amax = float(np.max(np.abs(y_new)))
            rec.max_abs_eta = max(rec.max_abs_eta, amax)
            if amax > math.pi:
                wrapped = int(np.count_nonzero(np.abs(y_new) > math.pi))
                rec.wrap_events += wrapped
                if c.satisfies_h4:
                    logger.warning("eta left (-pi, pi] at t=%.6g under an H4 coupling", t)
                y_new = np.asarray(wrap_angle(y_new))
            y = y_new
            k[0] = k[6]
            since_snap += 1
            if since_snap >= opts.stride:
                rec.snapshot(t, y, c)
                since_snap = 0
            rec.residual = float(np.max(np.abs(k[0])))
            if rec.residual < opts.eps_conv:
                return _finish(rec, t, y, c, opts, converged=True, force_snap=since_snap > 0)
            fac = 5.0 if err_norm == 0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
            if rejected_last:
                fac = min(fac, 1.0)
            h = min(h * fac, h_max)
            rejected_last = False
        else:
            rec.rejected_steps += 1
            h *= max(0.2, 0.9 * err_norm ** -0.2)
            rejected_last = True


def _default_h_max(c: CouplingSpec) -> float:
    # the Jacobian of the eta flow has spectral radius <= 4 max f'; keeping
    # h * rho below ~2.5 damps stiff modes instead of parking them at the
    # tolerance level, which would stall the residual test
    from .coupling import probe_grid

    fmax = float(np.max(np.abs(c.f_prime(probe_grid(4001)))))
    return 2.5 / (4.0 * fmax) if fmax > 0 else math.inf


def _finish(
    rec: TrajectoryRecord,
    t: float,
    y: np.ndarray,
    c: CouplingSpec,
    opts: IntegrationOptions,
    *,
    converged: bool,
    force_snap: bool = False,
) -> TrajectoryRecord:
    if force_snap:
        rec.snapshot(t, y, c)
    rec.converged = converged
    q = rec.final_winding
    if q is not None and abs(q) < rec.n / 2:
        twist = TWO_PI * q / rec.n
        rec.at_twisted = bool(np.max(np.abs(wrap_angle(y - twist))) < opts.proximity_tol)
    return rec
