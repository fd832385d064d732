"""Coupling functions for the ring and the (H1)-(H4) validator.

Every coupling is evaluated on the circle: arguments are first wrapped into
(-pi, pi].  At +pi the value is the left limit f(pi-), which is also what the
closed forms below return when evaluated at pi.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike

TWO_PI = 2.0 * math.pi

Fn = Callable[[np.ndarray], np.ndarray]


def wrap_angle(x: ArrayLike) -> np.ndarray | float:
    """Map angles to their representative in (-pi, pi].

    Scalars in, float out; arrays in, arrays out.  Non-finite input raises
    ``ValueError``.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("wrap_angle: non-finite angle")
    r = math.pi - np.mod(math.pi - arr, TWO_PI)
    # np.mod can round up to exactly 2*pi for tiny negative inputs
    r = np.where(r <= -math.pi, r + TWO_PI, r)
    if np.ndim(x) == 0:
        return float(r)
    return r


def _wrap_fast(x: np.ndarray) -> np.ndarray:
    r = math.pi - np.mod(math.pi - x, TWO_PI)
    r[r <= -math.pi] += TWO_PI
    return r


@dataclass(frozen=True)
class CouplingSpec:
    """A coupling f together with f' and the antiderivative F, F(0) = 0.

    The callables stored here act on raw arrays; use the ``f``, ``f_prime``
    and ``F`` methods, which periodize first.
    """

    id: str
    raw_f: Fn = field(repr=False)
    raw_f_prime: Fn = field(repr=False)
    raw_F: Fn = field(repr=False)
    satisfies_h4: bool = True

    def f(self, x: ArrayLike) -> np.ndarray:
        return self.raw_f(_wrap_fast(np.array(x, dtype=np.float64, ndmin=1))).reshape(np.shape(x))

    def f_prime(self, x: ArrayLike) -> np.ndarray:
        return self.raw_f_prime(_wrap_fast(np.array(x, dtype=np.float64, ndmin=1))).reshape(np.shape(x))

    def F(self, x: ArrayLike) -> np.ndarray:
        return self.raw_F(_wrap_fast(np.array(x, dtype=np.float64, ndmin=1))).reshape(np.shape(x))


def _identity(x: np.ndarray) -> np.ndarray:
    return x.copy()


def _half_square(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * x


def _half_sin(x: np.ndarray) -> np.ndarray:
    return np.sin(0.5 * x)


def _half_sin_prime(x: np.ndarray) -> np.ndarray:
    return 0.5 * np.cos(0.5 * x)


def _half_sin_anti(x: np.ndarray) -> np.ndarray:
    return 2.0 - 2.0 * np.cos(0.5 * x)


def _sech2(x: np.ndarray) -> np.ndarray:
    return 1.0 / np.cosh(x) ** 2


def _log_cosh(x: np.ndarray) -> np.ndarray:
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def _one_minus_cos(x: np.ndarray) -> np.ndarray:
    return 1.0 - np.cos(x)


def _sawtooth() -> CouplingSpec:
    return CouplingSpec("sawtooth", _identity, np.ones_like, _half_square)


def _half_sine() -> CouplingSpec:
    return CouplingSpec("half-sine", _half_sin, _half_sin_prime, _half_sin_anti)


def _tanh() -> CouplingSpec:
    return CouplingSpec("tanh-pi", np.tanh, _sech2, _log_cosh)


def _sine() -> CouplingSpec:
    return CouplingSpec("sine", np.sin, np.cos, _one_minus_cos, satisfies_h4=False)


BUILTINS: dict[str, Callable[[], CouplingSpec]] = {
    "sawtooth": _sawtooth,
    "half-sine": _half_sine,
    "tanh-pi": _tanh,
    "sine": _sine,
}


def get_coupling(name: str) -> CouplingSpec:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown coupling {name!r}; built-ins are {sorted(BUILTINS)}") from None


def coupling_from_table(x: ArrayLike, fx: ArrayLike, id: str = "table") -> CouplingSpec:
    """Monotone cubic (PCHIP) interpolant of tabulated samples of f.

    ``satisfies_h4`` is filled in from :func:`validate_hypotheses` on the
    resulting interpolant.
    """
    from scipy.interpolate import PchipInterpolator

    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(fx, dtype=np.float64)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 4:
        raise ValueError("coupling table needs two equal-length columns with at least 4 rows")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("coupling table x column must be strictly increasing")
    if xs[0] > -math.pi + 1e-6 or xs[-1] < math.pi - 1e-6:
        raise ValueError("coupling table must cover (-pi, pi)")
    interp = PchipInterpolator(xs, ys, extrapolate=True)
    anti = interp.antiderivative()
    spec = CouplingSpec(
        id,
        _Tabulated(interp),
        _Tabulated(interp.derivative()),
        _Tabulated(anti, float(anti(0.0))),
    )
    report = validate_hypotheses(spec)
    return CouplingSpec(id, spec.raw_f, spec.raw_f_prime, spec.raw_F, report.checks["H4"].passed)


class _Tabulated:
    """Picklable wrapper around a scipy piecewise polynomial."""

    def __init__(self, poly, shift: float = 0.0):
        self.poly = poly
        self.shift = shift

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.poly(x)) - self.shift


def load_coupling_table(path: str | Path, id: str | None = None) -> CouplingSpec:
    """Read a two-column CSV ``x,f(x)`` with a header line."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: expected a header line and data rows")
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed coupling table ({exc})") from None
    return coupling_from_table(data[:, 0], data[:, 1], id or path.stem)


# -- validation ---------------------------------------------------------------


@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    worst: float
    witness: float | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    coupling_id: str
    probes: int
    checks: dict[str, HypothesisCheck]
    jump_at_pi: float
    has_jump: bool

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def lines(self) -> list[str]:
        out = [f"coupling {self.coupling_id} ({self.probes} probes)"]
        for c in self.checks.values():
            status = "PASS" if c.passed else "FAIL"
            w = "" if c.witness is None else f" at x={c.witness:.6g}"
            out.append(f"  {c.name:<8} {status}  worst={c.worst:.3e}{w}  {c.detail}")
        jump = "jump" if self.has_jump else "continuous"
        out.append(f"  periodization at +-pi: {jump} (f(pi-) - f(-pi+) = {self.jump_at_pi:.6g})")
        return out


ODD_TOL = 1e-12
ANTIDERIV_RTOL = 1e-6
DERIV_RTOL = 1e-4


def probe_grid(probes: int) -> np.ndarray:
    """Uniform midpoints of (-pi, pi); the ends sit half a step inside."""
    step = TWO_PI / probes
    return -math.pi + (np.arange(probes) + 0.5) * step


def validate_hypotheses(spec: CouplingSpec, probes: int = 2001) -> ValidationReport:
    """Check (H1)-(H4) and F' = f on a probe grid.

    Failures are reported, never raised.
    """
    if probes < 3:
        raise ValueError("validate_hypotheses: probes must be >= 3")
    x = probe_grid(probes)
    half_step = math.pi / probes
    h = min(1e-5, 0.5 * half_step)

    fx = spec.f(x)
    fpx = spec.f_prime(x)
    f_scale = max(float(np.max(np.abs(fx))), 1e-300)
    checks: dict[str, HypothesisCheck] = {}

    # H1: finite derivative that agrees with a central difference of f
    fd = (spec.f(x + h) - spec.f(x - h)) / (2 * h)
    fp_scale = max(float(np.max(np.abs(fpx[np.isfinite(fpx)]), initial=0.0)), 1e-300)
    finite = bool(np.all(np.isfinite(fpx)))
    err = np.abs(fd - fpx) / fp_scale if finite else np.full_like(x, np.inf)
    i = int(np.argmax(err))
    checks["H1"] = HypothesisCheck(
        "H1", finite and float(err[i]) < DERIV_RTOL, float(err[i]), float(x[i]),
        "f' finite and matches central difference of f",
    )

    odd = np.abs(fx + spec.f(-x))
    i = int(np.argmax(odd))
    checks["H2"] = HypothesisCheck("H2", float(odd[i]) < ODD_TOL, float(odd[i]), float(x[i]), "|f(x) + f(-x)|")

    per = np.abs(spec.f(x + TWO_PI) - fx)
    i = int(np.argmax(per))
    checks["H3"] = HypothesisCheck("H3", float(per[i]) < ODD_TOL, float(per[i]), float(x[i]), "|f(x + 2pi) - f(x)|")

    i = int(np.argmin(fpx))
    checks["H4"] = HypothesisCheck("H4", bool(np.all(fpx > 0)), float(fpx[i]), float(x[i]), "min f'(x)")

    Fx = spec.F(x)
    even = max(abs(float(spec.F(np.array(0.0)))), float(np.max(np.abs(Fx - spec.F(-x)))))
    checks["F-even"] = HypothesisCheck("F-even", even < ODD_TOL, even, None, "|F(0)| and |F(x) - F(-x)|")

    dF = (spec.F(x + h) - spec.F(x - h)) / (2 * h)
    rel = np.abs(dF - fx) / f_scale
    i = int(np.argmax(rel))
    checks["F'=f"] = HypothesisCheck(
        "F'=f", float(rel[i]) < ANTIDERIV_RTOL, float(rel[i]), float(x[i]), "central difference of F vs f"
    )

    jump = float(spec.f(np.array(math.pi)) - spec.raw_f(np.array(-math.pi + 1e-15)))
    return ValidationReport(spec.id, probes, checks, jump, abs(jump) > 1e-9)
