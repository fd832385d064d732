"""Basin measures of the twisted states.

Because the winding number is conserved for monotone couplings, the basin
of the q-twisted state is (up to a null set) the set of initial conditions
with winding q.  Its measure is the probability that the nearest integer to
a sum of n-1 independent uniform(-1/2, 1/2] variables equals q.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial

import numpy as np

from .coupling import TWO_PI, CouplingSpec, validate_hypotheses
from .dynamics import (
    BOUNDARY_TOL,
    DiffState,
    IntegrationError,
    IntegrationOptions,
    integrate,
    winding_numbers,
)
from .seeding import trial_seed, uniform_stream

logger = logging.getLogger(__name__)

EXACT_MAX_N = 1000
# censuses attach the exact column automatically only up to this size
CENSUS_EXACT_MAX_N = 200
CHUNK_ELEMENTS = 1 << 22


# -- sampling -----------------------------------------------------------------


def _diffs_from_uniforms(u: np.ndarray) -> np.ndarray:
    """Map uniforms in [0, 1) of shape (..., n-1) to eta of shape (..., n)."""
    head = math.pi - TWO_PI * u  # (-pi, pi]
    s = np.sum(head, axis=-1, keepdims=True)
    last = math.pi - np.mod(math.pi + s, TWO_PI)
    last[last <= -math.pi] += TWO_PI
    return np.concatenate([head, last], axis=-1)


def sample_diffstates(n: int, seeds: np.ndarray) -> np.ndarray:
    """Uniform eta samples, one row per stream state in ``seeds``.

    Rows landing within 1e-12 of the boundary are redrawn from the next block
    of the same stream; the redraw is recorded by :func:`_sample_block`.
    """
    eta, _ = _sample_block(n, np.asarray(seeds, dtype=np.uint64))
    return eta


def _sample_block(n: int, seeds: np.ndarray) -> tuple[np.ndarray, int]:
    m = n - 1
    eta = _diffs_from_uniforms(uniform_stream(seeds, m))
    bad = np.any(np.abs(eta) >= math.pi - BOUNDARY_TOL, axis=-1)
    rejections = 0
    attempt = 1
    while np.any(bad):
        idx = np.flatnonzero(bad)
        rejections += idx.size
        eta[idx] = _diffs_from_uniforms(uniform_stream(seeds[idx], m, offset=attempt * m))
        bad[idx] = np.any(np.abs(eta[idx]) >= math.pi - BOUNDARY_TOL, axis=-1)
        attempt += 1
    return eta, rejections


def sample_uniform_diffstate(n: int, seed: int) -> DiffState:
    """A uniformly random point of the torus in eta coordinates.

    The first n-1 differences are i.i.d. uniform on (-pi, pi] and the last
    closes the cycle.  ``seed`` is the stream state, so
    ``sample_uniform_diffstate(n, trial_seed(master, i))`` is trial ``i`` of a
    census with master seed ``master``.
    """
    if n < 2:
        raise ValueError("sample_uniform_diffstate: n must be >= 2")
    eta, _ = _sample_block(n, np.array([seed], dtype=np.uint64))
    return DiffState(eta[0])


# -- exact oracles --------------------------------------------------------------


def _irwin_hall_cdf_scaled(m: int, x2: int) -> int:
    """2^m m! P(T <= x2/2) for T ~ Irwin-Hall(m), as an exact integer."""
    s = 0
    for k in range(0, m + 1):
        t = x2 - 2 * k
        if t <= 0:
            break
        term = comb(m, k) * t**m
        s += -term if k & 1 else term
    return s


def exact_basin_measures(n: int) -> dict[int, float]:
    """Exact measure of every winding class |q| < n/2.

    The alternating Irwin-Hall sum is evaluated in integer arithmetic, so the
    cancellation that ruins the floating-point form for large n never occurs.
    """
    if n < 2:
        raise ValueError("exact_basin_measures: n must be >= 2")
    if n > EXACT_MAX_N:
        raise ValueError(
            f"exact mode is limited to n <= {EXACT_MAX_N}; use gaussian_prediction for n={n}"
        )
    m = n - 1
    denom = 2**m * factorial(m)
    qmax = (n - 1) // 2
    # P(q - 1/2 < S <= q + 1/2), S = T - m/2  ->  T <= q + 1/2 + m/2
    cdf = {}
    for j in range(-qmax - 1, qmax + 1):
        x2 = 2 * j + 1 + m
        cdf[j] = 0 if x2 <= 0 else (denom if x2 >= 2 * m else _irwin_hall_cdf_scaled(m, x2))
    out = {}
    for q in range(-qmax, qmax + 1):
        out[q] = float(Fraction(cdf[q] - cdf[q - 1], denom))
    return out


def exact_basin_measure(n: int, q: int) -> float:
    if not abs(q) < n / 2:
        raise ValueError(f"exact_basin_measure: need |q| < n/2, got n={n}, q={q}")
    return exact_basin_measures(n)[q]


def grid_convolution_measures(n_max: int, q_max: int, bins: int = 1 << 20) -> dict[int, dict[int, float]]:
    """Independent oracle: repeated direct convolution on a fine grid.

    The uniform law on (-1/2, 1/2] is replaced by the discrete uniform law on
    the ``bins`` cell midpoints; sums of m of them are built by moving-window
    sums (no FFT).  Point masses that fall exactly on an interval end are
    split in half, which keeps the error O(bins^-2).  Returns measures for
    every 3 <= n <= n_max and |q| <= min(q_max, (n-1)//2).
    """
    K = bins
    p = np.full(K, 1.0 / K)
    out: dict[int, dict[int, float]] = {}
    for m in range(1, n_max):
        n = m + 1
        if n >= 3:
            cum = np.cumsum(p)
            L = p.size

            def mass_le(x: float) -> float:
                # index j sits at (j + m/2) / K - m/2
                j = (x + m / 2) * K - m / 2
                if j < 0:
                    return 0.0
                if j >= L - 1:
                    return 1.0
                fl = math.floor(j)
                s = float(cum[fl])
                if fl == j:
                    s -= 0.5 * p[fl]
                return s

            out[n] = {
                q: float(mass_le(q + 0.5) - mass_le(q - 0.5))
                for q in range(-min(q_max, (n - 1) // 2), min(q_max, (n - 1) // 2) + 1)
            }
        if m == n_max - 1:
            break
        # moving-window sum of K cells: p'[J] = (cs[J] - cs[J-K]) / K
        cs = np.cumsum(p)
        c = np.concatenate([np.zeros(K), cs, np.full(K - 1, cs[-1])])
        del cs
        L = p.size + K - 1
        p = (c[K : K + L] - c[:L]) / K
        del c
    return out


def gaussian_prediction(n: int, q: int) -> float:
    """Asymptotic basin measure sqrt(6/(pi n)) exp(-6 q^2 / n)."""
    if n < 3:
        raise ValueError("gaussian_prediction: n must be >= 3")
    return math.sqrt(6.0 / (math.pi * n)) * math.exp(-6.0 * q * q / n)


# -- census ---------------------------------------------------------------------


@dataclass
class CensusResult:
    n: int
    trials: int
    counts: dict[int, int]
    empirical: dict[int, float]
    exact: dict[int, float]
    gaussian: dict[int, float]
    k_hat: float | None
    seed: int
    rejections: int = 0
    coupling_id: str | None = None

    def stderr(self, q: int) -> float:
        p = self.empirical.get(q, 0.0)
        return math.sqrt(p * (1.0 - p) / self.trials)

    def rows(self) -> list[tuple]:
        """(q, count, empirical, exact, gaussian, stderr) over the populated range."""
        qs = sorted(set(self.counts) | set(self.exact))
        return [
            (
                q,
                self.counts.get(q, 0),
                self.empirical.get(q, 0.0),
                self.exact.get(q, math.nan),
                self.gaussian.get(q, math.nan),
                self.stderr(q),
            )
            for q in qs
        ]


def _census_chunk(args: tuple[int, int, int, int]) -> tuple[np.ndarray, np.ndarray, int]:
    n, seed, start, stop = args
    seeds = trial_seed(seed, np.arange(start, stop, dtype=np.uint64))
    eta, rejections = _sample_block(n, seeds)
    q, valid = winding_numbers(eta)
    assert np.all(valid)
    values, counts = np.unique(q, return_counts=True)
    return values, counts, rejections


def _finalize(n: int, trials: int, counts: dict[int, int], seed: int, rejections: int) -> CensusResult:
    counts = dict(sorted(counts.items()))
    empirical = {q: c / trials for q, c in counts.items()}
    exact = exact_basin_measures(n) if n <= CENSUS_EXACT_MAX_N else {}
    qs = sorted(set(counts) | set(exact))
    gaussian = {q: gaussian_prediction(n, q) for q in qs} if n >= 3 else {}
    res = CensusResult(n, trials, counts, empirical, exact, gaussian, None, seed, rejections)
    try:
        res.k_hat = fit_decay_constant(res)
    except ValueError:
        res.k_hat = None
    return res


def initial_winding_census(n: int, trials: int, seed: int, workers: int = 1) -> CensusResult:
    """Histogram of initial winding numbers over ``trials`` uniform states.

    No integration is done.  Trials are processed in fixed chunks by index,
    so the result does not depend on ``workers``.
    """
    if trials < 1:
        raise ValueError("initial_winding_census: trials must be >= 1")
    if n < 2:
        raise ValueError("initial_winding_census: n must be >= 2")
    chunk = max(1, CHUNK_ELEMENTS // max(n - 1, 1))
    tasks = [(n, seed, s, min(s + chunk, trials)) for s in range(0, trials, chunk)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_census_chunk, tasks))
    else:
        parts = [_census_chunk(t) for t in tasks]
    counts: dict[int, int] = {}
    rejections = 0
    for values, cts, rej in parts:
        rejections += rej
        for v, c in zip(values.tolist(), cts.tolist()):
            counts[v] = counts.get(v, 0) + c
    if rejections:
        logger.info("census n=%d: %d boundary samples redrawn", n, rejections)
    return _finalize(n, trials, counts, seed, rejections)


def fit_decay_constant(result: CensusResult | dict[int, int], min_count: int = 100) -> float:
    """Weighted least-squares slope k of log p_q = a - k q^2 (weights = counts)."""
    counts = result.counts if isinstance(result, CensusResult) else dict(result)
    total = result.trials if isinstance(result, CensusResult) else sum(counts.values())
    bins = [(q, c) for q, c in counts.items() if c >= min_count]
    if len({q for q, _ in bins}) < 3:
        raise ValueError(f"fit_decay_constant: need >= 3 bins with count >= {min_count}")
    q = np.array([b[0] for b in bins], dtype=np.float64)
    c = np.array([b[1] for b in bins], dtype=np.float64)
    y = np.log(c / total)
    X = np.column_stack([np.ones_like(q), -q * q])
    sw = np.sqrt(c)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return float(coef[1])


# -- dynamical cross-check --------------------------------------------------------


@dataclass
class DynamicalCensus:
    census: CensusResult
    mismatches: int
    non_converged: int
    errors: int
    mismatch_trials: list[int] = field(default_factory=list)


def _dyn_trial(args) -> tuple[int, int | None, int | None, bool, bool]:
    n, seed, i, coupling, opts = args
    eta, _ = _sample_block(n, trial_seed(seed, np.array([i], dtype=np.uint64)))
    try:
        rec = integrate(eta[0], coupling, opts)
    except IntegrationError:
        return i, None, None, False, True
    return i, rec.initial_winding, rec.final_winding, rec.converged and rec.at_twisted, False


class HypothesisViolation(ValueError):
    """The coupling does not satisfy (H4) and the caller did not opt in."""


def dynamical_census(
    n: int,
    trials: int,
    coupling: CouplingSpec,
    seed: int,
    opts: IntegrationOptions | None = None,
    workers: int = 1,
    allow_non_monotone: bool = False,
) -> DynamicalCensus:
    """Integrate every sample to convergence and compare final to initial winding.

    Uses the same per-trial states as :func:`initial_winding_census`.
    Non-converged trials are excluded from the counts and reported.
    """
    report = validate_hypotheses(coupling)
    if not report.checks["H4"].passed and not allow_non_monotone:
        raise HypothesisViolation(
            f"coupling {coupling.id!r} is not strictly increasing on (-pi, pi) "
            f"(min f' = {report.checks['H4'].worst:.3g}); winding conservation is not "
            "guaranteed. Pass allow_non_monotone to run it anyway."
        )
    opts = opts or IntegrationOptions()
    tasks = [(n, seed, i, coupling, opts) for i in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_dyn_trial, tasks, chunksize=16))
    else:
        results = [_dyn_trial(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    counts: dict[int, int] = {}
    mismatches, non_conv, errors = 0, 0, 0
    bad: list[int] = []
    done = 0
    for i, q0, q1, ok, err in results:
        if err:
            errors += 1
            continue
        if not ok or q1 is None:
            non_conv += 1
            continue
        done += 1
        counts[q1] = counts.get(q1, 0) + 1
        if q1 != q0:
            mismatches += 1
            bad.append(i)
    res = _finalize(n, max(done, 1), counts, seed, 0)
    res.coupling_id = coupling.id
    return DynamicalCensus(res, mismatches, non_conv, errors, bad)
