"""Distances, boundary proximity, rays through the basins, and head size."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coupling import TWO_PI, CouplingSpec, wrap_angle
from .dynamics import (
    BOUNDARY_TOL,
    DiffState,
    IntegrationOptions,
    RingState,
    TwistedState,
    _eta,
    _theta,
    diffs_batch,
    integrate,
    theta_to_eta,
    winding_numbers,
)
from .seeding import normal_stream, trial_seed, uniform_stream

MASTER_DISTANCE = math.sqrt(math.pi**2 / 3.0)
D2_VARIANCE = 4.0 * math.pi**4 / 45.0
INSCRIBED_RADIUS = math.pi / math.sqrt(2.0)

CHUNK_ELEMENTS = 1 << 22


# -- distance -------------------------------------------------------------------


def torus_distance(a: RingState | np.ndarray, b: RingState | np.ndarray) -> float:
    """Root-mean-square circular distance between two phase vectors."""
    x, y = _theta(a), _theta(b)
    if x.shape != y.shape:
        raise ValueError(f"torus_distance: dimension mismatch {x.shape} vs {y.shape}")
    d = np.abs(wrap_angle(x - y))
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class DistanceSummary:
    n: int
    trials: int
    q_filter: int | None
    mean: float
    std: float
    d2_mean: float
    d2_var: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    candidates: int
    distances: np.ndarray = field(repr=False)

    @property
    def acceptance(self) -> float:
        return self.trials / self.candidates


def master_distance_experiment(
    n: int,
    trials: int,
    seed: int,
    q_filter: int | None = None,
    bins: int = 50,
) -> DistanceSummary:
    """Distance from uniform states to a twisted state.

    Without ``q_filter`` the reference is the in-phase state; with it, samples
    are kept only when their winding equals ``q_filter`` (rejection) and the
    reference is that twisted state.  Candidate ``j`` uses stream
    ``trial_seed(seed, j)``; accepted samples are the first ``trials``
    candidates that pass.
    """
    if n < 3:
        raise ValueError("master_distance_experiment: n must be >= 3")
    if q_filter is not None and abs(q_filter) > 2 * math.sqrt(n):
        raise ValueError(
            f"q_filter={q_filter} is beyond 2*sqrt(n) for n={n}; acceptance would be "
            "negligible. Use a larger n or a smaller |q|."
        )
    q_ref = 0 if q_filter is None else q_filter
    ref = TwistedState(n, q_ref).ring_state().theta
    chunk = max(1, CHUNK_ELEMENTS // n)
    kept: list[np.ndarray] = []
    accepted = 0
    candidates = 0
    while accepted < trials:
        want = chunk if q_filter is not None else min(chunk, trials - accepted)
        seeds = trial_seed(seed, np.arange(candidates, candidates + want, dtype=np.uint64))
        theta = math.pi - TWO_PI * uniform_stream(seeds, n)
        candidates += want
        if q_filter is not None:
            q, valid = winding_numbers(diffs_batch(theta))
            theta = theta[valid & (q == q_filter)]
        if theta.shape[0]:
            d = np.abs(wrap_angle(theta - ref))
            kept.append(np.mean(d * d, axis=1))
            accepted += theta.shape[0]
        if candidates >= 100_000 and accepted / candidates < 1e-4:
            raise ValueError(
                f"rejection acceptance rate {accepted / candidates:.2e} < 1e-4; "
                "use a larger n or a smaller |q_filter|"
            )
    d2 = np.concatenate(kept)[:trials]
    dist = np.sqrt(d2)
    counts, edges = np.histogram(dist, bins=bins)
    return DistanceSummary(
        n, trials, q_filter, float(dist.mean()), float(dist.std(ddof=1)) if trials > 1 else 0.0,
        float(d2.mean()), float(d2.var(ddof=1)) if trials > 1 else 0.0, edges, counts,
        candidates, dist,
    )


# -- boundary proximity -------------------------------------------------------------


def boundary_proximity_count(d: DiffState | np.ndarray, delta: float) -> int:
    """Number of eta_i, i <= n-1, within circular distance ``delta`` of pi."""
    if not 0.0 < delta < math.pi:
        raise ValueError("boundary_proximity_count: delta must lie in (0, pi)")
    eta = _eta(d)
    return int(np.count_nonzero(np.abs(wrap_angle(eta[:-1] - math.pi)) < delta))


def boundary_count_samples(n: int, trials: int, delta: float, seed: int) -> np.ndarray:
    """Boundary counts of ``trials`` uniform states (trial i uses stream i)."""
    from .census import sample_diffstates

    if not 0.0 < delta < math.pi:
        raise ValueError("delta must lie in (0, pi)")
    chunk = max(1, CHUNK_ELEMENTS // n)
    out = np.empty(trials, dtype=np.int64)
    for s in range(0, trials, chunk):
        e = min(s + chunk, trials)
        eta = sample_diffstates(n, trial_seed(seed, np.arange(s, e, dtype=np.uint64)))
        out[s:e] = np.count_nonzero(np.abs(wrap_angle(eta[:, :-1] - math.pi)) < delta, axis=1)
    return out


# -- rays -------------------------------------------------------------------------------


@dataclass(frozen=True)
class RayDirection:
    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("RayDirection: need a 1-d vector with n >= 2")
        if abs(float(np.linalg.norm(v)) - 1.0) > 1e-12:
            raise ValueError("RayDirection: v must have unit Euclidean norm")
        object.__setattr__(self, "v", v)

    @classmethod
    def normalized(cls, v) -> "RayDirection":
        v = np.asarray(v, dtype=np.float64)
        return cls(v / np.linalg.norm(v))

    @property
    def n(self) -> int:
        return self.v.size


def sample_ray_direction(n: int, seed: int) -> RayDirection:
    """Uniform direction on the unit sphere (normalized Gaussian vector)."""
    if n < 2:
        raise ValueError("sample_ray_direction: n must be >= 2")
    z = normal_stream(seed, n)
    return RayDirection(z / np.linalg.norm(z))


def cycle_difference(v: np.ndarray) -> np.ndarray:
    """w = A v with w_i = v_{i+1} - v_i, cyclic."""
    v = np.asarray(v, dtype=np.float64)
    return np.roll(v, -1, axis=-1) - v


def adversarial_direction(n: int) -> RayDirection:
    """(e_2 - e_1) / sqrt(2): its first exit is at the inscribed radius."""
    v = np.zeros(n)
    v[0], v[1] = -1.0, 1.0
    return RayDirection.normalized(v)


def lambda_star_closed_form(v: RayDirection | np.ndarray, q_start: int = 0) -> float:
    """Distance along ``v`` from the q-twisted state to the first basin boundary.

    Each eta_i moves linearly, eta_i(lam) = 2 pi q / n + lam w_i, and the basin
    is left when the first one reaches +-pi.
    """
    vv = v.v if isinstance(v, RayDirection) else np.asarray(v, dtype=np.float64)
    n = vv.size
    if not abs(q_start) < n / 2:
        raise ValueError("lambda_star_closed_form: need |q_start| < n/2")
    w = cycle_difference(vv)
    if np.max(np.abs(w)) <= 1e-15:
        raise ValueError("ray stays inside basin forever (direction is constant)")
    c = TWO_PI * q_start / n
    if q_start == 0:
        return math.pi / float(np.max(np.abs(w)))
    with np.errstate(divide="ignore"):
        exits = np.where(w > 0, (math.pi - c) / w, np.where(w < 0, (-math.pi - c) / w, np.inf))
    return float(np.min(exits))


@dataclass
class RayResult:
    q_start: int
    T: float
    step: float
    occupation: dict[int, float]
    crossings: int
    first_exit: float
    samples: int
    boundary_samples: int
    crossing_log: list[tuple[float, int, int]] = field(default_factory=list, repr=False)
    spot_checks: list[tuple[float, int, int | None]] = field(default_factory=list, repr=False)


def _ray_windings(theta0: np.ndarray, v: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    theta = wrap_angle(theta0 + lam[:, None] * v)
    return winding_numbers(diffs_batch(theta))


def _inside(theta0: np.ndarray, v: np.ndarray, lam: float, q_start: int) -> bool:
    q, valid = _ray_windings(theta0, v, np.array([lam]))
    return bool(valid[0]) and int(q[0]) == q_start


def ray_survey(
    q_start: int,
    v: RayDirection,
    T: float,
    step: float | None = None,
    *,
    log_crossings: bool = True,
    spot_checks: int = 0,
    coupling: CouplingSpec | None = None,
    seed: int = 0,
) -> RayResult:
    """Walk the ray theta_q + lam v on the torus and record winding numbers.

    Membership is decided by the winding number of each sample.  The first
    exit from the starting basin is refined by bisection to 1e-9.  With
    ``spot_checks > 0``, that many random sample points are also integrated
    to convergence under ``coupling`` (sawtooth by default) and their final
    winding is stored next to the predicted one.
    """
    n = v.n
    w = cycle_difference(v.v)
    w_inf = float(np.max(np.abs(w)))
    step_cap = 0.01 * math.pi / w_inf if w_inf > 0 else math.inf
    if step is None:
        step = step_cap if math.isfinite(step_cap) else T / 1000.0
    if not T > 0 or not step > 0:
        raise ValueError("ray_survey: T and step must be positive")
    if step > step_cap * (1 + 1e-12):
        raise ValueError(f"ray_survey: step {step:.3g} exceeds 0.01*pi/|Av|_inf = {step_cap:.3g}")

    theta0 = TwistedState(n, q_start).ring_state().theta
    total = int(math.floor(T / step)) + 1
    chunk = max(1, CHUNK_ELEMENTS // n)
    counts: dict[int, int] = {}
    crossings = 0
    boundary = 0
    log: list[tuple[float, int, int]] = []
    first_exit = math.inf
    prev_q: int | None = None
    prev_lam = 0.0
    for s in range(0, total, chunk):
        k = np.arange(s, min(s + chunk, total), dtype=np.float64)
        lam = k * step
        q, valid = _ray_windings(theta0, v.v, lam)
        boundary += int(np.count_nonzero(~valid))
        qv, lv = q[valid], lam[valid]
        vals, cts = np.unique(qv, return_counts=True)
        for a, b in zip(vals.tolist(), cts.tolist()):
            counts[a] = counts.get(a, 0) + b
        if not math.isfinite(first_exit):
            out = np.flatnonzero(~valid | (q != q_start))
            if out.size:
                j = int(out[0])
                lo = lam[j - 1] if j > 0 else prev_lam
                first_exit = _bisect_exit(theta0, v.v, q_start, float(lo), float(lam[j]))
        if qv.size:
            seq = qv if prev_q is None else np.concatenate([[prev_q], qv])
            lseq = lv if prev_q is None else np.concatenate([[prev_lam], lv])
            change = np.flatnonzero(seq[1:] != seq[:-1])
            crossings += change.size
            if log_crossings:
                log.extend(zip(lseq[change + 1].tolist(), seq[change].tolist(), seq[change + 1].tolist()))
            prev_q, prev_lam = int(qv[-1]), float(lv[-1])

    valid_total = total - boundary
    occupation = {a: b / valid_total for a, b in sorted(counts.items())} if valid_total else {}
    result = RayResult(q_start, T, step, occupation, crossings, first_exit, total, boundary, log)
    if spot_checks:
        result.spot_checks = integration_spot_check(q_start, v, T, spot_checks, coupling, seed)
    return result


def _bisect_exit(theta0: np.ndarray, v: np.ndarray, q_start: int, lo: float, hi: float) -> float:
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if _inside(theta0, v, mid, q_start):
            lo = mid
        else:
            hi = mid
    return hi


def integration_spot_check(
    q_start: int,
    v: RayDirection,
    T: float,
    points: int,
    coupling: CouplingSpec | None = None,
    seed: int = 0,
) -> list[tuple[float, int, int | None]]:
    """Integrate ``points`` random ray points; returns (lam, predicted q, final q)."""
    from .coupling import get_coupling

    coupling = coupling or get_coupling("sawtooth")
    theta0 = TwistedState(v.n, q_start).ring_state().theta
    lams = T * uniform_stream(trial_seed(seed, np.uint64(0)), points)
    out = []
    for lam in lams.tolist():
        eta = theta_to_eta(wrap_angle(theta0 + lam * v.v))
        q, valid = winding_numbers(eta.eta[None, :])
        if not valid[0]:
            continue
        rec = integrate(eta, coupling, IntegrationOptions())
        out.append((lam, int(q[0]), rec.final_winding))
    return out


# -- head size --------------------------------------------------------------------------


@dataclass
class HeadStats:
    n: int
    trials: int
    lambda_stars: dict[str, float]
    w_inf: dict[str, float]
    r_q_exact: float
    lambda_ratio: float
    w_ratio: float
    lambda_values: np.ndarray = field(repr=False)
    w_values: np.ndarray = field(repr=False)


def _summary(x: np.ndarray) -> dict[str, float]:
    q = np.quantile(x, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {
        "min": float(x.min()),
        "q05": float(q[0]),
        "q25": float(q[1]),
        "median": float(q[2]),
        "q75": float(q[3]),
        "q95": float(q[4]),
        "max": float(x.max()),
        "mean": float(x.mean()),
    }


def head_statistics(n: int, trials: int, seed: int) -> HeadStats:
    """Closed-form first-exit lengths for ``trials`` random directions.

    Reports median(lambda*) / sqrt(n / log n) and
    median(|Av|_inf) / (2 sqrt(log n / n)); the limits are pi/2 and 1.
    """
    if n < 10 or trials < 100:
        raise ValueError("head_statistics: need n >= 10 and trials >= 100")
    w_inf = np.empty(trials)
    for i in range(trials):
        z = normal_stream(trial_seed(seed, np.uint64(i)), n)
        w_inf[i] = np.max(np.abs(cycle_difference(z / np.linalg.norm(z))))
    lam = math.pi / w_inf
    log_n = math.log(n)
    return HeadStats(
        n,
        trials,
        _summary(lam),
        _summary(w_inf),
        INSCRIBED_RADIUS,
        float(np.median(lam)) / math.sqrt(n / log_n),
        float(np.median(w_inf)) / (2.0 * math.sqrt(log_n / n)),
        lam,
        w_inf,
    )
