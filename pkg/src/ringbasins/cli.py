"""Command-line entry point: one experiment per invocation.

Configuration comes from an optional flat ``key = value`` file (``--config``)
overridden by flags.  Every resolved parameter, defaults included, is echoed
into ``meta.json``.  A parameter given as a comma list (``n = 10,20,40``)
turns the run into a sweep with one output directory per value.

Exit status: 0 success, 2 invalid configuration or tool error, 3 hypothesis
violation (a coupling failing (H4) where it is required, or a
``validate-coupling`` run whose coupling fails a check).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import subprocess
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .census import (
    HypothesisViolation,
    dynamical_census,
    exact_basin_measures,
    initial_winding_census,
)
from .coupling import CouplingSpec, get_coupling, load_coupling_table, validate_hypotheses
from .dynamics import IntegrationOptions
from .geometry import (
    D2_VARIANCE,
    INSCRIBED_RADIUS,
    MASTER_DISTANCE,
    boundary_count_samples,
    head_statistics,
    lambda_star_closed_form,
    master_distance_experiment,
    ray_survey,
    sample_ray_direction,
)
from .seeding import SEEDING_RULE, trial_seed
from .stability import stability_table

logger = logging.getLogger("ringbasins")

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_HYPOTHESIS = 3

EXPERIMENTS = (
    "census",
    "dynamical-census",
    "master-distance",
    "boundary",
    "ray",
    "head",
    "stability",
    "validate-coupling",
)

# name -> (type, default); None default means "unset"
PARAMS: dict[str, tuple[type, Any]] = {
    "experiment": (str, None),
    "n": (int, None),
    "trials": (int, 1000),
    "seed": (int, None),
    "coupling": (str, "sawtooth"),
    "coupling_table": (str, None),
    "q": (int, 0),
    "delta": (float, 0.3),
    "T": (float, 1e4),
    "step": (float, None),
    "q_filter": (int, None),
    "out": (str, "out"),
    "threads": (int, 1),
    "allow_non_monotone": (bool, False),
    "atol": (float, 1e-9),
    "rtol": (float, 1e-7),
    "t_max": (float, 1e5),
    "eps_conv": (float, 1e-8),
    "bins": (int, 50),
    "probes": (int, 2001),
}
SWEEPABLE = ("n", "trials", "q", "delta", "T", "q_filter", "seed")


class ConfigError(ValueError):
    pass


def _key(name: str) -> str:
    k = name.strip().replace("-", "_")
    return "T" if k in ("T", "t") else k


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _convert(name: str, raw: Any) -> Any:
    typ, _ = PARAMS[name]
    if raw is None or isinstance(raw, typ) and not isinstance(raw, str):
        return raw
    s = str(raw).strip()
    if s.lower() in ("", "none"):
        return None
    try:
        if typ is bool:
            return _parse_bool(s)
        if typ is int:
            return int(float(s)) if "e" in s.lower() else int(s)
        return typ(s)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r} ({exc})") from None


def read_config_file(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        k = _key(k)
        if k not in PARAMS:
            raise ConfigError(f"{path}:{lineno}: unknown key {k!r}")
        out[k] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ringbasins",
        description="Basin experiments for identical oscillators on a ring.",
    )
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--n", help="number of oscillators (comma list for a sweep)")
    p.add_argument("--trials")
    p.add_argument("--seed", help="master seed (required)")
    p.add_argument("--coupling", help="built-in coupling id")
    p.add_argument("--coupling-table", metavar="PATH", help="CSV table x,f(x) with header")
    p.add_argument("--q")
    p.add_argument("--delta")
    p.add_argument("--T")
    p.add_argument("--step")
    p.add_argument("--q-filter")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--threads")
    p.add_argument("--allow-non-monotone", action="store_const", const="true", default=None)
    p.add_argument("--atol")
    p.add_argument("--rtol")
    p.add_argument("--t-max")
    p.add_argument("--eps-conv")
    p.add_argument("--bins")
    p.add_argument("--probes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> list[dict[str, Any]]:
    """Merge file and flags, apply defaults, expand a sweep."""
    raw: dict[str, Any] = {}
    if args.config:
        if not Path(args.config).exists():
            raise ConfigError(f"config file not found: {args.config}")
        raw.update(read_config_file(args.config))
    for name in PARAMS:
        val = getattr(args, name, None)
        if val is not None:
            raw[name] = val

    sweep = [k for k in SWEEPABLE if isinstance(raw.get(k), str) and "," in raw[k]]
    if len(sweep) > 1:
        raise ConfigError(f"only one sweep key per run, got {sweep}")
    points = [raw]
    if sweep:
        key = sweep[0]
        points = [{**raw, key: v.strip()} for v in raw[key].split(",") if v.strip()]

    configs = []
    for pt in points:
        cfg = {name: _convert(name, pt.get(name, default)) for name, (_, default) in PARAMS.items()}
        _validate(cfg)
        if sweep:
            cfg["_sweep"] = f"{sweep[0]}={pt[sweep[0]]}"
        configs.append(cfg)
    return configs


def _validate(cfg: dict[str, Any]) -> None:
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    if cfg["seed"] is None:
        raise ConfigError("a master seed is required (--seed)")
    if cfg["experiment"] != "validate-coupling":
        if cfg["n"] is None or cfg["n"] < 3:
            raise ConfigError("n must be given and >= 3")
    if cfg["trials"] is None or cfg["trials"] < 1:
        raise ConfigError("trials must be >= 1")
    if cfg["coupling_table"] and not Path(cfg["coupling_table"]).exists():
        raise ConfigError(f"coupling table not found: {cfg['coupling_table']}")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be >= 1")


def _coupling(cfg: dict[str, Any]) -> CouplingSpec:
    if cfg["coupling_table"]:
        return load_coupling_table(cfg["coupling_table"])
    try:
        return get_coupling(cfg["coupling"])
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None


def _git_revision() -> str:
    try:
        r = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        return r.stdout.strip() if r.returncode == 0 else "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _fmt(x: Any) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return "" if x is None else str(x)


def _write_csv(path: Path, header: list[str], rows, cfg: dict[str, Any]) -> None:
    buf = io.StringIO()
    buf.write(
        f"# ringbasins {__version__} experiment={cfg['experiment']} "
        f"seed={cfg['seed']} seeding={SEEDING_RULE}\n"
    )
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue())


# -- experiments --------------------------------------------------------------
# each returns (summary for meta.json, exit status)


def _run_census(cfg, out):
    res = initial_winding_census(cfg["n"], cfg["trials"], cfg["seed"], workers=cfg["threads"])
    _write_csv(out / "results.csv", ["q", "count", "empirical", "exact", "gaussian", "stderr"], res.rows(), cfg)
    return {"k_hat": res.k_hat, "k_theory": 6.0 / cfg["n"], "rejections": res.rejections}, EXIT_OK


def _run_dynamical_census(cfg, out):
    c = _coupling(cfg)
    opts = IntegrationOptions(atol=cfg["atol"], rtol=cfg["rtol"], t_max=cfg["t_max"], eps_conv=cfg["eps_conv"])
    try:
        dyn = dynamical_census(
            cfg["n"], cfg["trials"], c, cfg["seed"], opts,
            workers=cfg["threads"], allow_non_monotone=cfg["allow_non_monotone"],
        )
    except HypothesisViolation as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return None, EXIT_HYPOTHESIS
    _write_csv(
        out / "results.csv", ["q", "count", "empirical", "exact", "gaussian", "stderr"], dyn.census.rows(), cfg
    )
    return {
        "mismatches": dyn.mismatches,
        "non_converged": dyn.non_converged,
        "integration_errors": dyn.errors,
        "mismatch_trials": dyn.mismatch_trials,
        "k_hat": dyn.census.k_hat,
    }, EXIT_OK


def _run_master_distance(cfg, out):
    try:
        s = master_distance_experiment(cfg["n"], cfg["trials"], cfg["seed"], cfg["q_filter"], cfg["bins"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = [(lo, hi, c) for lo, hi, c in zip(s.hist_edges[:-1], s.hist_edges[1:], s.hist_counts)]
    _write_csv(out / "results.csv", ["bin_lo", "bin_hi", "count"], rows, cfg)
    return {
        "mean": s.mean,
        "std": s.std,
        "d2_var": s.d2_var,
        "predicted_mean": MASTER_DISTANCE,
        "predicted_d2_var": D2_VARIANCE / cfg["n"],
        "candidates": s.candidates,
    }, EXIT_OK


def _run_boundary(cfg, out):
    from scipy.stats import binom

    try:
        counts = boundary_count_samples(cfg["n"], cfg["trials"], cfg["delta"], cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    n, p = cfg["n"] - 1, cfg["delta"] / math.pi
    hist = np.bincount(counts, minlength=int(counts.max()) + 1)
    rows = [(k, int(c), c / counts.size, float(binom.pmf(k, n, p))) for k, c in enumerate(hist)]
    _write_csv(out / "results.csv", ["count", "samples", "frequency", "binomial_pmf"], rows, cfg)
    return {
        "mean": float(counts.mean()),
        "var": float(counts.var(ddof=1)),
        "binomial_mean": n * p,
        "binomial_var": n * p * (1 - p),
    }, EXIT_OK


def _run_ray(cfg, out):
    n = cfg["n"]
    v = sample_ray_direction(n, int(trial_seed(cfg["seed"], 0)))
    try:
        res = ray_survey(cfg["q"], v, cfg["T"], cfg["step"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    exact = exact_basin_measures(n) if n <= 200 else {}
    qs = sorted(set(res.occupation) | set(exact))
    _write_csv(
        out / "results.csv",
        ["q", "occupation", "exact"],
        [(q, res.occupation.get(q, 0.0), exact.get(q)) for q in qs],
        cfg,
    )
    _write_csv(out / "crossings.csv", ["lambda", "q_before", "q_after"], res.crossing_log, cfg)
    return {
        "direction": v.v.tolist(),
        "step": res.step,
        "samples": res.samples,
        "boundary_samples": res.boundary_samples,
        "crossings": res.crossings,
        "first_exit": res.first_exit,
        "lambda_star_closed_form": lambda_star_closed_form(v, cfg["q"]),
    }, EXIT_OK


def _run_head(cfg, out):
    try:
        h = head_statistics(cfg["n"], cfg["trials"], cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = [
        ("n", h.n),
        ("trials", h.trials),
        ("r_q_exact", h.r_q_exact),
        ("min_lambda_star", h.lambda_stars["min"]),
        ("median_lambda_star", h.lambda_stars["median"]),
        ("median_lambda_star_over_sqrt_n_over_log_n", h.lambda_ratio),
        ("limit_lambda_ratio", math.pi / 2),
        ("median_w_inf", h.w_inf["median"]),
        ("median_w_inf_over_2_sqrt_log_n_over_n", h.w_ratio),
        ("limit_w_ratio", 1.0),
    ]
    _write_csv(out / "results.csv", ["quantity", "value"], rows, cfg)
    return {"lambda_stars": h.lambda_stars, "w_inf": h.w_inf, "r_q_exact": INSCRIBED_RADIUS}, EXIT_OK


def _run_stability(cfg, out):
    c = _coupling(cfg)
    table = stability_table(cfg["n"], c)
    rows = [(q, r.fprime_at_twist, r.max_nonzero_eigenvalue, r.verdict) for q, r in table.items()]
    _write_csv(out / "results.csv", ["q", "fprime", "max_nonzero_eigenvalue", "verdict"], rows, cfg)
    return {"verdicts": {str(q): r.verdict for q, r in table.items()}}, EXIT_OK


def _run_validate(cfg, out):
    c = _coupling(cfg)
    rep = validate_hypotheses(c, cfg["probes"])
    rows = [(k.name, k.passed, k.worst, k.witness) for k in rep.checks.values()]
    rows.append(("jump_at_pi", rep.has_jump, rep.jump_at_pi, math.pi))
    _write_csv(out / "results.csv", ["check", "passed", "worst", "witness"], rows, cfg)
    for line in rep.lines():
        print(line)
    return {"ok": rep.ok, "has_jump": rep.has_jump}, EXIT_OK if rep.ok else EXIT_HYPOTHESIS


RUNNERS = {
    "census": _run_census,
    "dynamical-census": _run_dynamical_census,
    "master-distance": _run_master_distance,
    "boundary": _run_boundary,
    "ray": _run_ray,
    "head": _run_head,
    "stability": _run_stability,
    "validate-coupling": _run_validate,
}


def run(cfg: dict[str, Any]) -> int:
    """Run one resolved configuration and write its artifacts."""
    out = Path(cfg["out"])
    if "_sweep" in cfg:
        out = out / cfg["_sweep"]
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    summary, status = RUNNERS[cfg["experiment"]](cfg, out)
    if summary is None:
        return status
    params = {k: v for k, v in cfg.items() if not k.startswith("_")}
    meta = {
        "tool": "ringbasins",
        "version": __version__,
        "experiment": cfg["experiment"],
        "seed": cfg["seed"],
        "seeding_rule": SEEDING_RULE,
        "coupling": cfg["coupling_table"] or cfg["coupling"],
        "params": params,
        "git_revision": _git_revision(),
        "wall_time_s": time.perf_counter() - t0,
        "results": summary,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, default=_json_default) + "\n")
    logger.info("wrote %s", out)
    return status


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        configs = resolve_config(args)
        status = EXIT_OK
        for cfg in configs:
            status = max(status, run(cfg))
        return status
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
