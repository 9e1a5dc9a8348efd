"""Batch command-line front end.

Each command writes one CSV or JSON file and prints a one-line summary.
Exit codes: 0 success, 2 configuration error, 3 resource budget exceeded,
4 failed check.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import berry_esseen as be
from . import ldp
from .increments import DistributionSpecError, IncrementDistribution, mgf_minus_one, resolve
from .urn_core import (
    BudgetExceededError,
    LatticePmf,
    chi_square_gof,
    empirical_pmf,
    exact_pmf,
    exact_pmf_budget_ok,
    sample_z_direct_batch,
    sample_z_repr_batch,
)

OUTPUT_DIR_ENV = "URNLAB_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_CHECK = 4

COMMANDS = ("simulate", "exact-pmf", "be-report", "be-report-d", "ldp-lambda", "ldp-rate",
            "ldp-tails", "gauss-check", "cp-pmf", "rate-props")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    dist: str | None = None
    u0: str = "delta0"
    n: list[int] = field(default_factory=list)
    grid: list[list[float]] = field(default_factory=list)
    z: list[float] = field(default_factory=list)
    eps: float = 1.0
    samples: int = 100_000
    seed: int | None = None
    out: str | None = None
    mode: str = "exact"
    form: str | None = None
    sampler: str = "direct"
    side: str = "upper"
    tol: float | None = None
    fmt: str | None = None

    @property
    def stochastic(self) -> bool:
        if self.command == "simulate":
            return True
        if self.command in ("be-report", "be-report-d", "ldp-tails"):
            return self.mode != "exact"
        return False


def parse_n_list(text: str) -> list[int]:
    """Comma list of integers, or ``logspace:a:b:k`` for k points 10^a..10^b."""
    text = text.strip()
    try:
        if text.startswith("logspace:"):
            _, a, b, k = text.split(":")
            vals = np.rint(10.0 ** np.linspace(float(a), float(b), int(k))).astype(int)
            return sorted(set(int(v) for v in vals))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse n-list {text!r}") from exc


def parse_points(text: str) -> list[list[float]]:
    """Comma-separated points; coordinates of one point are joined with ':'."""
    try:
        return [[float(c) for c in item.split(":")] for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse grid {text!r}") from exc


def parse_u0(text: str, dim: int) -> LatticePmf:
    text = text.strip()
    if text == "delta0":
        return LatticePmf.delta((0,) * dim)
    if text.startswith("uniform:"):
        _, a, b = text.split(":")
        if dim != 1:
            raise ConfigError("uniform u0 preset is one-dimensional")
        return LatticePmf.uniform(int(a), int(b))
    try:
        spec = json.loads(text) if text.startswith("{") else json.loads(Path(text).read_text())
        pmf = LatticePmf.from_points((a["point"], a["prob"]) for a in spec["atoms"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot interpret u0 {text!r}: {exc}") from exc
    if pmf.dim != dim:
        raise ConfigError("u0 dimension differs from the increment dimension")
    return pmf


def _output_path(cfg: RunConfig, default_name: str) -> Path:
    if cfg.out:
        return Path(cfg.out)
    return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / default_name


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _csv_text(writer, *args) -> str:
    import io

    buf = io.StringIO()
    writer(*args, buf)
    return buf.getvalue()


def _need(cfg: RunConfig, name: str):
    val = getattr(cfg, name)
    if val in (None, [], ""):
        raise ConfigError(f"--{name} is required for {cfg.command}")
    return val


def _dist(cfg: RunConfig) -> IncrementDistribution:
    return resolve(_need(cfg, "dist"))


def _single_n(cfg: RunConfig) -> int:
    ns = _need(cfg, "n")
    if len(ns) != 1:
        raise ConfigError(f"{cfg.command} takes a single --n")
    return ns[0]


def cmd_simulate(cfg: RunConfig, rng: np.random.Generator) -> int:
    dist = _dist(cfg)
    u0 = parse_u0(cfg.u0, dist.dim)
    n = _single_n(cfg)
    sampler = {"direct": sample_z_direct_batch, "repr": sample_z_repr_batch}.get(cfg.sampler)
    if sampler is None:
        raise ConfigError(f"unknown sampler {cfg.sampler!r}")
    z = sampler(n, u0, dist, cfg.samples, rng)
    path = _output_path(cfg, "simulate.csv")
    _write(path, empirical_pmf(z).to_csv())
    msg = f"simulate: {cfg.samples} draws of Z_{n} ({cfg.sampler}) -> {path}"
    if exact_pmf_budget_ok(n, dist.dim):
        stat, dof, p = chi_square_gof(z, exact_pmf(n, u0, dist))
        msg += f"; chi2={stat:.4f} dof={dof} p={p:.4g}"
    print(msg)
    return EXIT_OK


def cmd_exact_pmf(cfg: RunConfig, rng) -> int:
    dist = _dist(cfg)
    u0 = parse_u0(cfg.u0, dist.dim)
    n = _single_n(cfg)
    pmf = exact_pmf(n, u0, dist)
    path = _output_path(cfg, "exact_pmf.csv")
    _write(path, pmf.to_csv())
    print(f"exact-pmf: law of Z_{n}, {len(pmf.support()[1])} support points, mean {pmf.mean().tolist()} -> {path}")
    return EXIT_OK


def cmd_be_report(cfg: RunConfig, rng) -> int:
    dist = _dist(cfg)
    u0 = parse_u0(cfg.u0, dist.dim)
    ns = _need(cfg, "n")
    if cfg.command == "be-report":
        form = cfg.form or "be1"
        reports = be.be_report_1d(ns, dist, u0, form=form, mode=cfg.mode, samples=cfg.samples, rng=rng)
    else:
        form = cfg.form or "be_d"
        reports = be.be_report_d(ns, dist, u0, form=form, mode=cfg.mode, samples=cfg.samples, rng=rng)
    path = _output_path(cfg, f"{cfg.command}.csv")
    _write(path, _csv_text(be.write_report_csv, reports))
    worst = max(r.ratio for r in reports)
    print(f"{cfg.command}: {len(reports)} rows, form {form}, max ratio {worst:.6g} -> {path}")
    if form == "be1" and any(r.mode == "exact" and r.ratio > 1.0 for r in reports):
        print("be-report: Berry-Esseen bound violated", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_ldp_lambda(cfg: RunConfig, rng) -> int:
    dist = _dist(cfg)
    ns = _need(cfg, "n")
    lams = _need(cfg, "grid")
    u0 = None if cfg.u0 == "delta0" else parse_u0(cfg.u0, dist.dim)
    rows = []
    for n in ns:
        for lam in lams:
            if len(lam) != dist.dim:
                raise ConfigError("lambda dimension mismatch")
            rows.append((n, lam, ldp.lambda_n(lam, n, dist, u0), mgf_minus_one(dist, lam)))
    path = _output_path(cfg, "ldp_lambda.csv")
    _write(path, _csv_text(ldp.write_lambda_csv, rows))
    print(f"ldp-lambda: {len(rows)} rows, max |gap| {max(abs(r[2] - r[3]) for r in rows):.6g} -> {path}")
    return EXIT_OK


def cmd_ldp_rate(cfg: RunConfig, rng) -> int:
    dist = _dist(cfg)
    xs = _need(cfg, "grid")
    results = [ldp.rate_function_numeric(x, dist) for x in xs]
    fmt = cfg.fmt or ("json" if len(xs) == 1 else "csv")
    if fmt == "json":
        path = _output_path(cfg, "ldp_rate.json")
        payload = results[0].to_dict() if len(results) == 1 else [r.to_dict() for r in results]
        _write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        if dist.dim != 1:
            raise ConfigError("CSV rate output is one-dimensional; use --format json")
        rows = []
        for x, r in zip(xs, results):
            closed = ldp.rate_function_closed(dist.name, x[0]) if dist.name in ("det1d", "ssrw1d") else None
            rows.append((x[0], r, closed))
        path = _output_path(cfg, "ldp_rate.csv")
        _write(path, _csv_text(ldp.write_rate_csv, rows))
    r0 = results[0]
    print(f"ldp-rate: I({r0.x.tolist()}) = {r0.value:.12g} ({r0.status}); {len(results)} point(s) -> {path}")
    return EXIT_OK


def cmd_ldp_tails(cfg: RunConfig, rng) -> int:
    dist = _dist(cfg)
    u0 = None if cfg.u0 == "delta0" else parse_u0(cfg.u0, dist.dim)
    if cfg.side not in ("upper", "lower"):
        raise ConfigError("--side must be upper or lower")
    recs = ldp.tail_exponent_report(_need(cfg, "n"), cfg.eps, dist, u0, mode=cfg.mode,
                                    samples=cfg.samples, rng=rng, sides=(cfg.side,))
    path = _output_path(cfg, "ldp_tails.csv")
    _write(path, _csv_text(ldp.write_tail_csv, recs))
    last = recs[-1]
    print(f"ldp-tails: {cfg.side} tail, n={last.n}: exponent {last.exponent:.6g} vs I={last.target_I:.6g} -> {path}")
    return EXIT_OK


def cmd_gauss_check(cfg: RunConfig, rng) -> int:
    zs = _need(cfg, "z")
    ns = _need(cfg, "n")
    tol = 1e-2 if cfg.tol is None else cfg.tol
    lines = ["z,n,ratio"]
    bad = 0
    for z in zs:
        for n in ns:
            r = ldp.gauss_ratio(z, n)
            lines.append(f"{z:.12g},{n},{r:.12g}")
            bad += abs(r - 1.0) > tol
    path = _output_path(cfg, "gauss_check.csv")
    _write(path, "\n".join(lines) + "\n")
    first = lines[1].split(",")[2]
    print(f"gauss-check: ratio {first} (first row), {bad} of {len(lines) - 1} outside tol {tol} -> {path}")
    return EXIT_CHECK if bad else EXIT_OK


def cmd_cp_pmf(cfg: RunConfig, rng) -> int:
    dist = _dist(cfg)
    tol = 1e-12 if cfg.tol is None else cfg.tol
    pmf, deficit = ldp.compound_poisson_pmf(dist, tol)
    path = _output_path(cfg, "cp_pmf.csv")
    _write(path, pmf.to_csv())
    print(f"cp-pmf: compound Poisson law, deficit {deficit:.3g} -> {path}")
    return EXIT_OK


def cmd_rate_props(cfg: RunConfig, rng) -> int:
    dist = _dist(cfg)
    grid = _need(cfg, "grid")
    rep = ldp.rate_properties(dist, grid)
    path = _output_path(cfg, "rate_props.json")
    _write(path, json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    status = "all checks passed" if rep.all_passed else f"FAILED {[k for k, v in rep.checks.items() if not v]}"
    print(f"rate-props: {status} -> {path}")
    return EXIT_OK if rep.all_passed else EXIT_CHECK


HANDLERS = {
    "simulate": cmd_simulate,
    "exact-pmf": cmd_exact_pmf,
    "be-report": cmd_be_report,
    "be-report-d": cmd_be_report,
    "ldp-lambda": cmd_ldp_lambda,
    "ldp-rate": cmd_ldp_rate,
    "ldp-tails": cmd_ldp_tails,
    "gauss-check": cmd_gauss_check,
    "cp-pmf": cmd_cp_pmf,
    "rate-props": cmd_rate_props,
}


def run(cfg: RunConfig) -> int:
    if cfg.command not in HANDLERS:
        print(f"unknown command {cfg.command!r}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.mode not in ("exact", "mc", "auto"):
        print(f"unknown mode {cfg.mode!r}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.stochastic and cfg.seed is None:
        print(f"{cfg.command} is stochastic here and requires --seed", file=sys.stderr)
        return EXIT_CONFIG
    rng = np.random.default_rng(cfg.seed) if cfg.seed is not None else None
    try:
        return HANDLERS[cfg.command](cfg, rng)
    except BudgetExceededError as exc:
        print(f"{cfg.command}: resource budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, DistributionSpecError, ValueError) as exc:
        print(f"{cfg.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urnlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", help=f"output file (default: ${OUTPUT_DIR_ENV} or cwd)")
        p.add_argument("--seed", type=int)
        if name != "gauss-check":
            p.add_argument("--dist", help="preset (det1d, ssrw1d, ne2d), inline JSON or JSON file")
        if name in ("simulate", "exact-pmf", "be-report", "be-report-d", "ldp-lambda", "ldp-tails"):
            p.add_argument("--u0", default="delta0", help="delta0, uniform:a:b, inline JSON or JSON file")
        if name != "cp-pmf" and name not in ("ldp-rate", "rate-props"):
            p.add_argument("--n", type=parse_n_list, default=[], help="comma list or logspace:a:b:k")
        if name in ("simulate", "be-report", "be-report-d", "ldp-tails"):
            p.add_argument("--samples", type=int, default=100_000)
        if name in ("be-report", "be-report-d", "ldp-tails"):
            p.add_argument("--mode", default="exact", choices=["exact", "mc", "auto"])
        if name == "simulate":
            p.add_argument("--sampler", default="direct", choices=["direct", "repr"])
        if name == "be-report":
            p.add_argument("--form", choices=["be1", "general"])
        if name == "be-report-d":
            p.add_argument("--form", choices=["be_d", "general"])
        if name == "ldp-lambda":
            p.add_argument("--lambda", dest="grid", type=parse_points, default=[])
        if name in ("ldp-rate", "rate-props"):
            p.add_argument("--x", dest="grid", type=parse_points, default=[])
        if name == "ldp-rate":
            p.add_argument("--format", dest="fmt", choices=["json", "csv"])
        if name == "ldp-tails":
            p.add_argument("--eps", type=float, default=1.0)
            p.add_argument("--side", default="upper", choices=["upper", "lower"])
        if name == "gauss-check":
            p.add_argument("--z", type=lambda s: [float(v) for v in s.split(",")], default=[])
        if name in ("gauss-check", "cp-pmf"):
            p.add_argument("--tol", type=float)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(**{k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__})
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
