"""Large deviations of Z_n / log n.

The scaled log-MGF of Z_n converges to e(lambda) - 1, so the rate function
is the Legendre transform of that limit.  This module evaluates the finite-n
log-MGF exactly, solves the Legendre transform numerically, checks it against
closed forms and a compound-Poisson oracle, and measures tail exponents
(exactly, or by exponentially tilted Monte Carlo for large n).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from .increments import (
    IncrementDistribution,
    MGFOverflowError,
    mgf,
    mgf_gradient,
    mgf_hessian,
    mgf_minus_one,
)
from .urn_core import (
    LatticePmf,
    TRIM_BELOW,
    exact_pmf,
    exact_pmf_budget_ok,
    selection_count_pmf,
    sum_of_increments,
)

CONVERGED = "converged"
DIVERGED = "diverged_to_infinity"

NEWTON_MAX_ITER = 500
NEWTON_GRAD_TOL = 1e-12
DIVERGENCE_EXPONENT = 60.0
DIVERGENCE_GRAD_TOL = 1e-6
MAX_HALVINGS = 60
CONVEXITY_TOL = 1e-8
MONOTONE_TOL = 1e-8


@dataclass
class RateFunctionResult:
    x: np.ndarray
    value: float
    lambda_star: np.ndarray | None
    status: str
    iterations: int

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_dict(self) -> dict:
        return {
            "x": [float(c) for c in self.x],
            "value": self.value if math.isfinite(self.value) else "inf",
            "lambda_star": None if self.lambda_star is None else [float(c) for c in self.lambda_star],
            "status": self.status,
            "iterations": self.iterations,
        }


def product_pi(z: float, n: int) -> float:
    """log of prod_{j=1}^n (1 + z/j), compensated summation in ascending j."""
    if not z > -1.0:
        raise ValueError("product_pi needs z > -1")
    if n < 1:
        raise ValueError("n must be at least 1")
    j = np.arange(1, n + 1, dtype=float)
    return math.fsum(np.log1p(z / j))


def gauss_ratio(z: float, n: int) -> float:
    """Pi_n(z) Gamma(z+1) / n^z, which tends to 1."""
    return math.exp(product_pi(z, n) + math.lgamma(z + 1.0) - z * math.log(n))


def _log_pi_over_n1(e_minus_one: float, n: int) -> float:
    """log(Pi_n(e) / (n+1)) = sum_j log1p((e-1)/(j+1)), exactly 0 when e = 1."""
    if not e_minus_one > -1.0:
        raise ValueError("e(lambda) must be positive")
    j = np.arange(2, n + 2, dtype=float)
    return math.fsum(np.log1p(e_minus_one / j))


def lambda_n(lam, n: int, dist: IncrementDistribution, u0: LatticePmf | None = None) -> float:
    """Scaled log-MGF (1/log n) log E exp(<lambda, Z_n>).

    Without ``u0`` the start is delta_0 and the product identity is exact.
    With ``u0`` the factor E exp(<lambda, Z_0>) is included.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    total = _log_pi_over_n1(mgf_minus_one(dist, lam), n)
    if u0 is not None:
        pts, m = u0.support()
        s = pts @ lam
        top = float(s.max())
        total += top + math.log(float(m @ np.exp(s - top)))
    return total / math.log(n)


def legendre_transform(x, log_mgf: Callable, grad: Callable, hess: Callable, max_norm: float,
                       max_iter: int = NEWTON_MAX_ITER) -> RateFunctionResult:
    """sup_lambda <x, lambda> - log_mgf(lambda) by safeguarded Newton.

    Starts at lambda = 0, halves steps until the objective increases, and
    declares divergence once |lambda| passes 60/max_norm while the gradient
    stays bounded away from zero.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    d = x.size
    threshold = DIVERGENCE_EXPONENT / max(max_norm, 1.0)
    max_step = threshold / 4.0

    def objective(lam):
        try:
            return float(x @ lam) - log_mgf(lam)
        except MGFOverflowError:
            return -math.inf

    lam = np.zeros(d)
    g = objective(lam)
    for it in range(1, max_iter + 1):
        ge = grad(lam)
        resid = x - ge
        rnorm = float(np.linalg.norm(resid))
        if rnorm <= NEWTON_GRAD_TOL * max(1.0, float(np.linalg.norm(ge)), float(np.linalg.norm(x))):
            return RateFunctionResult(x, g, lam, CONVERGED, it)
        if float(np.linalg.norm(lam)) > threshold:
            if rnorm > DIVERGENCE_GRAD_TOL * max(1.0, float(np.linalg.norm(x))):
                return RateFunctionResult(x, math.inf, None, DIVERGED, it)
            return RateFunctionResult(x, g, lam, CONVERGED, it)
        h = hess(lam)
        try:
            c = np.linalg.cholesky(h)
            step = np.linalg.solve(c.T, np.linalg.solve(c, resid))
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h + 1e-12 * max(float(np.trace(h)), 1e-300) * np.eye(d), resid, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            # flat directions (e.g. a point-mass law): ascend along the gradient
            step = resid.copy()
        snorm = float(np.linalg.norm(step))
        if snorm > max_step:
            step *= max_step / snorm
        t = 1.0
        # a full Newton step may leave g flat at rounding level near the optimum
        slack = 1e-14 * (1.0 + abs(g))
        for k in range(MAX_HALVINGS):
            cand = lam + t * step
            gc = objective(cand)
            if gc > g or (k == 0 and gc >= g - slack):
                break
            t *= 0.5
        else:
            ok = rnorm <= 1e-8 * max(1.0, float(np.linalg.norm(ge)))
            return RateFunctionResult(x, g if ok else math.nan, lam if ok else None,
                                      CONVERGED if ok else "stalled", it)
        lam, g = cand, gc
    raise RuntimeError(f"Newton did not converge in {max_iter} iterations for x = {x}")


def rate_function_numeric(x, dist: IncrementDistribution) -> RateFunctionResult:
    """I(x) = sup_lambda <x, lambda> - e(lambda) + 1."""
    return legendre_transform(
        x,
        lambda lam: mgf_minus_one(dist, lam),
        lambda lam: mgf_gradient(dist, lam),
        lambda lam: mgf_hessian(dist, lam),
        dist.max_norm,
    )


def rate_function_closed(example: str, x: float) -> float:
    if example == "det1d":
        if x < 0:
            return math.inf
        if x == 0:
            return 1.0
        return x * math.log(x) - x + 1.0
    if example == "ssrw1d":
        return x * math.asinh(x) - math.sqrt(1.0 + x * x) + 1.0
    raise ValueError(f"no closed-form rate function for {example!r}")


def _logsumexp_weights(s: np.ndarray, m: np.ndarray):
    top = float(s.max())
    w = m * np.exp(s - top)
    return top, w


def legendre_from_pmf(x, pmf: LatticePmf) -> RateFunctionResult:
    """Cramer rate function of a lattice law, via its log-MGF log sum m(w) e^{<lambda,w>}."""
    pts, m = pmf.support()
    ptsf = pts.astype(float)

    def log_mgf(lam):
        top, w = _logsumexp_weights(ptsf @ lam, m)
        return top + math.log(float(w.sum()))

    def grad(lam):
        _, w = _logsumexp_weights(ptsf @ lam, m)
        return (w @ ptsf) / w.sum()

    def hess(lam):
        _, w = _logsumexp_weights(ptsf @ lam, m)
        w = w / w.sum()
        mean = w @ ptsf
        c = ptsf - mean
        return (c.T * w) @ c

    max_norm = max(float(np.max(np.linalg.norm(ptsf, axis=1))), 1.0)
    return legendre_transform(x, log_mgf, grad, hess, max_norm)


# compound Poisson oracle

def _poisson_weights(mass_tolerance: float) -> tuple[np.ndarray, float]:
    """e^{-1}/k! for k = 0..K with the Poisson(1) tail beyond K below tolerance."""
    terms = [math.exp(-1.0)]
    while True:
        k = len(terms)
        tail, t = 0.0, terms[-1]
        for i in range(k, k + 60):
            t /= i
            tail += t
            if t < 1e-30 * tail:
                break
        if tail < mass_tolerance:
            return np.array(terms), tail
        terms.append(terms[-1] / k)


def compound_poisson_pmf(dist: IncrementDistribution, mass_tolerance: float = 1e-12) -> tuple[LatticePmf, float]:
    """Law of W = X_1 + ... + X_N with N ~ Poisson(1), truncated at N <= K.

    Returns the sub-probability pmf and the truncated Poisson tail mass.
    """
    if not 0.0 < mass_tolerance <= 1e-6:
        raise ValueError("mass_tolerance must lie in (0, 1e-6]")
    weights, deficit = _poisson_weights(mass_tolerance)
    kmax = len(weights) - 1
    lo_atom = np.minimum(dist.points.min(axis=0), 0)
    hi_atom = np.maximum(dist.points.max(axis=0), 0)
    shape = tuple(int(s) for s in kmax * (hi_atom - lo_atom) + 1)
    lower = kmax * lo_atom
    total = np.zeros(shape)
    power = np.zeros(shape)
    origin = tuple(int(c) for c in -lower)
    power[origin] = 1.0
    total += weights[0] * power
    for k in range(1, kmax + 1):
        nxt = np.zeros(shape)
        for w, q in zip(dist.points, dist.probs):
            src = tuple(slice(max(0, -int(c)), s - max(0, int(c))) for c, s in zip(w, shape))
            dst = tuple(slice(max(0, int(c)), s - max(0, -int(c))) for c, s in zip(w, shape))
            nxt[dst] += q * power[src]
        power = nxt
        total += weights[k] * power
    return LatticePmf(tuple(int(c) for c in lower), total, mass_tol=None), deficit


def _poisson_one_inversion(u: np.ndarray) -> np.ndarray:
    """Poisson(1) by sequential search from k = 0."""
    k = np.zeros(u.shape, dtype=np.int64)
    p = math.exp(-1.0)
    cdf = p
    active = u > cdf
    i = 0
    while np.any(active) and i < 200:
        i += 1
        p /= i
        cdf += p
        k[active] += 1
        active &= u > cdf
    return k


def compound_poisson_sample(dist: IncrementDistribution, rng: np.random.Generator) -> tuple[int, ...]:
    return tuple(int(c) for c in compound_poisson_sample_batch(dist, 1, rng)[0])


def compound_poisson_sample_batch(dist: IncrementDistribution, size: int, rng: np.random.Generator) -> np.ndarray:
    n = _poisson_one_inversion(rng.random(size))
    return sum_of_increments(n, dist, rng)


# tails

def _upper_count(a: float, n: int) -> int:
    """Smallest integer z with z >= a log n."""
    return math.ceil(a * math.log(n))


def _lower_count(b: float, n: int) -> int:
    return math.floor(b * math.log(n))


@dataclass
class TailEstimate:
    estimate: float
    std_err: float
    rel_std_err: float
    lambda_star: float
    samples: int


def tilted_tail_mc(n: int, a: float, dist: IncrementDistribution, samples: int,
                   rng: np.random.Generator) -> TailEstimate:
    """Importance-sampling estimate of P(Z_n >= a log n) for Z_0 = 0.

    Every mixture (j/(j+1)) delta_0 + (1/(j+1)) p is tilted by e^{lambda* z}.
    Under the tilt, selection j happens with probability e/(j+e) and the
    selected increment has law p(u) e^{lambda* u} / e, where e = e(lambda*).
    The likelihood ratio is exp(-lambda* Z_n) prod_j (j+e)/(j+1).
    """
    if dist.dim != 1:
        raise ValueError("tilted tail estimation is one-dimensional")
    mu = float(dist.mean[0])
    if a < mu:
        raise ValueError("upper tail needs a >= mu; reflect the distribution for lower tails")
    res = rate_function_numeric([a], dist)
    if not res.converged:
        raise ValueError(f"rate function diverges at a = {a}; no tilting parameter")
    lam = float(res.lambda_star[0])
    em1 = mgf_minus_one(dist, [lam])
    e = 1.0 + em1
    tilted_probs = dist.probs * np.exp(lam * dist.points[:, 0]) / e
    tilted = IncrementDistribution(1, dist.points, tilted_probs / tilted_probs.sum())
    pk = selection_count_pmf(n, e)
    cum = np.cumsum(pk)
    k = np.minimum(np.searchsorted(cum, rng.random(samples) * cum[-1], side="right"), pk.size - 1)
    z = sum_of_increments(k, tilted, rng)[:, 0]
    log_norm = _log_pi_over_n1(em1, n)
    hit = z >= _upper_count(a, n)
    vals = np.where(hit, np.exp(-lam * z + log_norm), 0.0)
    est = float(vals.mean())
    se = float(vals.std(ddof=1)) / math.sqrt(samples)
    return TailEstimate(est, se, se / est if est > 0 else math.inf, lam, samples)


@dataclass
class TailRecord:
    n: int
    side: str
    tail_prob: float
    std_err: float
    exponent: float
    target_I: float
    method: str


def tail_exponent_report(n_list: Sequence[int], eps: float, dist: IncrementDistribution,
                         u0: LatticePmf | None = None, mode: str = "auto", samples: int = 200_000,
                         rng: np.random.Generator | None = None, sides: Sequence[str] = ("upper", "lower")
                         ) -> list[TailRecord]:
    """-(1/log n) log P(Z_n/log n >= mu+eps) (and <= mu-eps) next to I(mu +- eps)."""
    if dist.dim != 1:
        raise ValueError("tail exponents are reported in dimension one")
    if not eps > 0:
        raise ValueError("eps must be positive")
    mu = float(dist.mean[0])
    targets = {
        "upper": rate_function_numeric([mu + eps], dist).value,
        "lower": rate_function_numeric([mu - eps], dist).value,
    }
    out = []
    for n in n_list:
        if n < 2:
            raise ValueError("n must be at least 2")
        use_exact = mode == "exact" or (mode == "auto" and exact_pmf_budget_ok(n, 1))
        pmf = exact_pmf(n, u0 or LatticePmf.delta((0,)), dist) if use_exact else None
        for side in sides:
            if use_exact:
                if side == "upper":
                    p = pmf.upper_tail([_upper_count(mu + eps, n)])
                else:
                    p = pmf.lower_tail([_lower_count(mu - eps, n)])
                se, method = 0.0, "exact"
            else:
                if u0 is not None and not (u0.masses.size == 1 and u0.lower == (0,)):
                    raise ValueError("tilted Monte Carlo assumes U_0 = delta_0")
                if rng is None:
                    raise ValueError("Monte Carlo tails need a seeded generator")
                if side == "upper":
                    if math.isinf(targets["upper"]):
                        p, se = 0.0, 0.0
                    else:
                        t = tilted_tail_mc(n, mu + eps, dist, samples, rng)
                        p, se = t.estimate, t.std_err
                else:
                    if math.isinf(targets["lower"]):
                        p, se = 0.0, 0.0
                    else:
                        t = tilted_tail_mc(n, -(mu - eps), dist.reflected(), samples, rng)
                        p, se = t.estimate, t.std_err
                method = "tilted_mc"
            exponent = -math.log(p) / math.log(n) if p > TRIM_BELOW else math.inf
            out.append(TailRecord(n, side, p, se, exponent, targets[side], method))
    return out


# rate function structure

@dataclass
class PropertyReport:
    checks: dict[str, bool] = field(default_factory=dict)
    failures: dict[str, list[str]] = field(default_factory=dict)
    details: dict[str, float] = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {"all_passed": self.all_passed, "checks": self.checks, "failures": self.failures,
                "details": self.details}


def sphere_max_mgf(dist: IncrementDistribution) -> float:
    """max of e(lambda) over the unit sphere, by dense search."""
    d = dist.dim
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif d == 2:
        t = np.deg2rad(np.arange(360.0))
        dirs = np.stack([np.cos(t), np.sin(t)], axis=1)
    else:
        # Fibonacci-like deterministic cover from a fixed seed
        g = np.random.default_rng(0).standard_normal((20_000, d))
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
        dirs = np.concatenate([dirs, np.eye(d), -np.eye(d)])
    return max(mgf(dist, u) for u in dirs)


def _one_sided_sup(x: float, dist: IncrementDistribution, sign: int) -> float:
    """sup over sign*lambda >= 0 of x lambda - e(lambda) + 1, by bounded Brent search."""
    from scipy.optimize import minimize_scalar

    bound = DIVERGENCE_EXPONENT / max(dist.max_norm, 1.0)

    def neg(t):
        return -(x * sign * t - mgf_minus_one(dist, [sign * t]))

    r = minimize_scalar(neg, bounds=(0.0, bound), method="bounded", options={"xatol": 1e-12, "maxiter": 500})
    t = float(r.x)
    grad = x - float(mgf_gradient(dist, [sign * t])[0])
    if t > bound * (1 - 1e-6) and sign * grad > DIVERGENCE_GRAD_TOL:
        return math.inf
    return max(-float(r.fun), 0.0)


def rate_properties(dist: IncrementDistribution, grid) -> PropertyReport:
    """Convexity, one-dimensional monotonicity, growth bound and I(mu) = min."""
    pts = np.asarray(grid, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[1] != dist.dim:
        raise ValueError("grid dimension mismatch")
    rep = PropertyReport()
    vals = np.array([rate_function_numeric(p, dist).value for p in pts])

    fails = []
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            mid = rate_function_numeric(0.5 * (pts[a] + pts[b]), dist).value
            rhs = 0.5 * (vals[a] + vals[b])
            if not mid <= rhs + CONVEXITY_TOL:
                fails.append(f"I(mid({pts[a].tolist()},{pts[b].tolist()}))={mid} > {rhs}")
    rep.checks["convexity"] = not fails
    rep.failures["convexity"] = fails

    fails = []
    if dist.dim == 1:
        mu = float(dist.mean[0])
        order = np.argsort(pts[:, 0])
        xs, ys = pts[order, 0], vals[order]
        for k in range(len(xs) - 1):
            if xs[k] >= mu and not ys[k + 1] >= ys[k] - MONOTONE_TOL:
                fails.append(f"I decreases right of mu between {xs[k]} and {xs[k + 1]}")
            if xs[k + 1] <= mu and not ys[k] >= ys[k + 1] - MONOTONE_TOL:
                fails.append(f"I increases left of mu between {xs[k]} and {xs[k + 1]}")
        for xv, iv in zip(xs, ys):
            one = _one_sided_sup(xv, dist, 1 if xv >= mu else -1)
            same = (math.isinf(one) and math.isinf(iv)) or abs(one - iv) <= MONOTONE_TOL
            if not same:
                fails.append(f"one-sided sup {one} differs from I({xv}) = {iv}")
    rep.checks["monotonicity"] = not fails
    rep.failures["monotonicity"] = fails

    e0 = sphere_max_mgf(dist)
    rep.details["e_lambda0"] = e0
    fails = []
    for p, v in zip(pts, vals):
        lower = float(np.linalg.norm(p)) - e0 + 1.0
        if not v >= lower - 1e-10:
            fails.append(f"I({p.tolist()}) = {v} < growth bound {lower}")
    rep.checks["growth_bound"] = not fails
    rep.failures["growth_bound"] = fails

    at_mu = rate_function_numeric(dist.mean, dist)
    rep.details["I_mu"] = at_mu.value
    fails = []
    if not (at_mu.converged and abs(at_mu.value) <= 1e-12):
        fails.append(f"I(mu) = {at_mu.value}")
    if np.any(vals < at_mu.value - 1e-12):
        fails.append(f"grid minimum {float(vals.min())} below I(mu)")
    rep.checks["minimum_at_mean"] = not fails
    rep.failures["minimum_at_mean"] = fails
    return rep


# CSV writers

def write_lambda_csv(rows: Sequence[tuple], fh: TextIO) -> None:
    """Rows of (n, lambda, Lambda_n, e(lambda) - 1); vector lambdas are written a:b."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["n", "lambda", "Lambda_n", "limit", "gap"])
    for n, lam, val, lim in rows:
        lam_s = ":".join(f"{c:.12g}" for c in np.atleast_1d(lam))
        w.writerow([n, lam_s, f"{val:.12g}", f"{lim:.12g}", f"{val - lim:.12g}"])


def write_rate_csv(rows: Sequence[tuple[float, RateFunctionResult, float | None]], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["x", "I_numeric", "I_closed", "abs_err", "lambda_star"])
    for x, res, closed in rows:
        err = "" if closed is None else f"{abs(res.value - closed) if math.isfinite(closed) else 0.0:.12g}"
        lam = "" if res.lambda_star is None else ";".join(f"{c:.12g}" for c in res.lambda_star)
        w.writerow([f"{x:.12g}", f"{res.value:.12g}", "" if closed is None else f"{closed:.12g}", err, lam])


def write_tail_csv(records: Sequence[TailRecord], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["n", "tail_prob", "std_err", "exponent", "target_I"])
    for r in records:
        w.writerow([r.n, f"{r.tail_prob:.12g}", f"{r.std_err:.12g}", f"{r.exponent:.12g}", f"{r.target_I:.12g}"])
