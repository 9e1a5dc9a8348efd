"""Berry-Esseen quantities for Z_n and measured distances against them.

Two pipelines:

* one-dimensional, with the explicit constant 2.75 when U_0 = delta_0;
* d-dimensional, where the constant C(d) is unknown and only the ratio
  measured / (rho3 / (sqrt(n) rho2^{3/2})) is reported.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from . import numerics
from .increments import IncrementDistribution, abs_third_moment
from .numerics import NotPositiveDefiniteError, std_normal_cdf_array
from .urn_core import LatticePmf, exact_pmf, exact_pmf_budget_ok, sample_z_counts_batch

BE1_CONSTANT = 2.75
MC_GRID_PER_AXIS = 64
DKW_DELTA = 0.05


class DegenerateIncrementsError(NotPositiveDefiniteError):
    pass


@dataclass
class BEReport:
    n: int
    h_n: float
    rho2: float
    rho3: float
    bound_value: float
    measured_distance: float
    centering: np.ndarray
    scaling: str
    mode: str = "exact"
    error_bar: float = 0.0
    evaluation_points: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.measured_distance / self.bound_value


def _weights(n: int) -> np.ndarray:
    """1/(j+1) for j = 1..n."""
    return 1.0 / np.arange(2, n + 2, dtype=float)


def harmonic_tail(n: int) -> float:
    """h_n = sum_{j=1}^n 1/(j+1)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return 0.0
    return math.fsum(_weights(n))


def rho_moments_1d(n: int, dist: IncrementDistribution) -> tuple[float, float]:
    if dist.dim != 1:
        raise ValueError("rho_moments_1d needs a one-dimensional distribution")
    if n < 1:
        raise ValueError("n must be at least 1")
    mu = float(dist.mean[0])
    sigma2 = float(dist.second_moment[0, 0])
    r = _weights(n)
    j = np.arange(1, n + 1, dtype=float)
    rho2 = (sigma2 * math.fsum(r) - mu * mu * math.fsum(r * r)) / n
    third = abs_third_moment(dist, 0, mu * r)
    rho3 = (math.fsum(r * third) + abs(mu) ** 3 * math.fsum(j * r ** 4)) / n
    return rho2, rho3


def be_bound_1d(n: int, dist: IncrementDistribution) -> float:
    rho2, rho3 = rho_moments_1d(n, dist)
    if rho2 <= 0.0:
        raise DegenerateIncrementsError(f"rho2 = {rho2} is not positive")
    return BE1_CONSTANT * bound_shape(n, rho2, rho3)


def bound_shape(n: int, rho2: float, rho3: float) -> float:
    """Lyapunov ratio sum E|Y_j|^3 / (sum Var Y_j)^{3/2} = rho3 / (sqrt(n) rho2^{3/2}).

    This is the normalisation of the classical bound for independent,
    non-identical summands and decays like 1/sqrt(log n).
    """
    return rho3 / (math.sqrt(n) * rho2 ** 1.5)


def printed_bound_shape(n: int, rho2: float, rho3: float) -> float:
    """sqrt(n) rho3 / rho2^{3/2}; grows like n / sqrt(log n), kept for comparison."""
    return math.sqrt(n) * rho3 / rho2 ** 1.5


def kolmogorov_distance_1d(pmf: LatticePmf, center: float, scale: float) -> float:
    """sup_x |P((Z - center)/scale <= x) - Phi(x)| for a lattice law, exactly.

    Between jumps the CDF is flat and Phi increases, so the supremum is
    attained at a jump, either at the value or at the left limit.
    """
    if pmf.dim != 1:
        raise ValueError("pmf must be one-dimensional")
    if not scale > 0.0:
        raise ValueError("scale must be positive")
    pts = pmf.grid_points()[0].astype(float)
    cdf = np.cumsum(pmf.masses)
    left = np.concatenate(([0.0], cdf[:-1]))
    phi = std_normal_cdf_array((pts - center) / scale)
    return float(max(np.max(np.abs(cdf - phi)), np.max(np.abs(left - phi))))


def kolmogorov_distance_samples_1d(samples: np.ndarray, center: float, scale: float,
                                   delta: float = DKW_DELTA) -> tuple[float, float]:
    """Empirical Kolmogorov distance and its DKW half-width at level ``delta``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = x.size
    vals, last = np.unique(x, return_index=False, return_counts=True)
    cdf = np.cumsum(last) / m
    left = np.concatenate(([0.0], cdf[:-1]))
    phi = std_normal_cdf_array((vals - center) / scale)
    dist = float(max(np.max(np.abs(cdf - phi)), np.max(np.abs(left - phi))))
    return dist, math.sqrt(math.log(2.0 / delta) / (2.0 * m))


def sigma_n_matrix(n: int, dist: IncrementDistribution, with_inverse_root: bool = False):
    """Sigma_n = sum_j (1/(j+1)) (Sigma - M/(j+1)); optionally also Sigma_n^{-1/2}."""
    if n < 1:
        raise ValueError("n must be at least 1")
    r = _weights(n)
    s = math.fsum(r) * dist.second_moment - math.fsum(r * r) * dist.mean_outer
    if not with_inverse_root:
        return s
    try:
        return s, numerics.spd_sqrt_inverse(s)
    except NotPositiveDefiniteError as exc:
        raise DegenerateIncrementsError(f"Sigma_n is degenerate: {exc}") from exc


@dataclass
class RhoD:
    rho2: float
    rho3: float
    gammas: np.ndarray
    betas: np.ndarray  # shape (n, d): betas[j-1, i-1] = beta_j(i)


def _det_along(a: np.ndarray, b: np.ndarray, r: np.ndarray) -> np.ndarray:
    """det(a - r b) for every r, where b has rank <= 1 (so the result is affine in r)."""
    d0 = numerics.determinant(a)
    d1 = numerics.determinant(a - b)
    return d0 + r * (d1 - d0)


def _minor_dets(sigma: np.ndarray, m_outer: np.ndarray, i: int, r: np.ndarray) -> np.ndarray:
    return _det_along(numerics.minor(sigma, i, i), numerics.minor(m_outer, i, i), r)


def rho_moments_d(n: int, dist: IncrementDistribution) -> RhoD:
    """rho2^(d), rho3^(d), gamma_n(i) and beta_j(i).

    For d = 1 the minors are 0x0 with determinant 1, which reproduces the
    convention Sigma(1,1) = 1, M(1,1) = 0.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    d = dist.dim
    sigma, m_outer, mu = dist.second_moment, dist.mean_outer, dist.mean
    r = _weights(n)
    denom = _minor_dets(sigma, m_outer, 1, r)
    if np.any(denom <= 0.0):
        raise DegenerateIncrementsError("nonpositive determinant det(Sigma(1,1) - M(1,1)/(j+1))")
    full = _det_along(sigma, m_outer, r)
    rho2 = math.fsum(r * full / denom) / n
    gammas = np.empty(d)
    for i in range(1, d + 1):
        num = denom if i == 1 else _minor_dets(sigma, m_outer, i, r)
        gammas[i - 1] = math.sqrt(max(float(np.max(num / denom)), 0.0))
    j = np.arange(1, n + 1, dtype=float)
    betas = np.empty((n, d))
    for i in range(d):
        betas[:, i] = r * abs_third_moment(dist, i, mu[i] * r) + j * r ** 4 * abs(mu[i]) ** 3
    rho3 = math.fsum((betas * gammas ** 3).ravel()) / (n * d)
    return RhoD(rho2, rho3, gammas, betas)


def multivariate_sup_distance(pmf: LatticePmf | None, center, whitener, samples: np.ndarray | None = None,
                              grid_per_axis: int = MC_GRID_PER_AXIS, chunk: int = 2048) -> tuple[float, int]:
    """Lower bound on sup_x |P((Z - center) W <= x) - Phi_d(x)|.

    Exact mode (``pmf`` given): evaluated at every transformed support point,
    both at the point and as a left limit.  Monte Carlo mode (``samples``
    given): transformed sample points plus a grid of ``grid_per_axis`` values
    per axis.  Returns ``(distance, number of evaluation points)``.
    """
    w = numerics.as_square(whitener, allow_empty=False)
    if abs(numerics.determinant(w)) < 1e-300:
        raise ValueError("whitener is not invertible")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if pmf is not None:
        pts, mass = pmf.support()
        mass = mass / mass.sum()
        y = (pts - center) @ w
        evals = y
    else:
        s = np.asarray(samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        y = (s - center) @ w
        y, counts = np.unique(y, axis=0, return_counts=True)
        mass = counts / counts.sum()
        axes = [np.linspace(y[:, k].min(), y[:, k].max(), grid_per_axis) for k in range(y.shape[1])]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, y.shape[1])
        evals = np.concatenate([y, mesh])
    phi = np.prod(std_normal_cdf_array(evals), axis=1)
    best = 0.0
    for start in range(0, evals.shape[0], chunk):
        e = evals[start:start + chunk]
        le = np.all(y[None, :, :] <= e[:, None, :], axis=2)
        lt = np.all(y[None, :, :] < e[:, None, :], axis=2)
        f = le @ mass
        fl = lt @ mass
        p = phi[start:start + chunk]
        best = max(best, float(np.max(np.abs(f - p))), float(np.max(np.abs(fl - p))))
    return best, int(evals.shape[0])


def rate_regression(n_list: Sequence[int], distances: Sequence[float]) -> float:
    """Least-squares slope of log(distance) against log(log n)."""
    n = np.asarray(n_list, dtype=float)
    dd = np.asarray(distances, dtype=float)
    if n.size < 4 or n.size != dd.size:
        raise ValueError("need at least 4 (n, distance) pairs")
    if np.any(dd <= 0.0) or np.any(n < 2):
        raise ValueError("distances must be positive and n >= 2")
    x = np.log(np.log(n))
    y = np.log(dd)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("degenerate regression: all n equal")
    return float(xc @ (y - y.mean())) / sxx


def _is_delta0(u0: LatticePmf) -> bool:
    return u0.masses.size == 1 and all(c == 0 for c in u0.lower)


def be_report_1d(n_list: Sequence[int], dist: IncrementDistribution, u0: LatticePmf | None = None,
                 form: str = "be1", mode: str = "exact", samples: int = 200_000,
                 rng: np.random.Generator | None = None) -> list[BEReport]:
    """Per-n report for the one-dimensional bound.

    ``form="be1"`` centers at mu h_n, scales by sqrt(n rho2) and uses the
    constant 2.75 (requires U_0 = delta_0).  ``form="general"`` centers at
    mu log n, scales by sigma sqrt(log n), and reports the bound with C = 1.
    """
    if dist.dim != 1:
        raise ValueError("one-dimensional report needs a one-dimensional distribution")
    u0 = u0 or LatticePmf.delta((0,))
    if form == "be1" and not _is_delta0(u0):
        raise ValueError("the explicit-constant bound assumes U_0 = delta_0")
    if form not in ("be1", "general"):
        raise ValueError(f"unknown form {form!r}")
    mu = float(dist.mean[0])
    sigma = math.sqrt(float(dist.second_moment[0, 0]))
    out = []
    for n in n_list:
        rho2, rho3 = rho_moments_1d(n, dist)
        if rho2 <= 0.0:
            raise DegenerateIncrementsError(f"rho2 = {rho2} at n = {n}")
        h = harmonic_tail(n)
        if form == "be1":
            center, scale = mu * h, math.sqrt(n * rho2)
            bound = BE1_CONSTANT * bound_shape(n, rho2, rho3)
            scaling = f"sqrt(n*rho2)={scale:.12g}"
        else:
            if n < 2:
                raise ValueError("general form needs n >= 2")
            ln = math.log(n)
            center, scale = mu * ln, sigma * math.sqrt(ln)
            bound = bound_shape(n, rho2, rho3)
            scaling = f"sigma*sqrt(log n)={scale:.12g}"
        use_exact = mode == "exact" or (mode == "auto" and exact_pmf_budget_ok(n, 1))
        if use_exact:
            pmf = exact_pmf(n, u0, dist)
            distance, err, npts = kolmogorov_distance_1d(pmf, center, scale), 0.0, pmf.masses.size
            used = "exact"
        else:
            if rng is None:
                raise ValueError("Monte Carlo mode needs a seeded generator")
            z = sample_z_counts_batch(n, u0, dist, samples, rng)[:, 0]
            distance, err = kolmogorov_distance_samples_1d(z, center, scale)
            npts, used = samples, "mc"
        out.append(BEReport(n, h, rho2, rho3, bound, distance, np.array([center]), scaling, used, err, npts))
    return out


def be_report_d(n_list: Sequence[int], dist: IncrementDistribution, u0: LatticePmf | None = None,
                form: str = "be_d", mode: str = "exact", samples: int = 20_000,
                rng: np.random.Generator | None = None) -> list[BEReport]:
    """Per-n report for the d-dimensional bound (constant omitted)."""
    d = dist.dim
    u0 = u0 or LatticePmf.delta((0,) * d)
    if form == "be_d" and not _is_delta0(u0):
        raise ValueError("the Sigma_n-whitened bound assumes U_0 = delta_0")
    if form not in ("be_d", "general"):
        raise ValueError(f"unknown form {form!r}")
    out = []
    for n in n_list:
        rd = rho_moments_d(n, dist)
        h = harmonic_tail(n)
        if form == "be_d":
            center = dist.mean * h
            _, whitener = sigma_n_matrix(n, dist, with_inverse_root=True)
            scaling = "Sigma_n^{-1/2}"
        else:
            ln = math.log(n)
            center = dist.mean * ln
            try:
                whitener = numerics.spd_sqrt_inverse(dist.second_moment) / math.sqrt(ln)
            except NotPositiveDefiniteError as exc:
                raise DegenerateIncrementsError(str(exc)) from exc
            scaling = "Sigma^{-1/2}/sqrt(log n)"
        use_exact = mode == "exact" or (mode == "auto" and exact_pmf_budget_ok(n, d))
        if use_exact:
            pmf = exact_pmf(n, u0, dist)
            distance, npts = multivariate_sup_distance(pmf, center, whitener)
            err, used = 0.0, "exact"
        else:
            if rng is None:
                raise ValueError("Monte Carlo mode needs a seeded generator")
            z = sample_z_counts_batch(n, u0, dist, samples, rng)
            distance, npts = multivariate_sup_distance(None, center, whitener, samples=z)
            err, used = math.sqrt(math.log(2.0 / DKW_DELTA) / (2.0 * samples)), "mc"
        bound = bound_shape(n, rd.rho2, rd.rho3)
        out.append(BEReport(n, h, rd.rho2, rd.rho3, bound, distance, center.copy(), scaling, used, err, npts,
                            {"gammas": rd.gammas.tolist()}))
    return out


CSV_HEADER = ["n", "h_n", "rho2", "rho3", "bound", "distance", "ratio"]


def write_report_csv(reports: Sequence[BEReport], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(reports, key=lambda r: r.n):
        w.writerow([r.n] + [f"{v:.12g}" for v in (r.h_n, r.rho2, r.rho3, r.bound_value,
                                                   r.measured_distance, r.ratio)])
