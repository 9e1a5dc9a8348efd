"""Infinite-color urn dynamics, samplers for Z_n and its exact law.

Z_n is the (n+1)-th color drawn from the urn.  It has two samplers that
should agree in law:

* direct: run the urn for n steps, then draw one color from U_n / (n+1);
* representation: Z_0 + sum_j I_j X_j with I_j ~ Bernoulli(1/(j+1)).

``exact_pmf`` convolves u0 with the mixtures (j/(j+1)) delta_0 + (1/(j+1)) p
and serves as the oracle for both.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .increments import IncrementDistribution

TRIM_BELOW = 1e-300
PMF_MASS_TOL = 1e-12
URN_MASS_TOL = 1e-9
DEFAULT_MAX_CELLS = 4_000_000
HISTORY_CELLS = 20_000_000
DEFAULT_CHUNK = 100_000
# exact_pmf is served up to these n (per dimension); larger n go to Monte Carlo
EXACT_N_BUDGET = {1: 100_000, 2: 1_000}
EXACT_N_BUDGET_HIGHER = 100


class BudgetExceededError(RuntimeError):
    """The requested exact computation exceeds its resource budget."""


def _trim(lower: tuple[int, ...], arr: np.ndarray) -> tuple[tuple[int, ...], np.ndarray]:
    arr[arr < TRIM_BELOW] = 0.0
    new_lower = list(lower)
    slices = []
    for axis in range(arr.ndim):
        other = tuple(k for k in range(arr.ndim) if k != axis)
        nz = np.flatnonzero(np.any(arr > 0.0, axis=other) if other else arr > 0.0)
        if nz.size == 0:
            raise ValueError("pmf has no mass left after trimming")
        slices.append(slice(int(nz[0]), int(nz[-1]) + 1))
        new_lower[axis] += int(nz[0])
    return tuple(new_lower), np.ascontiguousarray(arr[tuple(slices)])


@dataclass(frozen=True)
class LatticePmf:
    """Probability mass function on a box of Z^d.

    ``masses[k]`` is the mass at ``lower + k``.  ``mass_tol=None`` skips the
    unit-mass check (used for truncated, sub-probability laws).
    """

    lower: tuple[int, ...]
    masses: np.ndarray
    mass_tol: float | None = field(default=PMF_MASS_TOL, repr=False, compare=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.masses, dtype=float)
        lower = tuple(int(c) for c in self.lower)
        if arr.ndim != len(lower):
            raise ValueError("masses rank must equal the dimension of lower")
        if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
            raise ValueError("masses must be finite and nonnegative")
        lower, arr = _trim(lower, arr.copy())
        if self.mass_tol is not None:
            total = math.fsum(arr.ravel())
            if abs(total - 1.0) > self.mass_tol:
                raise ValueError(f"pmf total mass {total!r} is not 1")
        arr.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "masses", arr)

    @classmethod
    def delta(cls, point: Sequence[int]) -> "LatticePmf":
        return cls(tuple(point), np.ones((1,) * len(point)))

    @classmethod
    def from_points(cls, items: Iterable[tuple[Sequence[int], float]], mass_tol: float | None = PMF_MASS_TOL) -> "LatticePmf":
        items = [(tuple(int(c) for c in p), float(m)) for p, m in items]
        if not items:
            raise ValueError("empty pmf")
        pts = np.array([p for p, _ in items], dtype=np.int64)
        lower = pts.min(axis=0)
        shape = tuple(pts.max(axis=0) - lower + 1)
        arr = np.zeros(shape)
        for p, m in items:
            arr[tuple(np.array(p) - lower)] += m
        return cls(tuple(lower), arr, mass_tol)

    @classmethod
    def uniform(cls, a: int, b: int) -> "LatticePmf":
        if b < a:
            raise ValueError("empty range")
        return cls((a,), np.full(b - a + 1, 1.0 / (b - a + 1)))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def upper(self) -> tuple[int, ...]:
        return tuple(lo + s - 1 for lo, s in zip(self.lower, self.masses.shape))

    def total(self) -> float:
        return math.fsum(self.masses.ravel())

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Support points (lexicographic order) and their masses."""
        idx = np.nonzero(self.masses)
        pts = np.stack(idx, axis=1).astype(np.int64) + np.array(self.lower, dtype=np.int64)
        return pts, self.masses[idx]

    def grid_points(self) -> list[np.ndarray]:
        return [np.arange(lo, lo + s) for lo, s in zip(self.lower, self.masses.shape)]

    def mass_at(self, point: Sequence[int]) -> float:
        k = tuple(int(c) - lo for c, lo in zip(point, self.lower))
        if any(i < 0 or i >= s for i, s in zip(k, self.masses.shape)):
            return 0.0
        return float(self.masses[k])

    def to_dict(self) -> dict[tuple[int, ...], float]:
        pts, m = self.support()
        return {tuple(int(c) for c in p): float(v) for p, v in zip(pts, m)}

    def mean(self) -> np.ndarray:
        pts, m = self.support()
        return (m @ pts) / m.sum()

    def covariance(self) -> np.ndarray:
        pts, m = self.support()
        w = m / m.sum()
        centred = pts - w @ pts
        return (centred.T * w) @ centred

    def cdf(self, x: Sequence[float]) -> float:
        """Mass of {u <= x} coordinate-wise."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        sl = []
        for c, lo, s in zip(x, self.lower, self.masses.shape):
            hi = int(math.floor(c)) - lo + 1
            if hi <= 0:
                return 0.0
            sl.append(slice(0, min(hi, s)))
        return float(self.masses[tuple(sl)].sum())

    def upper_tail(self, a: Sequence[float]) -> float:
        """Mass of {u >= a} coordinate-wise."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        sl = []
        for c, lo, s in zip(a, self.lower, self.masses.shape):
            start = int(math.ceil(c)) - lo
            if start >= s:
                return 0.0
            sl.append(slice(max(start, 0), s))
        return float(self.masses[tuple(sl)].sum())

    def lower_tail(self, b: Sequence[float]) -> float:
        return self.cdf(b)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        flat = self.masses.ravel()
        cum = np.cumsum(flat)
        u = rng.random(size) * cum[-1]
        k = np.minimum(np.searchsorted(cum, u, side="right"), flat.size - 1)
        idx = np.stack(np.unravel_index(k, self.masses.shape), axis=1)
        return idx.astype(np.int64) + np.array(self.lower, dtype=np.int64)

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"c{k + 1}" for k in range(self.dim)] + ["mass"])
        pts, m = self.support()
        for p, v in zip(pts, m):
            w.writerow([int(c) for c in p] + [repr(float(v))])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, source, mass_tol: float | None = PMF_MASS_TOL) -> "LatticePmf":
        """Read from an open text handle or a path."""
        if isinstance(source, (str, os.PathLike)):
            with open(source, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        else:
            rows = list(csv.reader(source))
        header = rows[0]
        d = len(header) - 1
        if d < 1 or header != [f"c{k + 1}" for k in range(d)] + ["mass"]:
            raise ValueError(f"unexpected pmf CSV header {header}")
        return cls.from_points(((tuple(int(c) for c in r[:d]), float(r[d])) for r in rows[1:] if r), mass_tol)


def pmf_stats(pmf: LatticePmf):
    """(mean, covariance, cdf, upper tail, lower tail) of a lattice pmf."""
    return pmf.mean(), pmf.covariance(), pmf.cdf, pmf.upper_tail, pmf.lower_tail


@dataclass
class UrnState:
    """Urn configuration U_n as a sparse map color -> weight."""

    time: int
    weights: dict[tuple[int, ...], float]
    total_mass: float

    @classmethod
    def initial(cls, u0: LatticePmf) -> "UrnState":
        return cls(0, u0.to_dict(), u0.total())

    @property
    def dim(self) -> int:
        return len(next(iter(self.weights)))

    def check(self) -> None:
        if abs(self.total_mass - (self.time + 1)) > URN_MASS_TOL:
            raise AssertionError(f"urn mass {self.total_mass} at time {self.time}")
        if any(w <= 0.0 for w in self.weights.values()):
            raise AssertionError("urn holds a nonpositive weight")

    def draw(self, rng: np.random.Generator) -> tuple[int, ...]:
        # cumulative scan over the sparse entries
        target = rng.random() * self.total_mass
        acc = 0.0
        chosen = None
        for color, w in self.weights.items():
            acc += w
            chosen = color
            if target < acc:
                break
        return chosen


def step(urn: UrnState, dist: IncrementDistribution, rng: np.random.Generator) -> tuple[UrnState, tuple[int, ...]]:
    """One urn step: draw V from U_n, then add row V of the replacement matrix."""
    if urn.dim != dist.dim:
        raise ValueError("urn and increment dimensions differ")
    v = urn.draw(rng)
    weights = dict(urn.weights)
    for w, q in dist.atoms():
        color = tuple(a + b for a, b in zip(v, w))
        weights[color] = weights.get(color, 0.0) + q
    return UrnState(urn.time + 1, weights, urn.total_mass + 1.0), v


def run_urn(n: int, u0: LatticePmf, dist: IncrementDistribution, rng: np.random.Generator) -> UrnState:
    urn = UrnState.initial(u0)
    for _ in range(n):
        urn, _ = step(urn, dist, rng)
    return urn


def sample_z_direct(n: int, u0: LatticePmf, dist: IncrementDistribution, rng: np.random.Generator) -> tuple[int, ...]:
    if n < 0:
        raise ValueError("n must be nonnegative")
    return run_urn(n, u0, dist, rng).draw(rng)


def sample_z_repr(n: int, u0: LatticePmf, dist: IncrementDistribution, rng: np.random.Generator) -> tuple[int, ...]:
    if n < 0:
        raise ValueError("n must be nonnegative")
    z = u0.sample(rng, 1)[0].copy()
    for j in range(1, n + 1):
        if rng.random() < 1.0 / (j + 1):
            z += dist.points[_draw_atom(dist, rng)]
    return tuple(int(c) for c in z)


def _draw_atom(dist: IncrementDistribution, rng: np.random.Generator, size=None):
    cum = np.cumsum(dist.probs)
    u = rng.random(size) * cum[-1]
    return np.minimum(np.searchsorted(cum, u, side="right"), dist.size - 1)


def _chunks(size: int, chunk: int):
    while size > 0:
        m = min(size, chunk)
        yield m
        size -= m


def sample_z_direct_batch(n: int, u0: LatticePmf, dist: IncrementDistribution, size: int,
                          rng: np.random.Generator, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """``size`` independent urn runs, vectorised over runs.

    U_t is U_0 plus one unit of mass per earlier draw s, and that unit is the
    law of (colour drawn at s) + X.  A draw from U_t / (t+1) therefore picks
    U_0 with probability 1/(t+1), otherwise a uniform earlier draw plus a
    fresh increment.  This follows the urn's reinforcement exactly without
    materialising the colour box.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if u0.dim != dist.dim:
        raise ValueError("u0 and increment dimensions differ")
    per_chunk = max(1, min(chunk, HISTORY_CELLS // (n + 1)))
    out = []
    for m in _chunks(size, per_chunk):
        hist = np.empty((n + 1, m, dist.dim), dtype=np.int64)
        cols = np.arange(m)
        for t in range(n + 1):
            s = np.minimum((rng.random(m) * (t + 1)).astype(np.int64), t)
            fresh = s == 0
            z = np.empty((m, dist.dim), dtype=np.int64)
            z[fresh] = u0.sample(rng, int(fresh.sum()))
            old = np.flatnonzero(~fresh)
            if old.size:
                z[old] = hist[s[old] - 1, cols[old]] + dist.points[_draw_atom(dist, rng, old.size)]
            hist[t] = z
        out.append(hist[n])
    return np.concatenate(out)


def sample_z_repr_batch(n: int, u0: LatticePmf, dist: IncrementDistribution, size: int,
                        rng: np.random.Generator, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Z_0 + sum_j I_j X_j, vectorised over draws, one Bernoulli per j."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    out = []
    for m in _chunks(size, chunk):
        z = u0.sample(rng, m)
        for j in range(1, n + 1):
            hit = np.flatnonzero(rng.random(m) < 1.0 / (j + 1))
            if hit.size:
                z[hit] += dist.points[_draw_atom(dist, rng, hit.size)]
        out.append(z)
    return np.concatenate(out)


def selection_count_pmf(n: int, weight: float = 1.0) -> np.ndarray:
    """Law of K = sum_{j<=n} B_j with B_j ~ Bernoulli(weight / (j + weight)).

    ``weight = 1`` gives the number of selected increments in the
    representation; ``weight = e(lambda)`` gives the same count under the
    exponentially tilted measure.
    """
    pk = np.array([1.0])
    for j in range(1, n + 1):
        q = weight / (j + weight)
        nxt = np.empty(pk.size + 1)
        nxt[:-1] = pk * (1.0 - q)
        nxt[-1] = 0.0
        nxt[1:] += pk * q
        if nxt[-1] < TRIM_BELOW:
            nxt = nxt[:-1]
        pk = nxt
    return pk


def sum_of_increments(counts: np.ndarray, dist: IncrementDistribution, rng: np.random.Generator) -> np.ndarray:
    """For each entry k of ``counts``, the sum of k i.i.d. draws from ``dist``."""
    counts = np.asarray(counts, dtype=np.int64)
    out = np.zeros((counts.size, dist.dim), dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return out
    steps = dist.points[_draw_atom(dist, rng, total)]
    owner = np.repeat(np.arange(counts.size), counts)
    np.add.at(out, owner, steps)
    return out


def sample_z_counts_batch(n: int, u0: LatticePmf, dist: IncrementDistribution, size: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Representation sampler drawing the number of selections K first.

    Distributionally identical to ``sample_z_repr_batch`` (the X_j are i.i.d.
    and independent of the I_j) but costs O(size * E[K]) instead of
    O(size * n), which is what large-n Monte Carlo needs.
    """
    pk = selection_count_pmf(n)
    cum = np.cumsum(pk)
    k = np.minimum(np.searchsorted(cum, rng.random(size) * cum[-1], side="right"), pk.size - 1)
    return u0.sample(rng, size) + sum_of_increments(k, dist, rng)


def exact_pmf_budget_ok(n: int, dim: int) -> bool:
    return n <= EXACT_N_BUDGET.get(dim, EXACT_N_BUDGET_HIGHER)


def exact_pmf(n: int, u0: LatticePmf, dist: IncrementDistribution, max_cells: int = DEFAULT_MAX_CELLS) -> LatticePmf:
    """Exact law of Z_n by n sequential sparse-kernel convolutions."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if u0.dim != dist.dim:
        raise ValueError("u0 and increment dimensions differ")
    if not exact_pmf_budget_ok(n, dist.dim):
        limit = EXACT_N_BUDGET.get(dist.dim, EXACT_N_BUDGET_HIGHER)
        raise BudgetExceededError(f"exact pmf in dimension {dist.dim} is limited to n <= {limit}")
    lo_atom = np.minimum(dist.points.min(axis=0), 0)
    hi_atom = np.maximum(dist.points.max(axis=0), 0)
    grow = hi_atom - lo_atom
    slots = [tuple(slice(int(a), None) for a in (w - lo_atom)) for w in dist.points]
    stay = tuple(slice(int(a), None) for a in -lo_atom)
    lower = np.array(u0.lower, dtype=np.int64)
    arr = np.array(u0.masses, dtype=float)
    for j in range(1, n + 1):
        shape = tuple(int(s) for s in np.array(arr.shape) + grow)
        if int(np.prod(shape)) > max_cells:
            raise BudgetExceededError(f"exact pmf box {shape} exceeds {max_cells} cells at j={j}")
        nxt = np.zeros(shape)
        stay_sl = tuple(slice(s.start, s.start + k) for s, k in zip(stay, arr.shape))
        nxt[stay_sl] += arr * (j / (j + 1.0))
        for sl, q in zip(slots, dist.probs):
            nxt[tuple(slice(s.start, s.start + k) for s, k in zip(sl, arr.shape))] += arr * (q / (j + 1.0))
        new_lower, arr = _trim(tuple(int(c) for c in lower + lo_atom), nxt)
        lower = np.array(new_lower, dtype=np.int64)
    return LatticePmf(tuple(int(c) for c in lower), arr)


def empirical_pmf(samples: np.ndarray) -> LatticePmf:
    samples = np.asarray(samples, dtype=np.int64)
    if samples.ndim == 1:
        samples = samples[:, None]
    pts, counts = np.unique(samples, axis=0, return_counts=True)
    return LatticePmf.from_points(zip(map(tuple, pts), counts / samples.shape[0]))


def chi_square_gof(samples: np.ndarray, pmf: LatticePmf, min_expected: float = 5.0) -> tuple[float, int, float]:
    """Pearson chi-square of samples against an exact pmf.

    Cells with expected count below ``min_expected`` are pooled into a single
    remainder cell together with any sample outside the pmf support.
    Returns ``(statistic, degrees of freedom, p-value)``.
    """
    from scipy.stats import chi2

    samples = np.asarray(samples, dtype=np.int64)
    if samples.ndim == 1:
        samples = samples[:, None]
    total = samples.shape[0]
    pts, obs = np.unique(samples, axis=0, return_counts=True)
    observed = {tuple(int(c) for c in p): int(k) for p, k in zip(pts, obs)}
    support, mass = pmf.support()
    exp_cells, obs_cells = [], []
    rest_exp, rest_obs = 0.0, 0
    for p, m in zip(support, mass):
        key = tuple(int(c) for c in p)
        e = m * total
        o = observed.pop(key, 0)
        if e >= min_expected:
            exp_cells.append(e)
            obs_cells.append(o)
        else:
            rest_exp += e
            rest_obs += o
    rest_obs += sum(observed.values())
    if rest_exp > 0.0 or rest_obs > 0:
        if rest_exp == 0.0:
            return math.inf, len(exp_cells), 0.0
        exp_cells.append(rest_exp)
        obs_cells.append(rest_obs)
    e = np.array(exp_cells)
    o = np.array(obs_cells, dtype=float)
    stat = float(np.sum((o - e) ** 2 / e))
    dof = max(len(e) - 1, 1)
    return stat, dof, float(chi2.sf(stat, dof))
