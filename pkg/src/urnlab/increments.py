"""Bounded increment distributions on Z^d."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

PROB_SUM_TOL = 1e-12
MGF_EXPONENT_LIMIT = 700.0

PRESETS: dict[str, dict[str, Any]] = {
    "det1d": {"dim": 1, "atoms": [{"point": [1], "prob": 1.0}]},
    "ssrw1d": {"dim": 1, "atoms": [{"point": [1], "prob": 0.5}, {"point": [-1], "prob": 0.5}]},
    "ne2d": {"dim": 2, "atoms": [{"point": [1, 0], "prob": 0.5}, {"point": [0, 1], "prob": 0.5}]},
}


class DistributionSpecError(ValueError):
    pass


class MGFOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class IncrementDistribution:
    """Finite pmf ``p(u)`` on Z^d with cached moments.

    ``second_moment`` is the uncentered E[X^T X]; the covariance of X is
    ``second_moment - mean_outer``.
    """

    dim: int
    points: np.ndarray
    probs: np.ndarray
    name: str | None = None
    mean: np.ndarray = field(init=False, repr=False, compare=False)
    second_moment: np.ndarray = field(init=False, repr=False, compare=False)
    mean_outer: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, self.dim)
        pr = np.asarray(self.probs, dtype=float).reshape(-1)
        pts.setflags(write=False)
        pr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", pr)
        mu = pr @ pts
        sigma = (pts.T * pr) @ pts
        sigma = 0.5 * (sigma + sigma.T)
        outer = np.outer(mu, mu)
        for arr in (mu, sigma, outer):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "second_moment", sigma)
        object.__setattr__(self, "mean_outer", outer)

    @property
    def size(self) -> int:
        return len(self.probs)

    @property
    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.points, axis=1)))

    def atoms(self) -> list[tuple[tuple[int, ...], float]]:
        return [(tuple(int(c) for c in u), float(q)) for u, q in zip(self.points, self.probs)]

    def reflected(self) -> "IncrementDistribution":
        """Law of -X."""
        return IncrementDistribution(self.dim, -self.points, self.probs.copy(), None)

    def to_dict(self) -> dict[str, Any]:
        return {"dim": self.dim, "atoms": [{"point": list(u), "prob": q} for u, q in self.atoms()]}


def from_spec(dim: int, atoms: Iterable[tuple[Sequence[int], float]], name: str | None = None) -> IncrementDistribution:
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise DistributionSpecError(f"dim must be a positive integer, got {dim!r}")
    atoms = list(atoms)
    if not atoms:
        raise DistributionSpecError("distribution needs at least one atom")
    seen: set[tuple[int, ...]] = set()
    pts, prs = [], []
    for point, prob in atoms:
        point = tuple(point)
        if len(point) != dim:
            raise DistributionSpecError(f"point {point} does not have dimension {dim}")
        if any(int(c) != c for c in point):
            raise DistributionSpecError(f"point {point} is not on the integer lattice")
        point = tuple(int(c) for c in point)
        if point in seen:
            raise DistributionSpecError(f"duplicate atom {point}")
        prob = float(prob)
        if not prob > 0.0 or not math.isfinite(prob):
            raise DistributionSpecError(f"probability of {point} must be positive, got {prob}")
        seen.add(point)
        pts.append(point)
        prs.append(prob)
    total = math.fsum(prs)
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise DistributionSpecError(f"probabilities sum to {total!r}, not 1")
    return IncrementDistribution(int(dim), np.array(pts, dtype=np.int64), np.array(prs), name)


def from_dict(spec: dict[str, Any], name: str | None = None) -> IncrementDistribution:
    try:
        dim = spec["dim"]
        atoms = [(a["point"], a["prob"]) for a in spec["atoms"]]
    except (KeyError, TypeError) as exc:
        raise DistributionSpecError(f"malformed distribution spec: {exc}") from exc
    return from_spec(dim, atoms, name)


def preset(name: str) -> IncrementDistribution:
    if name not in PRESETS:
        raise DistributionSpecError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return from_dict(PRESETS[name], name)


def resolve(source: str | dict | IncrementDistribution) -> IncrementDistribution:
    """Accept a preset name, inline JSON, a JSON file path, a dict or a distribution."""
    if isinstance(source, IncrementDistribution):
        return source
    if isinstance(source, dict):
        return from_dict(source)
    text = source.strip()
    if text in PRESETS:
        return preset(text)
    if text.startswith("{"):
        try:
            return from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DistributionSpecError(f"invalid inline JSON: {exc}") from exc
    if os.path.isfile(text):
        with open(text, encoding="utf-8") as fh:
            try:
                return from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise DistributionSpecError(f"invalid JSON in {text}: {exc}") from exc
    raise DistributionSpecError(f"cannot interpret distribution source {source!r}")


def moments(dist: IncrementDistribution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return dist.mean.copy(), dist.second_moment.copy(), dist.mean_outer.copy()


def _exponents(dist: IncrementDistribution, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape != (dist.dim,):
        raise ValueError(f"lambda must have dimension {dist.dim}")
    if not np.all(np.isfinite(lam)):
        raise ValueError("lambda must be finite")
    s = dist.points @ lam
    if float(s.max()) > MGF_EXPONENT_LIMIT:
        raise MGFOverflowError(f"<lambda, u> = {float(s.max()):.1f} exceeds safe exponent range")
    return s


def mgf_minus_one(dist: IncrementDistribution, lam) -> float:
    """e(lambda) - 1, summed through expm1 so it is exactly 0 at lambda = 0."""
    return float(dist.probs @ np.expm1(_exponents(dist, lam)))


def mgf(dist: IncrementDistribution, lam) -> float:
    return 1.0 + mgf_minus_one(dist, lam)


def mgf_gradient(dist: IncrementDistribution, lam) -> np.ndarray:
    w = dist.probs * np.exp(_exponents(dist, lam))
    return w @ dist.points


def mgf_hessian(dist: IncrementDistribution, lam) -> np.ndarray:
    w = dist.probs * np.exp(_exponents(dist, lam))
    return (dist.points.T * w) @ dist.points


def abs_third_moment(dist: IncrementDistribution, coord: int, shift) -> np.ndarray:
    """E|X^(coord) - c|^3 for every c in ``shift`` (0-based coordinate)."""
    c = np.asarray(shift, dtype=float)
    x = dist.points[:, coord].astype(float)
    return (dist.probs @ np.abs(x[:, None] - c.reshape(1, -1)) ** 3).reshape(c.shape)
