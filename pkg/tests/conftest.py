from collections import defaultdict
from fractions import Fraction

import math

import numpy as np
import pytest
from hypothesis import strategies as st

from urnlab import LatticePmf, from_spec, preset


def enumerate_urn_law(n, u0_items, atoms):
    """Exact law of Z_n by walking every draw sequence of the urn (Fractions).

    Independent of the representation: it only uses the urn dynamics.
    """
    law = defaultdict(Fraction)

    def walk(t, weights, prob):
        total = sum(weights.values())
        if t == n:
            for c, w in weights.items():
                law[c] += prob * w / total
            return
        for v, w in list(weights.items()):
            nxt = dict(weights)
            for u, q in atoms:
                key = tuple(a + b for a, b in zip(v, u))
                nxt[key] = nxt.get(key, Fraction(0)) + q
            walk(t + 1, nxt, prob * w / total)

    walk(0, {tuple(p): Fraction(m) for p, m in u0_items}, Fraction(1))
    return dict(law)


@pytest.fixture
def delta0():
    return LatticePmf.delta((0,))


@pytest.fixture
def det1d():
    return preset("det1d")


@pytest.fixture
def ssrw1d():
    return preset("ssrw1d")


@pytest.fixture
def ne2d():
    return preset("ne2d")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@st.composite
def distributions(draw, max_dim=3, min_dim=1):
    dim = draw(st.integers(min_dim, max_dim))
    pts = draw(st.lists(st.tuples(*[st.integers(-3, 3)] * dim), min_size=1, max_size=6, unique=True))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=len(pts), max_size=len(pts))))
    w = w / w.sum()
    w[-1] = 1.0 - math.fsum(w[:-1])
    return from_spec(dim, list(zip(pts, w)))


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def report(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {label}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
