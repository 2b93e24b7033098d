import numpy as np
import pytest
import sympy as sp

from saddlescope.polyalg import PhasePolynomial


def to_sympy(poly: PhasePolynomial, q, p, h):
    d = poly.dof
    expr = 0
    for row, c in zip(poly.exps, poly.coeffs):
        term = sp.nsimplify(float(np.real(c)), rational=True)
        for k in range(d):
            term *= q[k] ** int(row[k]) * p[k] ** int(row[d + k])
        expr += term * h ** int(row[2 * d])
    return sp.expand(expr)


def from_sympy(expr, dof, order, q, p, h):
    poly = sp.Poly(sp.expand(expr), *q, *p, h)
    return PhasePolynomial.from_terms(dof, {m: float(c) for m, c in poly.terms()}, order)


@pytest.fixture
def symbols():
    def make(d):
        q = sp.symbols(f"q1:{d + 1}")
        p = sp.symbols(f"p1:{d + 1}")
        return q, p, sp.Symbol("hbar")

    return make


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
