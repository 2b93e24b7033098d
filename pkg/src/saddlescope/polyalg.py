"""Sparse graded polynomials in (q, p, hbar) with Poisson and Moyal brackets.

A polynomial in ``d`` degrees of freedom is stored as an integer exponent
table of shape ``(T, 2d + 1)`` with columns ``q_1..q_d, p_1..p_d, j`` and a
coefficient vector of length ``T``. The grade of a row is
``|alpha| + |beta| + 2 j``. Every stored row has grade at most
``truncation_order``; products drop higher grades before they are formed.

Rows are kept sorted lexicographically on ``(alpha, beta, j)`` and
duplicate keys are summed in order of increasing coefficient value, so
results do not depend on the order in which raw terms were generated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Callable, Iterable, Mapping, NamedTuple

import numpy as np
from numpy.typing import NDArray

from .errors import StructuralError

ZERO_THRESHOLD = 1e-15
_PAIR_CHUNK = 4_000_000


class Monomial(NamedTuple):
    """Exponents of ``q^alpha p^beta hbar^j``."""

    alpha: tuple[int, ...]
    beta: tuple[int, ...]
    j: int = 0

    @property
    def grade(self) -> int:
        return sum(self.alpha) + sum(self.beta) + 2 * self.j

    def row(self) -> tuple[int, ...]:
        return (*self.alpha, *self.beta, self.j)


def _grades(exps: NDArray, dof: int) -> NDArray:
    if exps.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return exps[:, : 2 * dof].sum(axis=1) + 2 * exps[:, 2 * dof]


def _sort_keys(exps: NDArray) -> NDArray | None:
    """Pack rows into order-preserving int64 keys when they fit."""
    ncols = exps.shape[1]
    radix = int(exps.max()) + 1 if exps.size else 1
    radix = max(radix, 2)
    if ncols * math.log2(radix) >= 62:
        return None
    weights = radix ** np.arange(ncols - 1, -1, -1, dtype=np.int64)
    return exps.astype(np.int64) @ weights


def canonicalize(exps: NDArray, coeffs: NDArray, order: int, dof: int) -> tuple[NDArray, NDArray]:
    """Sort, merge duplicate keys, drop rows above ``order`` and prune dust."""
    exps = np.asarray(exps, dtype=np.int64).reshape(-1, 2 * dof + 1)
    coeffs = np.asarray(coeffs)
    if exps.shape[0]:
        keep = _grades(exps, dof) <= order
        exps, coeffs = exps[keep], coeffs[keep]
    if exps.shape[0] == 0:
        return np.zeros((0, 2 * dof + 1), dtype=np.int64), np.zeros(0, dtype=coeffs.dtype)

    keys = _sort_keys(exps)
    value_keys = [coeffs.imag, coeffs.real] if np.iscomplexobj(coeffs) else [coeffs]
    if keys is not None:
        perm = np.lexsort((*value_keys, keys))
        skeys = keys[perm]
        starts = np.flatnonzero(np.r_[True, skeys[1:] != skeys[:-1]])
    else:
        cols = [exps[:, c] for c in range(exps.shape[1] - 1, -1, -1)]
        perm = np.lexsort((*value_keys, *cols))
        sexps = exps[perm]
        starts = np.flatnonzero(np.r_[True, np.any(sexps[1:] != sexps[:-1], axis=1)])
    summed = np.add.reduceat(coeffs[perm], starts)
    rows = exps[perm][starts]

    mags = np.abs(summed)
    top = mags.max() if mags.size else 0.0
    keep = mags > ZERO_THRESHOLD * top
    return rows[keep], summed[keep]


@dataclass(frozen=True, eq=False)
class PhasePolynomial:
    """Truncated polynomial in ``q_1..q_d, p_1..p_d`` and ``hbar``.

    Parameters
    ----------
    dof : int
        Number of degrees of freedom ``d``.
    exps : ndarray of int, shape (T, 2d + 1)
        Exponent rows ``(alpha, beta, j)`` in canonical order.
    coeffs : ndarray, shape (T,)
        Real (or, internally, complex) coefficients.
    truncation_order : int
        Largest grade kept.

    Notes
    -----
    Instances are treated as immutable. Use the constructors
    :meth:`from_terms`, :meth:`variable`, :meth:`constant` rather than
    building the arrays by hand.
    """

    dof: int
    exps: NDArray
    coeffs: NDArray
    truncation_order: int

    # construction -------------------------------------------------------
    @classmethod
    def from_arrays(cls, dof: int, exps, coeffs, order: int) -> "PhasePolynomial":
        e, c = canonicalize(exps, coeffs, order, dof)
        return cls(dof, e, c, order)

    @classmethod
    def zero(cls, dof: int, order: int) -> "PhasePolynomial":
        return cls.from_arrays(dof, np.zeros((0, 2 * dof + 1)), np.zeros(0), order)

    @classmethod
    def constant(cls, dof: int, value: float, order: int) -> "PhasePolynomial":
        return cls.from_arrays(dof, np.zeros((1, 2 * dof + 1)), np.array([value]), order)

    @classmethod
    def variable(cls, dof: int, name: str, order: int) -> "PhasePolynomial":
        """Coordinate function such as ``"q1"``, ``"p3"`` or ``"hbar"``."""
        row = np.zeros(2 * dof + 1, dtype=np.int64)
        if name == "hbar":
            row[2 * dof] = 1
        else:
            kind, k = name[0], int(name[1:]) - 1
            if kind not in "qp" or not 0 <= k < dof:
                raise StructuralError(f"unknown variable {name!r} for dof={dof}")
            row[k if kind == "q" else dof + k] = 1
        return cls.from_arrays(dof, row[None, :], np.array([1.0]), order)

    @classmethod
    def from_terms(
        cls,
        dof: int,
        terms: Mapping[Monomial | tuple, complex] | Iterable[tuple[Monomial | tuple, complex]],
        order: int,
    ) -> "PhasePolynomial":
        """Build from ``{Monomial: coeff}`` or ``{(q.., p.., j): coeff}``."""
        items = list(terms.items()) if isinstance(terms, Mapping) else list(terms)
        rows, vals = [], []
        for key, val in items:
            row = key.row() if isinstance(key, Monomial) else tuple(key)
            if len(row) == 2 * dof:
                row = (*row, 0)
            if len(row) != 2 * dof + 1:
                raise StructuralError(f"monomial {key!r} does not match dof={dof}")
            rows.append(row)
            vals.append(val)
        exps = np.array(rows, dtype=np.int64).reshape(-1, 2 * dof + 1)
        coeffs = np.array(vals) if vals else np.zeros(0)
        if np.iscomplexobj(coeffs) and not np.any(coeffs.imag):
            coeffs = coeffs.real
        return cls.from_arrays(dof, exps, coeffs.astype(coeffs.dtype if np.iscomplexobj(coeffs) else float), order)

    # inspection ---------------------------------------------------------
    @property
    def terms(self) -> dict[Monomial, complex]:
        d = self.dof
        return {
            Monomial(tuple(int(x) for x in r[:d]), tuple(int(x) for x in r[d : 2 * d]), int(r[2 * d])): c.item()
            for r, c in zip(self.exps, self.coeffs)
        }

    @property
    def grades(self) -> NDArray:
        return _grades(self.exps, self.dof)

    @property
    def nterms(self) -> int:
        return int(self.coeffs.shape[0])

    def is_zero(self) -> bool:
        return self.nterms == 0

    def max_abs(self) -> float:
        return float(np.abs(self.coeffs).max()) if self.nterms else 0.0

    def qp_degree(self) -> int:
        if not self.nterms:
            return -1
        return int(self.exps[:, : 2 * self.dof].sum(axis=1).max())

    def homogeneous_grade(self) -> int | None:
        """Common grade of all terms, ``None`` for mixed grades or zero."""
        g = np.unique(self.grades)
        return int(g[0]) if g.size == 1 else None

    def coefficient(self, key: Monomial | tuple) -> complex:
        row = np.array(key.row() if isinstance(key, Monomial) else key, dtype=np.int64)
        if row.size == 2 * self.dof:
            row = np.r_[row, 0]
        hit = np.flatnonzero(np.all(self.exps == row, axis=1))
        return self.coeffs[hit[0]].item() if hit.size else 0.0

    def same_terms(self, other: "PhasePolynomial") -> bool:
        """Bit-identical term tables."""
        return (
            self.dof == other.dof
            and self.exps.shape == other.exps.shape
            and bool(np.all(self.exps == other.exps))
            and bool(np.all(self.coeffs == other.coeffs))
        )

    def distance(self, other: "PhasePolynomial") -> float:
        """Largest coefficient difference."""
        return (self - other).max_abs()

    # slicing ------------------------------------------------------------
    def _select(self, mask: NDArray) -> "PhasePolynomial":
        return PhasePolynomial(self.dof, self.exps[mask], self.coeffs[mask], self.truncation_order)

    def grade_part(self, n: int) -> "PhasePolynomial":
        return self._select(self.grades == n)

    def truncate(self, n: int) -> "PhasePolynomial":
        return self._select(self.grades <= n)

    def classical(self) -> "PhasePolynomial":
        """Drop every term carrying a power of hbar."""
        return self._select(self.exps[:, 2 * self.dof] == 0)

    def with_order(self, order: int) -> "PhasePolynomial":
        return PhasePolynomial.from_arrays(self.dof, self.exps, self.coeffs, order)

    def real(self, tol: float = 1e-10) -> "PhasePolynomial":
        """Real part, checking that the imaginary part is negligible."""
        if not np.iscomplexobj(self.coeffs):
            return self
        scale = max(self.max_abs(), 1.0)
        if self.nterms and np.abs(self.coeffs.imag).max() > tol * scale:
            raise StructuralError("polynomial has a non-negligible imaginary part")
        return PhasePolynomial.from_arrays(self.dof, self.exps, self.coeffs.real.copy(), self.truncation_order)

    # arithmetic ---------------------------------------------------------
    def _check(self, other: "PhasePolynomial") -> None:
        if self.dof != other.dof:
            raise StructuralError(f"dof mismatch: {self.dof} vs {other.dof}")
        if self.truncation_order != other.truncation_order:
            raise StructuralError(
                f"truncation order mismatch: {self.truncation_order} vs {other.truncation_order}"
            )

    def __add__(self, other):
        if not isinstance(other, PhasePolynomial):
            other = PhasePolynomial.constant(self.dof, other, self.truncation_order)
        self._check(other)
        return PhasePolynomial.from_arrays(
            self.dof,
            np.vstack([self.exps, other.exps]),
            np.concatenate([self.coeffs, other.coeffs]),
            self.truncation_order,
        )

    __radd__ = __add__

    def __neg__(self):
        return PhasePolynomial(self.dof, self.exps, -self.coeffs, self.truncation_order)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, PhasePolynomial):
            self._check(other)
            e, c = _product_terms(self, other, self.truncation_order)
            return PhasePolynomial.from_arrays(self.dof, e, c, self.truncation_order)
        return PhasePolynomial.from_arrays(self.dof, self.exps, self.coeffs * other, self.truncation_order)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __pow__(self, n: int):
        out = PhasePolynomial.constant(self.dof, 1.0, self.truncation_order)
        for _ in range(n):
            out = out * self
        return out

    def __repr__(self) -> str:
        return f"PhasePolynomial(dof={self.dof}, nterms={self.nterms}, order={self.truncation_order})"

    # calculus -----------------------------------------------------------
    def derivative(self, var: int, times: int = 1) -> "PhasePolynomial":
        """Partial derivative with respect to column ``var`` (q's then p's)."""
        e, c = _derive(self.exps, self.coeffs, var, times)
        return PhasePolynomial.from_arrays(self.dof, e, c, self.truncation_order)

    def gradient(self) -> list["PhasePolynomial"]:
        return [self.derivative(v) for v in range(2 * self.dof)]

    def evaluate(self, points, hbar: float = 0.0):
        """Evaluate at phase-space points of shape ``(..., 2d)``."""
        pts = np.asarray(points)
        flat = pts.reshape(-1, 2 * self.dof)
        if not self.nterms:
            out = np.zeros(flat.shape[0], dtype=np.result_type(flat, self.coeffs))
        else:
            maxp = int(self.exps.max())
            powers = _power_table(flat, maxp)
            vals = np.ones((flat.shape[0], self.nterms), dtype=powers.dtype)
            for v in range(2 * self.dof):
                vals = vals * powers[:, v, :][:, self.exps[:, v]]
            hb = np.asarray(hbar, dtype=float) ** self.exps[:, 2 * self.dof]
            out = vals @ (self.coeffs * hb)
        return out.reshape(pts.shape[:-1]) if pts.ndim > 1 else out[0]


def _power_table(flat: NDArray, maxp: int) -> NDArray:
    powers = np.empty((flat.shape[0], flat.shape[1], maxp + 1), dtype=flat.dtype if np.iscomplexobj(flat) else float)
    powers[..., 0] = 1.0
    for k in range(1, maxp + 1):
        powers[..., k] = powers[..., k - 1] * flat
    return powers


def _derive(exps: NDArray, coeffs: NDArray, var: int, times: int = 1) -> tuple[NDArray, NDArray]:
    if times == 0:
        return exps, coeffs
    col = exps[:, var]
    keep = col >= times
    e = exps[keep].copy()
    c = coeffs[keep].astype(np.result_type(coeffs, float))
    ff = np.ones(e.shape[0])
    for k in range(times):
        ff = ff * (e[:, var] - k)
    e[:, var] -= times
    return e, c * ff


def _multi_derive(exps: NDArray, coeffs: NDArray, orders) -> tuple[NDArray, NDArray]:
    """Apply ``prod_v d^orders[v]`` with one exact integer factor per row."""
    orders = np.asarray(orders, dtype=np.int64)
    keep = np.all(exps[:, : orders.size] >= orders, axis=1)
    e = exps[keep].copy()
    ff = np.ones(e.shape[0], dtype=np.int64)
    for v in np.flatnonzero(orders):
        for k in range(int(orders[v])):
            ff *= e[:, v] - k
    e[:, : orders.size] -= orders
    return e, coeffs[keep] * ff


def _product_terms(a: PhasePolynomial, b: PhasePolynomial, order: int, j_shift: int = 0):
    """Raw (unsorted) terms of ``a * b * hbar**j_shift`` up to ``order``."""
    return _raw_product(a.exps, a.coeffs, b.exps, b.coeffs, a.dof, order, j_shift)


def _raw_product(ea, ca, eb, cb, dof, order, j_shift=0):
    ncol = 2 * dof + 1
    if ea.shape[0] == 0 or eb.shape[0] == 0:
        return np.zeros((0, ncol), dtype=np.int64), np.zeros(0, dtype=np.result_type(ca, cb))
    ga = _grades(ea, dof)
    gb = _grades(eb, dof)
    border = np.argsort(gb, kind="stable")
    eb, cb, gb = eb[border], cb[border], gb[border]
    budget = order - 2 * j_shift
    # number of b rows compatible with each a row (b sorted by grade)
    counts = np.searchsorted(gb, budget - ga, side="right")
    total = int(counts.sum())
    if total == 0:
        return np.zeros((0, ncol), dtype=np.int64), np.zeros(0, dtype=np.result_type(ca, cb))
    out_e, out_c = [], []
    start = 0
    while start < ea.shape[0]:
        stop = start
        acc = 0
        while stop < ea.shape[0] and (acc == 0 or acc + counts[stop] <= _PAIR_CHUNK):
            acc += counts[stop]
            stop += 1
        cnt = counts[start:stop]
        ia = np.repeat(np.arange(start, stop), cnt)
        offsets = np.arange(int(cnt.sum())) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        ib = offsets
        e = ea[ia] + eb[ib]
        if j_shift:
            e[:, 2 * dof] += j_shift
        out_e.append(e)
        out_c.append(ca[ia] * cb[ib])
        start = stop
    return np.vstack(out_e), np.concatenate(out_c)


# brackets ---------------------------------------------------------------
def _check_pair(a: PhasePolynomial, b: PhasePolynomial) -> int:
    if a.dof != b.dof:
        raise StructuralError(f"dof mismatch: {a.dof} vs {b.dof}")
    return min(a.truncation_order, b.truncation_order)


def _signed_sum(dof: int, order: int, plus: list, minus: list) -> PhasePolynomial:
    """Canonical ``sum(plus) - sum(minus)`` with symmetric rounding."""

    def collect(parts):
        if not parts:
            return np.zeros((0, 2 * dof + 1), dtype=np.int64), np.zeros(0)
        return canonicalize(np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts]), order, dof)

    ep, cp = collect(plus)
    em, cm = collect(minus)
    return PhasePolynomial.from_arrays(dof, np.vstack([ep, em]), np.concatenate([cp, -cm]), order)


def poisson_bracket(a: PhasePolynomial, b: PhasePolynomial) -> PhasePolynomial:
    """``{a, b} = sum_k da/dq_k db/dp_k - da/dp_k db/dq_k``.

    The two sums are accumulated separately so that ``{a, b}`` and
    ``{b, a}`` cancel exactly.
    """
    order = _check_pair(a, b)
    d = a.dof
    plus, minus = [], []
    for k in range(d):
        aq = _derive(a.exps, a.coeffs, k)
        ap = _derive(a.exps, a.coeffs, d + k)
        bq = _derive(b.exps, b.coeffs, k)
        bp = _derive(b.exps, b.coeffs, d + k)
        plus.append(_raw_product(*aq, *bp, d, order))
        minus.append(_raw_product(*ap, *bq, d, order))
    return _signed_sum(d, order, plus, minus)


def _compositions(total: int, parts: int):
    """All non-negative integer vectors of length ``parts`` summing to ``total``."""
    for combo in combinations_with_replacement(range(parts), total):
        vec = [0] * parts
        for c in combo:
            vec[c] += 1
        yield vec


def moyal_bracket(a: PhasePolynomial, b: PhasePolynomial) -> PhasePolynomial:
    """Moyal bracket with ``hbar`` kept as a formal variable.

    Expands ``(2/hbar) sin(hbar/2 * Lambda)`` with
    ``Lambda = sum_k (<d_qk d_pk> - <d_pk d_qk>)`` into odd powers
    ``Lambda**m``; each power is expanded multinomially over the ``2d``
    commuting bidifferential pieces. The series stops once ``m`` exceeds
    the smaller (q, p)-degree of the arguments.
    """
    order = _check_pair(a, b)
    d = a.dof
    mmax = min(a.qp_degree(), b.qp_degree())
    plus, minus = [], []
    m = 1
    while m <= mmax:
        k = (m - 1) // 2
        base = 0.25**k
        for comp in _compositions(m, 2 * d):
            r, s = comp[:d], comp[d:]
            ea, ca = _multi_derive(a.exps, a.coeffs, r + s)
            if ea.shape[0] == 0:
                continue
            eb, cb = _multi_derive(b.exps, b.coeffs, s + r)
            if eb.shape[0] == 0:
                continue
            e, c = _raw_product(ea, ca, eb, cb, d, order, j_shift=2 * k)
            if e.shape[0] == 0:
                continue
            denom = 1.0
            for x in comp:
                denom *= math.factorial(x)
            c = c * (base / denom)
            sign = (-1) ** (k + sum(s))
            (plus if sign > 0 else minus).append((e, c))
        m += 2
    return _signed_sum(d, order, plus, minus)


BRACKETS: dict[str, Callable[[PhasePolynomial, PhasePolynomial], PhasePolynomial]] = {
    "classical": poisson_bracket,
    "quantum": moyal_bracket,
}


def lie_transform(
    h: PhasePolynomial,
    w: PhasePolynomial,
    mode: str = "classical",
    *,
    max_terms: int = 200,
) -> PhasePolynomial:
    """Apply ``exp(ad_w)`` to ``h`` with ``ad_w f = [w, f]``.

    Parameters
    ----------
    h : PhasePolynomial
        Function to transform.
    w : PhasePolynomial
        Homogeneous generator. For grade ``n >= 3`` each bracket raises the
        grade by ``n - 2`` and the series ends by truncation. Grade 2 is
        accepted as well; that series is summed until its terms stop
        contributing.
    mode : {"classical", "quantum"}
        Poisson or Moyal bracket.
    max_terms : int
        Cap on the number of series terms for grade-2 generators.

    Returns
    -------
    PhasePolynomial
        ``sum_k ad_w^k h / k!`` truncated at ``h.truncation_order``.
    """
    if mode not in BRACKETS:
        raise StructuralError(f"unknown mode {mode!r}")
    if w.is_zero():
        return h
    n = w.homogeneous_grade()
    if n is None:
        raise StructuralError("generator must be homogeneous")
    if n < 2:
        raise StructuralError(f"generator grade {n} < 2")
    if w.truncation_order != h.truncation_order:
        w = w.with_order(h.truncation_order)
    bracket = BRACKETS[mode]
    result = h
    term = h
    for k in range(1, max_terms + 1):
        term = bracket(w, term) / k
        if term.is_zero():
            break
        result = result + term
        if n == 2 and term.max_abs() <= 1e-17 * max(result.max_abs(), 1e-300):
            break
    return result


# action polynomials -----------------------------------------------------
@dataclass(frozen=True, eq=False)
class ActionPolynomial:
    """Polynomial ``sum kappa I^a1 J_2^a2 .. J_d^ad hbar^j``.

    ``terms`` maps ``(a_1, ..., a_d, j)`` to the coefficient. The same type
    holds both symbols and operator-ordered tables; in the latter the
    variables stand for the action operators.
    """

    dof: int
    terms: Mapping[tuple[int, ...], float]

    def __post_init__(self):
        clean = {}
        for key in sorted(self.terms):
            val = float(self.terms[key])
            if len(key) != self.dof + 1:
                raise StructuralError(f"action key {key!r} does not match dof={self.dof}")
            if val != 0.0:
                clean[tuple(int(x) for x in key)] = val
        object.__setattr__(self, "terms", clean)

    @property
    def grade(self) -> int:
        return max((2 * sum(k[:-1]) + 2 * k[-1] for k in self.terms), default=0)

    def coefficient(self, key: tuple[int, ...]) -> float:
        return self.terms.get(tuple(key), 0.0)

    def classical(self) -> "ActionPolynomial":
        return ActionPolynomial(self.dof, {k: v for k, v in self.terms.items() if k[-1] == 0})

    def hbar_free(self) -> bool:
        return all(k[-1] == 0 for k in self.terms)

    def truncate(self, order: int) -> "ActionPolynomial":
        return ActionPolynomial(
            self.dof, {k: v for k, v in self.terms.items() if 2 * sum(k[:-1]) + 2 * k[-1] <= order}
        )

    def __add__(self, other: "ActionPolynomial") -> "ActionPolynomial":
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0.0) + v
        return ActionPolynomial(self.dof, out)

    def __sub__(self, other: "ActionPolynomial") -> "ActionPolynomial":
        return self + ActionPolynomial(other.dof, {k: -v for k, v in other.terms.items()})

    def max_abs_diff(self, other: "ActionPolynomial") -> float:
        diff = (self - other).terms
        return max((abs(v) for v in diff.values()), default=0.0)

    def evaluate(self, I, J=(), hbar: float = 0.0):
        """Evaluate at actions ``I`` (any shape) and bath actions ``J``.

        ``I``, the entries of ``J`` and ``hbar`` may be complex and broadcast
        against each other.
        """
        J = [np.asarray(x) for x in J]
        if len(J) != self.dof - 1:
            raise StructuralError(f"expected {self.dof - 1} bath actions, got {len(J)}")
        I = np.asarray(I)
        total = np.zeros(np.broadcast_shapes(I.shape, *(x.shape for x in J)), dtype=np.result_type(I, *J, hbar, float))
        for key, val in self.terms.items():
            term = val * I ** key[0]
            for x, a in zip(J, key[1:-1]):
                if a:
                    term = term * x**a
            if key[-1]:
                term = term * hbar ** key[-1]
            total = total + term
        return total if total.ndim else total.item()

    def derivative_I(self) -> "ActionPolynomial":
        return ActionPolynomial(
            self.dof, {(k[0] - 1, *k[1:]): v * k[0] for k, v in self.terms.items() if k[0] > 0}
        )

    def derivative_J(self, mode: int) -> "ActionPolynomial":
        """Derivative with respect to ``J_mode`` (``mode`` counts from 2)."""
        i = mode - 1
        out = {}
        for k, v in self.terms.items():
            if k[i] > 0:
                nk = list(k)
                nk[i] -= 1
                out[tuple(nk)] = v * k[i]
        return ActionPolynomial(self.dof, out)

    def in_I(self, J=(), hbar: float = 0.0) -> NDArray:
        """Coefficients ``c_a`` of the univariate polynomial ``sum c_a I^a``."""
        amax = max((k[0] for k in self.terms), default=0)
        out = np.zeros(amax + 1, dtype=np.result_type(*[np.asarray(x) for x in J], hbar, float))
        for key, val in self.terms.items():
            term = val
            for x, a in zip(J, key[1:-1]):
                term = term * x**a
            term = term * hbar ** key[-1]
            out[key[0]] += term
        return out

    def expand(self, order: int) -> PhasePolynomial:
        """Substitute ``I = q_1 p_1`` and ``J_k = (q_k^2 + p_k^2) / 2``."""
        d = self.dof
        out = PhasePolynomial.zero(d, order)
        cache: dict[tuple[int, int], PhasePolynomial] = {}

        def power(mode: int, a: int) -> PhasePolynomial:
            if (mode, a) not in cache:
                rows, vals = [], []
                if mode == 0:
                    row = [0] * (2 * d + 1)
                    row[0] = row[d] = a
                    rows.append(row)
                    vals.append(1.0)
                else:
                    for i in range(a + 1):
                        row = [0] * (2 * d + 1)
                        row[mode] = 2 * i
                        row[d + mode] = 2 * (a - i)
                        rows.append(row)
                        vals.append(math.comb(a, i) / 2.0**a)
                cache[(mode, a)] = PhasePolynomial.from_arrays(d, np.array(rows), np.array(vals), order)
            return cache[(mode, a)]

        for key, val in self.terms.items():
            if 2 * sum(key[:-1]) + 2 * key[-1] > order:
                continue
            term = PhasePolynomial.constant(d, val, order)
            for mode, a in enumerate(key[:-1]):
                if a:
                    term = term * power(mode, a)
            if key[-1]:
                row = np.zeros((1, 2 * d + 1), dtype=np.int64)
                row[0, 2 * d] = key[-1]
                term = term * PhasePolynomial.from_arrays(d, row, np.array([1.0]), order)
            out = out + term
        return out

    def to_json(self) -> list[dict]:
        return [{"exponents": list(k), "coefficient": v} for k, v in self.terms.items()]

    @classmethod
    def from_json(cls, dof: int, items: list[dict]) -> "ActionPolynomial":
        return cls(dof, {tuple(it["exponents"]): it["coefficient"] for it in items})


def phase_to_json(poly: PhasePolynomial) -> dict:
    return {
        "dof": poly.dof,
        "truncation_order": poly.truncation_order,
        "terms": [
            {"exponents": [int(x) for x in r], "coefficient": float(c)} for r, c in zip(poly.exps, poly.coeffs)
        ],
    }


def phase_from_json(doc: Mapping) -> PhasePolynomial:
    dof = int(doc["dof"])
    terms = doc["terms"]
    exps = np.array([t["exponents"] for t in terms], dtype=np.int64).reshape(-1, 2 * dof + 1)
    coeffs = np.array([float(t["coefficient"]) for t in terms], dtype=float)
    return PhasePolynomial(dof, exps, coeffs, int(doc["truncation_order"]))
