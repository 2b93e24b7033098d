"""Model Hamiltonians, their Taylor expansions and closed-form oracles.

A system is ``H = 1/2 sum p_k^2 + sum_k V_k(q_k) + couplings`` where each
``V_k`` belongs to one of the built-in families below. Couplings are either
a mutual kinetic term ``eps * sum_{i<j} p_i p_j`` or an explicit polynomial.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, ConvergenceError, DomainError
from .polyalg import PhasePolynomial


# potential families ----------------------------------------------------
@dataclass(frozen=True)
class Eckart:
    a: float
    A: float
    B: float
    family = "eckart"

    def __post_init__(self):
        if not (self.a > 0):
            raise ConfigError("eckart: 'a' must be positive")
        if not (self.B > self.A >= 0):
            raise ConfigError("eckart: requires B > A >= 0")

    @property
    def q0(self) -> float:
        return self.a * math.log((self.B + self.A) / (self.B - self.A))

    @property
    def barrier_top(self) -> float:
        return (self.A + self.B) ** 2 / (4 * self.B)


@dataclass(frozen=True)
class Morse:
    De: float
    aM: float
    family = "morse"

    def __post_init__(self):
        if not (self.De > 0):
            raise ConfigError("morse: 'De' must be positive")
        if not (self.aM > 0):
            raise ConfigError("morse: 'aM' must be positive")

    @property
    def omega(self) -> float:
        return self.aM * math.sqrt(2 * self.De)


@dataclass(frozen=True)
class Harmonic:
    omega: float
    family = "harmonic"

    def __post_init__(self):
        if not (self.omega > 0):
            raise ConfigError("harmonic: 'omega' must be positive")


@dataclass(frozen=True)
class PolynomialPotential:
    """``V(q) = sum_n coefficients[n] q**n``."""

    coefficients: tuple[float, ...]
    family = "polynomial"

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if not self.coefficients:
            raise ConfigError("polynomial: 'coefficients' must be non-empty")


@dataclass(frozen=True)
class KineticCoupling:
    epsilon: float
    kind = "kinetic"


@dataclass(frozen=True)
class PolynomialCoupling:
    """Explicit terms ``coefficient * prod q^alpha p^beta``.

    ``exponents`` of length ``d`` act on positions only; length ``2d``
    covers positions then momenta.
    """

    terms: tuple[tuple[tuple[int, ...], float], ...]
    kind = "polynomial"

    def __post_init__(self):
        object.__setattr__(
            self, "terms", tuple((tuple(int(e) for e in ex), float(c)) for ex, c in self.terms)
        )

    def as_polynomial(self, dof: int, order: int) -> PhasePolynomial:
        rows = []
        for ex, _ in self.terms:
            if len(ex) == dof:
                ex = (*ex, *([0] * dof))
            if len(ex) != 2 * dof:
                raise ConfigError(f"polynomial coupling: exponent vector {list(ex)} has wrong length")
            rows.append((*ex, 0))
        exps = np.array(rows, dtype=np.int64).reshape(-1, 2 * dof + 1)
        coeffs = np.array([c for _, c in self.terms], dtype=float)
        return PhasePolynomial.from_arrays(dof, exps, coeffs, order)


Potential = Union[Eckart, Morse, Harmonic, PolynomialPotential]
Coupling = Union[KineticCoupling, PolynomialCoupling]


@dataclass(frozen=True)
class SystemSpec:
    """A ``d``-DoF Hamiltonian plus the effective Planck constant."""

    dof: int
    hbar_eff: float
    potentials: tuple[Potential, ...]
    couplings: tuple[Coupling, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "potentials", tuple(self.potentials))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        if not (isinstance(self.dof, int) and self.dof >= 1):
            raise ConfigError("dof: must be a positive integer")
        if not (self.hbar_eff > 0):
            raise ConfigError("hbar_eff: must be positive")
        if len(self.potentials) != self.dof:
            raise ConfigError(f"potentials: expected {self.dof} entries, got {len(self.potentials)}")

    @property
    def kinetic_epsilon(self) -> float:
        return sum(c.epsilon for c in self.couplings if isinstance(c, KineticCoupling))

    @property
    def is_uncoupled(self) -> bool:
        return all(isinstance(c, KineticCoupling) and c.epsilon == 0 for c in self.couplings)

    def with_hbar(self, hbar: float) -> "SystemSpec":
        return SystemSpec(self.dof, hbar, self.potentials, self.couplings)

    @cached_property
    def hamiltonian(self) -> "Hamiltonian":
        return Hamiltonian(self)

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        pots = []
        for p in self.potentials:
            if isinstance(p, Eckart):
                pots.append({"family": "eckart", "a": p.a, "A": p.A, "B": p.B})
            elif isinstance(p, Morse):
                pots.append({"family": "morse", "De": p.De, "aM": p.aM})
            elif isinstance(p, Harmonic):
                pots.append({"family": "harmonic", "omega": p.omega})
            else:
                pots.append({"family": "polynomial", "coefficients": list(p.coefficients)})
        cpls = []
        for c in self.couplings:
            if isinstance(c, KineticCoupling):
                cpls.append({"type": "kinetic", "epsilon": c.epsilon})
            else:
                cpls.append(
                    {"type": "polynomial", "terms": [{"exponents": list(e), "coefficient": v} for e, v in c.terms]}
                )
        return {"dof": self.dof, "hbar_eff": self.hbar_eff, "potentials": pots, "couplings": cpls}


_POTENTIAL_KEYS = {
    "eckart": ("a", "A", "B"),
    "morse": ("De", "aM"),
    "harmonic": ("omega",),
    "polynomial": ("coefficients",),
}


def _exact_keys(obj: Mapping, required: Sequence[str], where: str) -> None:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{where}: expected an object")
    for k in required:
        if k not in obj:
            raise ConfigError(f"{where}: missing key '{k}'")
    for k in obj:
        if k not in required:
            raise ConfigError(f"{where}: unexpected key '{k}'")


def _number(val: Any, where: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    return float(val)


def load_polynomial_terms(path: str | Path) -> tuple[tuple[tuple[int, ...], float], ...]:
    """Read a polynomial PES file: a JSON list of ``{exponents, coefficient}``."""
    try:
        items = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"file: cannot read polynomial terms from {path}: {exc}") from exc
    return _parse_terms(items, f"file {path}")


def _parse_terms(items: Any, where: str) -> tuple[tuple[tuple[int, ...], float], ...]:
    if not isinstance(items, list):
        raise ConfigError(f"{where}: expected a list of terms")
    out = []
    for i, it in enumerate(items):
        _exact_keys(it, ("exponents", "coefficient"), f"{where}[{i}]")
        ex = it["exponents"]
        if not isinstance(ex, list) or not all(isinstance(e, int) and not isinstance(e, bool) and e >= 0 for e in ex):
            raise ConfigError(f"{where}[{i}]: 'exponents' must be a list of non-negative integers")
        out.append((tuple(ex), _number(it["coefficient"], f"{where}[{i}].coefficient")))
    return tuple(out)


def spec_from_dict(doc: Any, base_dir: str | Path | None = None) -> SystemSpec:
    """Validate and build a :class:`SystemSpec`; errors name the offending key."""
    _exact_keys(doc, ("dof", "hbar_eff", "potentials", "couplings"), "spec")
    dof = doc["dof"]
    if isinstance(dof, bool) or not isinstance(dof, int) or dof < 1:
        raise ConfigError("dof: must be a positive integer")
    hbar = _number(doc["hbar_eff"], "hbar_eff")
    if hbar <= 0:
        raise ConfigError("hbar_eff: must be positive")
    if not isinstance(doc["potentials"], list):
        raise ConfigError("potentials: expected a list")
    pots: list[Potential] = []
    for i, p in enumerate(doc["potentials"]):
        where = f"potentials[{i}]"
        if not isinstance(p, Mapping) or "family" not in p:
            raise ConfigError(f"{where}: missing key 'family'")
        fam = p["family"]
        if fam not in _POTENTIAL_KEYS:
            raise ConfigError(f"{where}.family: unknown potential family {fam!r}")
        _exact_keys(p, ("family", *_POTENTIAL_KEYS[fam]), where)
        try:
            if fam == "eckart":
                pots.append(Eckart(*(_number(p[k], f"{where}.{k}") for k in ("a", "A", "B"))))
            elif fam == "morse":
                pots.append(Morse(*(_number(p[k], f"{where}.{k}") for k in ("De", "aM"))))
            elif fam == "harmonic":
                pots.append(Harmonic(_number(p["omega"], f"{where}.omega")))
            else:
                coeffs = p["coefficients"]
                if not isinstance(coeffs, list):
                    raise ConfigError(f"{where}.coefficients: expected a list")
                pots.append(PolynomialPotential(tuple(_number(c, f"{where}.coefficients") for c in coeffs)))
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if not isinstance(doc["couplings"], list):
        raise ConfigError("couplings: expected a list")
    cpls: list[Coupling] = []
    for i, c in enumerate(doc["couplings"]):
        where = f"couplings[{i}]"
        if not isinstance(c, Mapping) or "type" not in c:
            raise ConfigError(f"{where}: missing key 'type'")
        if c["type"] == "kinetic":
            _exact_keys(c, ("type", "epsilon"), where)
            cpls.append(KineticCoupling(_number(c["epsilon"], f"{where}.epsilon")))
        elif c["type"] == "polynomial":
            if "file" in c:
                _exact_keys(c, ("type", "file"), where)
                path = Path(c["file"])
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                terms = load_polynomial_terms(path)
            else:
                _exact_keys(c, ("type", "terms"), where)
                terms = _parse_terms(c["terms"], f"{where}.terms")
            for ex, _ in terms:
                if len(ex) not in (dof, 2 * dof):
                    raise ConfigError(f"{where}.terms: exponent vector {list(ex)} must have length {dof} or {2 * dof}")
            cpls.append(PolynomialCoupling(terms))
        else:
            raise ConfigError(f"{where}.type: unknown coupling type {c['type']!r}")
    return SystemSpec(dof, hbar, tuple(pots), tuple(cpls))


# closed-form potentials -------------------------------------------------
def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _family_derivs(pot: Potential, q):
    """Value and first derivative of a one-dimensional potential."""
    q = np.asarray(q, dtype=float)
    if isinstance(pot, Eckart):
        s = _logistic((q + pot.q0) / pot.a)
        v = pot.A * s + pot.B * s * (1 - s)
        dv = (pot.A * s * (1 - s) + pot.B * s * (1 - s) * (1 - 2 * s)) / pot.a
    elif isinstance(pot, Morse):
        e1 = np.exp(-pot.aM * q)
        v = pot.De * (e1 * e1 - 2 * e1)
        dv = pot.De * (-2 * pot.aM * e1 * e1 + 2 * pot.aM * e1)
    elif isinstance(pot, Harmonic):
        v = 0.5 * pot.omega**2 * q * q
        dv = pot.omega**2 * q
    elif isinstance(pot, PolynomialPotential):
        c = np.polynomial.Polynomial(pot.coefficients)
        v, dv = c(q), c.deriv()(q)
    else:
        raise ConfigError(f"unknown potential family {type(pot).__name__}")
    return v, dv


def potential_value(spec: SystemSpec, k: int, q):
    """Value of the ``k``-th (0-based) coordinate potential at ``q``."""
    return _family_derivs(spec.potentials[k], q)[0]


class Hamiltonian:
    """Closed-form ``H(q, p)`` and its gradient for a :class:`SystemSpec`."""

    def __init__(self, spec: SystemSpec):
        self.spec = spec
        d = spec.dof
        self.eps = spec.kinetic_epsilon
        parts = [c for c in spec.couplings if isinstance(c, PolynomialCoupling)]
        deg = max((sum(e) for c in parts for e, _ in c.terms), default=0)
        poly = None
        for c in parts:
            part = c.as_polynomial(d, max(deg, 2))
            poly = part if poly is None else poly + part
        self.poly = poly
        self.poly_grad = poly.gradient() if poly is not None else None

    def value(self, z):
        z = np.asarray(z, dtype=float)
        d = self.spec.dof
        q, p = z[..., :d], z[..., d:]
        h = 0.5 * np.sum(p * p, axis=-1)
        if self.eps:
            s = np.sum(p, axis=-1)
            h = h + 0.5 * self.eps * (s * s - np.sum(p * p, axis=-1))
        for k, pot in enumerate(self.spec.potentials):
            h = h + _family_derivs(pot, q[..., k])[0]
        if self.poly is not None:
            h = h + self.poly.evaluate(z)
        return h

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        d = self.spec.dof
        q, p = z[..., :d], z[..., d:]
        g = np.zeros_like(z)
        g[..., d:] = p
        if self.eps:
            g[..., d:] += self.eps * (np.sum(p, axis=-1, keepdims=True) - p)
        for k, pot in enumerate(self.spec.potentials):
            g[..., k] = _family_derivs(pot, q[..., k])[1]
        if self.poly_grad is not None:
            for v, gp in enumerate(self.poly_grad):
                g[..., v] += gp.evaluate(z)
        return g

    def vector_field(self, z):
        """Hamilton's equations ``(dH/dp, -dH/dq)``."""
        g = self.gradient(z)
        d = self.spec.dof
        return np.concatenate([g[..., d:], -g[..., :d]], axis=-1)


# truncated univariate power series --------------------------------------
class Series:
    """Truncated power series ``sum c_n t^n`` up to a fixed order."""

    __slots__ = ("c",)

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs, dtype=float)

    @classmethod
    def linear(cls, c0: float, c1: float, order: int) -> "Series":
        c = np.zeros(order + 1)
        c[0] = c0
        if order >= 1:
            c[1] = c1
        return cls(c)

    @property
    def order(self) -> int:
        return self.c.size - 1

    def _coerce(self, other) -> "Series":
        if isinstance(other, Series):
            return other
        c = np.zeros_like(self.c)
        c[0] = other
        return Series(c)

    def __add__(self, other):
        return Series(self.c + self._coerce(other).c)

    __radd__ = __add__

    def __neg__(self):
        return Series(-self.c)

    def __sub__(self, other):
        return Series(self.c - self._coerce(other).c)

    def __rsub__(self, other):
        return Series(self._coerce(other).c - self.c)

    def __mul__(self, other):
        if isinstance(other, Series):
            return Series(np.convolve(self.c, other.c)[: self.c.size])
        return Series(self.c * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Series):
            return Series(self.c / other)
        b = other.c
        if abs(b[0]) < 1e-300 or abs(b[0]) < 1e-14 * np.abs(b).max():
            raise DomainError("series division by a vanishing leading coefficient")
        out = np.zeros_like(self.c)
        for n in range(self.c.size):
            out[n] = (self.c[n] - np.dot(out[:n], b[n:0:-1])) / b[0]
        return Series(out)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def exp(self) -> "Series":
        a = self.c
        out = np.zeros_like(a)
        out[0] = math.exp(a[0])
        for n in range(1, a.size):
            k = np.arange(1, n + 1)
            out[n] = np.dot(k * a[1 : n + 1], out[n - k]) / n
        return Series(out)


def _family_series(pot: Potential, center: float, order: int) -> Series:
    """Taylor series of ``V(center + t)`` in ``t``."""
    if isinstance(pot, Eckart):
        u = Series.linear((center + pot.q0) / pot.a, 1.0 / pot.a, order)
        if u.c[0] > 0:
            s = 1.0 / (1.0 + (-u).exp())
        else:
            e = u.exp()
            s = e / (1.0 + e)
        return pot.A * s + pot.B * s * (1.0 - s)
    if isinstance(pot, Morse):
        e1 = Series.linear(-pot.aM * center, -pot.aM, order).exp()
        return pot.De * (e1 * e1 - 2.0 * e1)
    if isinstance(pot, Harmonic):
        t = Series.linear(center, 1.0, order)
        return 0.5 * pot.omega**2 * t * t
    if isinstance(pot, PolynomialPotential):
        shifted = np.polynomial.Polynomial(pot.coefficients)(np.polynomial.Polynomial([center, 1.0]))
        c = np.zeros(order + 1)
        n = min(order + 1, shifted.coef.size)
        c[:n] = shifted.coef[:n]
        return Series(c)
    raise ConfigError(f"unknown potential family {type(pot).__name__}")


def shift_polynomial(poly: PhasePolynomial, center, order: int) -> PhasePolynomial:
    """Re-expand ``poly(center + z)`` in powers of ``z`` up to ``order``."""
    d = poly.dof
    center = np.asarray(center, dtype=float)
    out = PhasePolynomial.zero(d, order)
    cache: dict[tuple[int, int], PhasePolynomial] = {}

    def power(v: int, e: int) -> PhasePolynomial:
        if (v, e) not in cache:
            rows = np.zeros((e + 1, 2 * d + 1), dtype=np.int64)
            rows[:, v] = np.arange(e + 1)
            vals = np.array([math.comb(e, i) * center[v] ** (e - i) for i in range(e + 1)])
            cache[(v, e)] = PhasePolynomial.from_arrays(d, rows, vals, order)
        return cache[(v, e)]

    for row, c in zip(poly.exps, poly.coeffs):
        term = PhasePolynomial.constant(d, float(c), order)
        for v in range(2 * d):
            if row[v]:
                term = term * power(v, int(row[v]))
        out = out + term
    return out


def taylor_expand(spec: SystemSpec, center, order: int) -> PhasePolynomial:
    """Taylor polynomial of ``H(center + z)`` in ``z`` through grade ``order``.

    Parameters
    ----------
    spec : SystemSpec
        System to expand.
    center : array_like, shape (2d,)
        Phase-space expansion point ``(q, p)``.
    order : int
        Truncation grade.

    Returns
    -------
    PhasePolynomial
        Classical polynomial (no hbar terms).
    """
    d = spec.dof
    center = np.asarray(center, dtype=float)
    if center.shape != (2 * d,):
        raise ConfigError(f"center must have shape ({2 * d},)")
    rows, vals = [], []
    for k, pot in enumerate(spec.potentials):
        ser = _family_series(pot, float(center[k]), order)
        for n, c in enumerate(ser.c):
            row = [0] * (2 * d + 1)
            row[k] = n
            rows.append(row)
            vals.append(c)
    h = PhasePolynomial.from_arrays(d, np.array(rows), np.array(vals), order)

    pc = center[d:]
    kin_rows, kin_vals = [], []
    for k in range(d):
        for n, c in ((0, 0.5 * pc[k] ** 2), (1, pc[k]), (2, 0.5)):
            row = [0] * (2 * d + 1)
            row[d + k] = n
            kin_rows.append(row)
            kin_vals.append(c)
    h = h + PhasePolynomial.from_arrays(d, np.array(kin_rows), np.array(kin_vals), order)

    for cpl in spec.couplings:
        if isinstance(cpl, KineticCoupling):
            if cpl.epsilon == 0:
                continue
            for i, j in itertools.combinations(range(d), 2):
                pi = PhasePolynomial.variable(d, f"p{i + 1}", order) + pc[i]
                pj = PhasePolynomial.variable(d, f"p{j + 1}", order) + pc[j]
                h = h + cpl.epsilon * (pi * pj)
        else:
            deg = max((sum(e) for e, _ in cpl.terms), default=0)
            poly = cpl.as_polynomial(d, max(deg, order))
            h = h + shift_polynomial(poly, center, order)
    return h


# equilibria -------------------------------------------------------------
@dataclass(frozen=True)
class Equilibrium:
    point: NDArray
    hessian: NDArray
    residual: float
    iterations: int

    @property
    def index(self) -> int:
        """Number of negative curvature directions of the potential."""
        return int(np.sum(np.linalg.eigvalsh(0.5 * (self.hessian + self.hessian.T)) < 0))


def _grad_hess(spec: SystemSpec, q: NDArray) -> tuple[NDArray, NDArray]:
    d = spec.dof
    poly = taylor_expand(spec, np.r_[q, np.zeros(d)], 2)
    g = np.zeros(d)
    hmat = np.zeros((d, d))
    for row, c in zip(poly.exps, poly.coeffs):
        e = row[:d]
        if row[d : 2 * d].any():
            continue
        s = int(e.sum())
        if s == 1:
            g[int(np.argmax(e))] += c
        elif s == 2:
            idx = np.flatnonzero(e)
            if idx.size == 1:
                hmat[idx[0], idx[0]] += 2 * c
            else:
                hmat[idx[0], idx[1]] += c
                hmat[idx[1], idx[0]] += c
    return g, hmat


def find_equilibrium(
    spec: SystemSpec, guess=None, *, tol: float = 1e-12, max_iter: int = 100
) -> Equilibrium:
    """Newton iteration on the potential gradient with ``p = 0``.

    The step is halved while it increases the gradient norm.
    """
    d = spec.dof
    q = np.zeros(d) if guess is None else np.atleast_1d(np.asarray(guess, dtype=float)).copy()
    g, hmat = _grad_hess(spec, q)
    res = float(np.linalg.norm(g))
    for it in range(max_iter + 1):
        if res < tol:
            return Equilibrium(np.r_[q, np.zeros(d)], hmat, res, it)
        if it == max_iter:
            break
        try:
            step = -np.linalg.solve(hmat, g)
        except np.linalg.LinAlgError:
            raise ConvergenceError(f"singular Hessian at q={q.tolist()}, residual {res:.3e}") from None
        for _ in range(60):
            trial = q + step
            g_t, h_t = _grad_hess(spec, trial)
            r_t = float(np.linalg.norm(g_t))
            if r_t <= res or r_t < tol:
                break
            step = 0.5 * step
        q, g, hmat, res = trial, g_t, h_t, r_t
    raise ConvergenceError(f"equilibrium search did not converge in {max_iter} iterations; last residual {res:.3e}")


# oracles ----------------------------------------------------------------
@dataclass(frozen=True)
class EckartOracleParams:
    alpha: float
    beta: float
    delta: complex
    C: float


def eckart_params(a: float, A: float, B: float, hbar_eff: float, E: float) -> EckartOracleParams:
    C = hbar_eff**2 / (8 * a * a)
    delta = 0.5 * np.sqrt(complex((B - C) / C))
    return EckartOracleParams(
        0.5 * math.sqrt(max(E, 0.0) / C), 0.5 * math.sqrt(max(E - A, 0.0) / C), delta, C
    )


def _log_sinh(x):
    return x + np.log1p(-np.exp(-2 * x)) - math.log(2.0)


def _log_cosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2 * x)) - math.log(2.0)


def eckart_exact_transmission(a: float, A: float, B: float, hbar_eff: float, E):
    """Exact Eckart transmission probability, zero for ``E <= A``.

    Evaluated as ``2 sinh(2 pi alpha) sinh(2 pi beta) /
    (cosh(2 pi (alpha + beta)) + cosh(2 pi delta))`` in logarithmic form,
    which equals ``1 - [cosh 2pi(alpha-beta) + cosh 2pi delta] /
    [cosh 2pi(alpha+beta) + cosh 2pi delta]`` without overflow.
    """
    Eckart(a, A, B)
    if hbar_eff <= 0:
        raise ConfigError("hbar_eff: must be positive")
    E = np.asarray(E, dtype=float)
    C = hbar_eff**2 / (8 * a * a)
    out = np.zeros(E.shape)
    open_ = E > A
    if np.any(open_):
        e = E[open_]
        x = 2 * np.pi * 0.5 * np.sqrt(e / C)
        y = 2 * np.pi * 0.5 * np.sqrt((e - A) / C)
        lognum = math.log(2.0) + _log_sinh(x) + _log_sinh(y)
        if B > C:
            dd = 2 * np.pi * 0.5 * math.sqrt((B - C) / C)

            def log_mix(u):
                return np.logaddexp(_log_cosh(u), _log_cosh(dd))

        else:
            dd = 2 * np.pi * 0.5 * math.sqrt((C - B) / C)

            def log_mix(u):
                return _log_cosh(u) + np.log1p(math.cos(dd) / np.cosh(np.minimum(np.abs(u), 700.0)))

        logden = log_mix(x + y)
        T = np.exp(lognum - logden)
        # near full transmission 1 - R keeps the value monotone
        R = np.exp(log_mix(x - y) - logden)
        out[open_] = np.clip(np.where(T > 0.5, 1.0 - R, T), 0.0, 1.0)
    return out if out.ndim else float(out)


def morse_dissociation_bound(De: float, aM: float, hbar_eff: float) -> float:
    """Bound ``sqrt(2 De) / (aM hbar)`` on ``n + 1/2`` for bound levels."""
    return math.sqrt(2 * De) / (aM * hbar_eff)


def morse_levels(De: float, aM: float, hbar_eff: float, n) -> NDArray | float:
    """Bound-state energies ``-1/2 aM^2 hbar^2 (n + 1/2 - sqrt(2 De)/(aM hbar))^2``."""
    Morse(De, aM)
    nn = np.asarray(n)
    if np.any(nn < 0) or np.any(nn + 0.5 >= morse_dissociation_bound(De, aM, hbar_eff)):
        raise DomainError(f"Morse level index {n} outside the bound spectrum")
    x = nn + 0.5 - morse_dissociation_bound(De, aM, hbar_eff)
    out = -0.5 * aM * aM * hbar_eff * hbar_eff * x * x
    return out if np.ndim(out) else float(out)


def _bath_levels(pot: Potential, hbar: float, emax: float) -> NDArray:
    if isinstance(pot, Morse):
        nmax = math.ceil(morse_dissociation_bound(pot.De, pot.aM, hbar) - 0.5) - 1
        levels = morse_levels(pot.De, pot.aM, hbar, np.arange(nmax + 1))
        return np.atleast_1d(levels)
    if isinstance(pot, Harmonic):
        nmax = max(int(math.floor(emax / (hbar * pot.omega) - 0.5)), 0)
        return hbar * pot.omega * (np.arange(nmax + 1) + 0.5)
    raise ConfigError(f"exact CRP oracle does not support bath family {type(pot).__name__}")


def exact_crp_uncoupled(spec: SystemSpec, E):
    """Exact cumulative reaction probability of an uncoupled Eckart system.

    ``N(E) = sum_n T_exact(E - sum_k E_{k, n_k})`` over all bound bath levels
    (Morse) or all levels below the energy (harmonic).
    """
    if not spec.is_uncoupled:
        raise ConfigError("exact CRP oracle requires zero coupling")
    eck = spec.potentials[0]
    if not isinstance(eck, Eckart):
        raise ConfigError("exact CRP oracle requires an Eckart reaction coordinate")
    E = np.asarray(E, dtype=float)
    emax = float(E.max()) - eck.A if E.size else 0.0
    baths = [_bath_levels(p, spec.hbar_eff, emax + 1.0 if isinstance(p, Harmonic) else 0.0) for p in spec.potentials[1:]]
    if baths:
        grids = np.meshgrid(*baths, indexing="ij")
        shifts = np.sort(np.sum(grids, axis=0).ravel())
    else:
        shifts = np.zeros(1)
    flat = E.ravel()
    total = np.zeros(flat.shape)
    for i, e in enumerate(flat):
        arg = e - shifts
        arg = arg[arg > eck.A]
        if arg.size:
            total[i] = float(np.sum(eckart_exact_transmission(eck.a, eck.A, eck.B, spec.hbar_eff, arg)))
    out = total.reshape(E.shape)
    return out if out.ndim else float(out)


def emm_spec(epsilon: float = 0.0, hbar_eff: float = 0.1) -> SystemSpec:
    """Eckart barrier coupled to two Morse oscillators (``De = 1, 1.5``)."""
    return SystemSpec(
        3,
        hbar_eff,
        (Eckart(1.0, 0.5, 5.0), Morse(1.0, 1.0), Morse(1.5, 1.0)),
        (KineticCoupling(epsilon),),
    )
