"""Quantum reaction observables from an operator-ordered normal form.

All functions take ``K_op``, the quantum normal form written as a
polynomial in the operators ``I`` and ``J_k`` (see
:func:`saddlescope.normalform.weyl_order`), together with ``hbar_eff``.
Channels are labelled by bath quantum numbers ``n = (n_2, .., n_d)``.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import quad

from .errors import ConfigError, ConvergenceError, DomainError, NumericalValidityError
from .polyalg import ActionPolynomial

CLOSED_T = 1e-12

# Stirling coefficients B_{2k} / (2k (2k-1)) for k = 1..10
_STIRLING = (
    1 / 12,
    -1 / 360,
    1 / 1260,
    -1 / 1680,
    1 / 1188,
    -691 / 360360,
    1 / 156,
    -3617 / 122400,
    43867 / 244188,
    -174611 / 125400,
)
_SHIFT = 18.0


def loggamma(z):
    """Principal log-Gamma for ``Re z > 0`` via upward recurrence and Stirling.

    The argument is shifted until ``|z| >= 18`` so that ten Stirling terms
    reach double precision.
    """
    z = np.asarray(z, dtype=complex)
    if np.any(z.real <= 0):
        raise DomainError("loggamma is implemented for Re z > 0 only")
    shift = np.zeros(z.shape, dtype=complex)
    w = z.copy()
    while True:
        small = np.abs(w) < _SHIFT
        if not np.any(small):
            break
        shift[small] += np.log(w[small])
        w[small] += 1.0
    inv = 1.0 / w
    inv2 = inv * inv
    series = np.zeros(w.shape, dtype=complex)
    for c in reversed(_STIRLING):
        series = series * inv2 + c
    series *= inv
    out = (w - 0.5) * np.log(w) - w + 0.5 * math.log(2 * math.pi) + series - shift
    return out if out.ndim else complex(out)


def transmission(I, hbar_eff: float):
    """``1 / (1 + exp(-2 pi I / hbar))``, paired with :func:`reflection` so ``T + R == 1``."""
    x = 2 * np.pi * np.asarray(I, dtype=float) / hbar_eff
    small = 1.0 / (1.0 + np.exp(-np.abs(x)))
    out = np.where(x >= 0, small, 1.0 - small)
    return out if out.ndim else float(out)


def reflection(I, hbar_eff: float):
    x = 2 * np.pi * np.asarray(I, dtype=float) / hbar_eff
    small = 1.0 / (1.0 + np.exp(-np.abs(x)))
    out = np.where(x >= 0, 1.0 - small, small)
    return out if out.ndim else float(out)


def flux_expectation(I, hbar_eff: float, side: str = "reactants"):
    """Flux through the dividing surface, ``+T/(2 pi hbar)`` for reactants."""
    if side not in ("reactants", "products"):
        raise ConfigError(f"side must be 'reactants' or 'products', got {side!r}")
    sign = 1.0 if side == "reactants" else -1.0
    return sign * transmission(I, hbar_eff) / (2 * np.pi * hbar_eff)


def smatrix_local(I: float, hbar_eff: float) -> NDArray:
    """2x2 S-matrix of the inverted oscillator at action ``I``.

    Index 0 is the product side and index 1 the reactant side. Entries are
    assembled from their logarithms so that no intermediate overflows.
    """
    y = I / hbar_eff
    L = loggamma(0.5 - 1j * y)
    base = 1j * (math.pi / 4 - y * math.log(hbar_eff)) + L - 0.5 * math.log(2 * math.pi)
    diag = -1j * np.exp(base - math.pi * y / 2)
    off = np.exp(base + math.pi * y / 2)
    return np.array([[diag, off], [off, diag]])


# channels ----------------------------------------------------------------------
@dataclass(frozen=True)
class Channel:
    n: tuple[int, ...]
    I_n: float
    T_n: float


def _linear_data(K_op: ActionPolynomial) -> tuple[float, float, NDArray]:
    d = K_op.dof
    zero = [0] * (d + 1)
    E0 = K_op.coefficient(tuple(zero))
    lam = K_op.coefficient(tuple([1] + zero[1:]))
    omega = []
    for k in range(1, d):
        key = list(zero)
        key[k] = 1
        omega.append(K_op.coefficient(tuple(key)))
    if lam <= 0:
        raise DomainError("K_op has no positive linear I coefficient")
    return E0, lam, np.array(omega)


def _bath_actions(n: Sequence[int], hbar_eff: float) -> list[float]:
    return [hbar_eff * (k + 0.5) for k in n]


def solve_channel_action(
    K_op: ActionPolynomial, E: float, n: Sequence[int], hbar_eff: float, max_iter: int = 50
) -> float:
    """Reactive action ``I_n`` with ``K_op(I_n, hbar (n + 1/2)) = E``.

    Newton's method starts from the quadratic-order value. Raises
    :class:`ConvergenceError` without convergence in ``max_iter`` steps and
    :class:`DomainError` when ``dK/dI <= 0`` at the root.
    """
    n = tuple(int(k) for k in n)
    if len(n) != K_op.dof - 1:
        raise ConfigError(f"channel {n} needs {K_op.dof - 1} bath quantum numbers")
    E0, lam, omega = _linear_data(K_op)
    J = _bath_actions(n, hbar_eff)
    c = K_op.in_I(J, hbar_eff)
    poly = np.polynomial.Polynomial(c) - E
    dpoly = poly.deriv()
    tol = 1e-12 * max(1.0, abs(E))
    I = (E - E0 - float(np.dot(omega, J))) / lam
    for _ in range(max_iter):
        r = poly(I)
        if abs(r) < tol:
            break
        slope = dpoly(I)
        if slope <= 0:
            raise DomainError(f"dK/dI = {slope:.3e} <= 0 near I = {I:.6g} in channel {n}; energy outside local validity")
        I -= r / slope
    else:
        raise ConvergenceError(f"no convergence for channel {n} at E = {E}: residual {poly(I):.3e}")
    if dpoly(I) <= 0:
        raise DomainError(f"dK/dI <= 0 at the root in channel {n}; energy outside local validity")
    return float(I)


def _shell(omega: NDArray, s: int) -> list[tuple[int, ...]]:
    """Bath channels with ``floor(omega . n / min(omega)) == s``, ordered by ``omega . n``."""
    w = omega / omega.min()
    out: list[tuple[int, ...]] = []

    def rec(prefix: tuple[int, ...], used: float):
        k = len(prefix)
        if k == len(w):
            if s <= used < s + 1:
                out.append(prefix)
            return
        m = 0
        while used + m * w[k] < s + 1:
            rec(prefix + (m,), used + m * w[k])
            m += 1

    rec((), 0.0)
    return sorted(out, key=lambda n: (float(np.dot(w, n)), n))


def channels(
    K_op: ActionPolynomial, E: float, hbar_eff: float, closed_tol: float = CLOSED_T, max_shells: int = 10_000
) -> list[Channel]:
    """Open and marginal channels at energy ``E``, in shell order.

    Shells collect channels by ``omega . n`` in units of the smallest
    frequency. Enumeration stops at the first shell beyond the open region
    whose largest transmission is below ``closed_tol``. A channel whose
    Newton solve fails is counted as closed when its quadratic-order
    transmission is below ``closed_tol**2``; otherwise the failure is
    raised.
    """
    E0, lam, omega = _linear_data(K_op)
    if omega.size == 0:
        return [Channel((), (I := solve_channel_action(K_op, E, (), hbar_eff)), transmission(I, hbar_eff))]
    out: list[Channel] = []
    for s in range(max_shells):
        shell_max = 0.0
        for n in _shell(omega, s):
            try:
                I = solve_channel_action(K_op, E, n, hbar_eff)
            except NumericalValidityError:
                I0 = (E - E0 - float(np.dot(omega, _bath_actions(n, hbar_eff)))) / lam
                if transmission(I0, hbar_eff) < closed_tol**2:
                    continue
                raise
            T = transmission(I, hbar_eff)
            shell_max = max(shell_max, T)
            out.append(Channel(n, I, T))
        threshold = E0 + hbar_eff * (omega.min() * s + 0.5 * omega.sum())
        if shell_max < closed_tol and threshold > E:
            return out
    raise ConvergenceError(f"channel enumeration did not terminate within {max_shells} shells")


def crp(K_op: ActionPolynomial, E: float, hbar_eff: float, closed_tol: float = CLOSED_T) -> float:
    """Cumulative reaction probability ``N(E) = sum_n T(I_n(E))``."""
    return float(math.fsum(c.T_n for c in channels(K_op, E, hbar_eff, closed_tol)))


def crp_curve(K_op: ActionPolynomial, energies, hbar_eff: float, workers: int = 1) -> NDArray:
    """:func:`crp` on a grid; points may be spread over threads, order is preserved."""
    energies = [float(e) for e in np.asarray(energies, dtype=float)]
    job = lambda e: crp(K_op, e, hbar_eff)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return np.array(list(ex.map(job, energies)))
    return np.array([job(e) for e in energies])


@dataclass(frozen=True)
class BlockSMatrix:
    """Channel-diagonal S-matrix; blocks are keyed by bath quantum numbers."""

    blocks: dict = field(default_factory=dict)

    def dense(self) -> NDArray:
        keys = list(self.blocks)
        out = np.zeros((2 * len(keys), 2 * len(keys)), dtype=complex)
        for i, k in enumerate(keys):
            out[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = self.blocks[k]
        return out

    def total_transmission(self) -> float:
        return float(math.fsum(abs(b[0, 1]) ** 2 for b in self.blocks.values()))


def smatrix_full(
    K_op: ActionPolynomial, E: float, hbar_eff: float, channel_list: Sequence[Sequence[int]] | None = None
) -> BlockSMatrix:
    """Block S-matrix over ``channel_list`` (default: the channels used by :func:`crp`)."""
    if channel_list is None:
        pairs = [(c.n, c.I_n) for c in channels(K_op, E, hbar_eff)]
    else:
        pairs = [(tuple(n), solve_channel_action(K_op, E, n, hbar_eff)) for n in channel_list]
    return BlockSMatrix({n: smatrix_local(I, hbar_eff) for n, I in pairs})


# thermal rate -----------------------------------------------------------------
def _one_minus_exp_1px(x: NDArray) -> NDArray:
    """``1 - exp(-x) (1 + x)`` without cancellation for small ``x``."""
    x = np.asarray(x, dtype=float)
    out = -np.expm1(-x) - x * np.exp(-x)
    small = x < 0.1
    if np.any(small):
        xs = x[small]
        u = xs * xs / 2
        acc = np.zeros_like(xs)
        for k in range(2, 24):
            acc += (k - 1) * u
            u = -u * xs / (k + 1)
        out[small] = acc
    return out


def _piecewise_linear_laplace(E: NDArray, N: NDArray, beta: float, E_ref: float) -> float:
    """Exact ``int exp(-beta (E - E_ref)) N(E) dE`` for linear interpolation of the samples."""
    a, b = E[:-1], E[1:]
    h = b - a
    x = beta * h
    Fa = np.exp(-beta * (a - E_ref))
    slope = (N[1:] - N[:-1]) / h
    zeroth = Fa * (-np.expm1(-x)) / beta
    first = Fa * _one_minus_exp_1px(x) / beta**2
    return float(math.fsum(N[:-1] * zeroth + slope * first))


def thermal_rate(
    crp_data,
    beta: float,
    Q_r: float,
    *,
    E_min: float | None = None,
    E_max: float | None = None,
    tail_tol: float = 1e-6,
) -> float:
    """Thermal rate ``k = (2 pi Q_r)^-1 int exp(-beta E) N(E) dE``.

    Parameters
    ----------
    crp_data : callable or (energies, values)
        ``N(E)`` as a function (integrated adaptively on ``[E_min, E_max]``)
        or as samples (integrated exactly for their linear interpolant).
    beta, Q_r : float
        Inverse temperature and reactant partition function.
    tail_tol : float
        Largest admissible ratio of the estimated mass above ``E_max`` to
        the integral. ``N`` is taken as zero below ``E_min``.
    """
    if beta <= 0 or Q_r <= 0:
        raise ConfigError("beta and Q_r must be positive")
    if callable(crp_data):
        if E_min is None or E_max is None:
            raise ConfigError("a callable N(E) needs E_min and E_max")
        E_ref = E_min
        func: Callable[[float], float] = crp_data
        val, _ = quad(
            lambda e: math.exp(-beta * (e - E_ref)) * func(e), E_min, E_max, epsabs=0.0, epsrel=1e-11, limit=1000
        )
        N_top = func(E_max)
    else:
        E, N = (np.asarray(x, dtype=float) for x in crp_data)
        if E.ndim != 1 or E.shape != N.shape or E.size < 2 or np.any(np.diff(E) <= 0):
            raise ConfigError("sampled N(E) needs matching 1-D arrays with increasing energies")
        E_min, E_max = float(E[0]), float(E[-1])
        E_ref = E_min
        val = _piecewise_linear_laplace(E, N, beta, E_ref)
        N_top = float(N[-1])
    tail = abs(N_top) * math.exp(-beta * (E_max - E_ref)) / beta
    if val <= 0 or tail > tail_tol * abs(val):
        raise DomainError(
            f"energy window too small: estimated mass above E_max is {tail:.3e} against integral {val:.3e}"
        )
    return math.exp(-beta * E_ref) * val / (2 * math.pi * Q_r)


# resonances --------------------------------------------------------------------
@dataclass(frozen=True)
class ResonanceEntry:
    n: tuple[int, ...]
    E: complex
    lifetime: float
    valid: bool


def resonance_energy(K_op: ActionPolynomial, n: Sequence[int], hbar_eff: float) -> complex:
    """``K_op(-i hbar (n_1 + 1/2), hbar (n_k + 1/2))``."""
    I = -1j * hbar_eff * (n[0] + 0.5)
    J = [complex(x) for x in _bath_actions(n[1:], hbar_eff)]
    return complex(K_op.evaluate(np.asarray(I), [np.asarray(x) for x in J], hbar_eff))


def resonances(K_op: ActionPolynomial, hbar_eff: float, n_max) -> list[ResonanceEntry]:
    """Resonance table for ``0 <= n_k <= n_max`` (an int or one bound per mode).

    Entries are sorted by ``|Im E|``. Entries with ``Im E > 0`` are kept
    and flagged ``valid=False``.
    """
    d = K_op.dof
    bounds = [int(n_max)] * d if np.isscalar(n_max) else [int(x) for x in n_max]
    if len(bounds) != d:
        raise ConfigError(f"n_max needs {d} entries")
    out = []
    for n in itertools.product(*(range(b + 1) for b in bounds)):
        E = resonance_energy(K_op, n, hbar_eff)
        life = hbar_eff / abs(E.imag) if E.imag != 0 else math.inf
        out.append(ResonanceEntry(n, E, life, E.imag <= 0))
    out.sort(key=lambda r: (abs(r.E.imag), r.E.real, r.n))
    return out


def autocorrelation(
    K_op: ActionPolynomial, hbar_eff: float, bath_n: Sequence[int], t, term_tol: float = 1e-14, max_terms: int = 200_000
) -> NDArray:
    """``|<Psi|Psi(t)>|^2`` for a Gaussian on the NHIM times bath eigenstates.

    The overlap is ``sqrt(2/pi) sum_n a_n (-1)^n z_n`` with
    ``a_n = Gamma(n + 1/2)/n!`` and ``z_n = exp(-i E_{2n} t / hbar)``. The
    part ``z_0 rho^n`` with ``rho = z_1/z_0`` is summed in closed form;
    the remainder vanishes for a quadratic ``K`` and is summed until its
    terms drop below ``term_tol``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    bath_n = tuple(int(k) for k in bath_n)
    if np.any(t < 0):
        raise ConfigError("autocorrelation is defined for t >= 0")

    bath = [np.asarray(x + 0j) for x in _bath_actions(bath_n, hbar_eff)]

    def energies(m: NDArray) -> NDArray:
        E = np.asarray(K_op.evaluate(-1j * hbar_eff * (2 * m + 0.5), bath, hbar_eff), dtype=complex)
        E = np.broadcast_to(E, m.shape)
        if np.any(E.imag > 0):
            bad = int(m[np.argmax(E.imag > 0)])
            raise NumericalValidityError(f"resonance (2*{bad}, {bath_n}) has Im E > 0; outside validity")
        return E

    E0, E1 = energies(np.array([0.0, 1.0]))
    z0 = np.exp(-1j * E0 * t / hbar_eff)
    rho = np.exp(-1j * (E1 - E0) * t / hbar_eff)
    total = z0 * math.sqrt(math.pi) / np.sqrt(1 + rho)
    log_a = math.lgamma(1.5)  # log Gamma(m + 1/2) / m! at m = 1
    start, chunk = 2, 16
    while start < max_terms:
        m = np.arange(start, start + chunk, dtype=float)
        la = log_a + np.cumsum(np.log((m - 0.5) / m))
        log_a = float(la[-1])
        sign = np.where(m % 2 == 0, 1.0, -1.0)
        phase = np.exp(-1j * np.outer(energies(m), t) / hbar_eff)
        geo = z0 * np.exp(np.outer(m, np.log(rho)))
        terms = (sign * np.exp(la))[:, None] * (phase - geo)
        total = total + terms.sum(axis=0)
        if np.max(np.abs(terms[-1])) < term_tol:
            break
        start, chunk = start + chunk, min(2 * chunk, 1024)
    else:
        raise ConvergenceError("autocorrelation remainder did not converge")
    amp = math.sqrt(2 / math.pi) * total
    return np.abs(amp) ** 2


@dataclass(frozen=True)
class ConvergenceSeries:
    c: tuple[float, ...]


def convergence_radius(series: ConvergenceSeries | Sequence[float]) -> dict:
    """Ratios ``c_n / c_{n+1}`` and their minimum as the radius estimate."""
    c = list(series.c if isinstance(series, ConvergenceSeries) else series)
    if len(c) < 2:
        raise ConfigError("at least two coefficients are needed")
    ratios = [abs(a / b) for a, b in zip(c[:-1], c[1:]) if a != 0 and b != 0]
    if not ratios:
        raise ConfigError("no usable coefficient ratio")
    return {"ratios": ratios, "estimate": min(ratios)}
