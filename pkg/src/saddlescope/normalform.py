"""Classical and quantum normal forms near a saddle-center-...-center point.

The pipeline is: locate the equilibrium, Taylor expand, bring the quadratic
part to ``lambda q1 p1 + sum (omega_k / 2)(q_k^2 + p_k^2)`` with a linear
symplectic map, then remove non-normal terms grade by grade with Lie
transforms generated by solutions of the homological equation.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import NumericalValidityError, SmallDivisorError, StabilityError, StructuralError
from .polyalg import (
    ActionPolynomial,
    PhasePolynomial,
    canonicalize,
    lie_transform,
    phase_from_json,
    phase_to_json,
)
from .systems import SystemSpec, find_equilibrium, taylor_expand

MAX_ORDER = 12


@dataclass(frozen=True)
class LinearSpectrum:
    lam: float
    omega: tuple[float, ...]
    E0: float

    @property
    def dof(self) -> int:
        return len(self.omega) + 1

    @property
    def resonance_tol(self) -> float:
        return 1e-8 * (self.lam + sum(self.omega))


@dataclass(frozen=True)
class LinearSymplecticMap:
    """``z_nf = M z_phys`` and its inverse."""

    M: NDArray
    Minv: NDArray


def symplectic_form(d: int) -> NDArray:
    J = np.zeros((2 * d, 2 * d))
    J[:d, d:] = np.eye(d)
    J[d:, :d] = -np.eye(d)
    return J


def quadratic_matrix(h2: PhasePolynomial) -> NDArray:
    """Symmetric ``S`` with ``h2 = z^T S z / 2`` (hbar terms ignored)."""
    d = h2.dof
    S = np.zeros((2 * d, 2 * d))
    for row, c in zip(h2.exps, h2.coeffs):
        if row[2 * d] or row[: 2 * d].sum() != 2:
            continue
        idx = np.flatnonzero(row[: 2 * d])
        if idx.size == 1:
            S[idx[0], idx[0]] += 2 * c
        else:
            S[idx[0], idx[1]] += c
            S[idx[1], idx[0]] += c
    return S


def normal_quadratic(spectrum: LinearSpectrum, order: int, E0: bool = False) -> PhasePolynomial:
    """``lambda q1 p1 + sum (omega_k/2)(q_k^2 + p_k^2)`` (plus ``E0`` if asked)."""
    d = spectrum.dof
    terms = {}
    row = [0] * (2 * d + 1)
    if E0:
        terms[tuple(row)] = spectrum.E0
    r = list(row)
    r[0] = r[d] = 1
    terms[tuple(r)] = spectrum.lam
    for k, w in enumerate(spectrum.omega, start=1):
        for col in (k, d + k):
            r = list(row)
            r[col] = 2
            terms[tuple(r)] = w / 2
    return PhasePolynomial.from_terms(d, terms, order)


def linearize(h2: PhasePolynomial, *, E0: float = 0.0, tol: float = 1e-9) -> tuple[LinearSpectrum, LinearSymplecticMap]:
    """Symplectic map bringing a quadratic Hamiltonian to normal form.

    Parameters
    ----------
    h2 : PhasePolynomial
        Quadratic part of the Hamiltonian at the equilibrium.
    E0 : float
        Energy at the equilibrium, stored in the returned spectrum.
    tol : float
        Relative tolerance used to classify eigenvalues as real or
        imaginary.

    Returns
    -------
    spectrum : LinearSpectrum
        ``lambda`` and the ``omega_k`` in increasing order.
    linmap : LinearSymplecticMap
        ``M`` with ``M^T J M = J``.

    Notes
    -----
    Saddle eigenvectors ``u_+`` and ``u_-`` are scaled to unit symplectic
    pairing and equal length, with the largest position entry of ``u_+``
    positive. Each center eigenvector for ``+i omega`` is rotated so that
    its largest position entry is ``-i |v_m|``; the columns for ``q_k`` and
    ``p_k`` are then ``-Im v`` and ``Re v``.
    """
    d = h2.dof
    S = quadratic_matrix(h2)
    J = symplectic_form(d)
    A = J @ S
    vals, vecs = np.linalg.eig(A)
    scale = max(np.abs(vals).max(), 1e-300)
    real = np.abs(vals.imag) <= tol * scale
    imag = np.abs(vals.real) <= tol * scale
    pos_real = [i for i in range(2 * d) if real[i] and vals[i].real > tol * scale]
    neg_real = [i for i in range(2 * d) if real[i] and vals[i].real < -tol * scale]
    pos_imag = [i for i in range(2 * d) if imag[i] and not real[i] and vals[i].imag > 0]
    if len(pos_real) != 1 or len(neg_real) != 1 or len(pos_imag) != d - 1:
        raise StabilityError(
            "linearization is not of saddle-center type; eigenvalues "
            + ", ".join(f"{v.real:.6g}{v.imag:+.6g}i" for v in vals)
        )
    lam = float(vals[pos_real[0]].real)

    def lead(v: NDArray) -> int:
        pos = np.abs(v[:d])
        return int(np.argmax(pos)) if pos.max() > 1e-12 * np.abs(v).max() else int(np.argmax(np.abs(v)))

    up = np.real(vecs[:, pos_real[0]])
    um = np.real(vecs[:, neg_real[0]])
    up = up * np.sign(up[lead(up)])
    pair = up @ J @ um
    if pair < 0:
        um = -um
        pair = -pair
    up, um = up / math.sqrt(pair), um / math.sqrt(pair)
    s = math.sqrt(np.linalg.norm(um) / np.linalg.norm(up))
    up, um = up * s, um / s

    centers = sorted(pos_imag, key=lambda i: vals[i].imag)
    omegas = [float(vals[i].imag) for i in centers]
    for a, b in itertools.combinations(omegas, 2):
        if abs(a - b) <= tol * scale:
            raise StabilityError(f"degenerate center frequencies {a:.6g} and {b:.6g}")
    bq, bp = [], []
    for i in centers:
        v = vecs[:, i]
        m = lead(v)
        v = v * (-1j * abs(v[m]) / v[m])
        cq, cp = -v.imag, v.real
        pair = cq @ J @ cp
        if pair <= 0:
            raise StabilityError(f"center mode omega={vals[i].imag:.6g} has negative energy signature")
        bq.append(cq / math.sqrt(pair))
        bp.append(cp / math.sqrt(pair))

    B = np.column_stack([up, *bq, um, *bp])
    Minv = B
    M = -J @ B.T @ J
    spectrum = LinearSpectrum(lam, tuple(omegas), float(E0))
    resid = np.abs(M.T @ J @ M - J).max()
    if resid > 1e-12 * max(1.0, np.abs(M).max() ** 2):
        raise NumericalValidityError(f"symplectic residual {resid:.3e} too large")
    conj = B.T @ S @ B
    ideal = quadratic_matrix(normal_quadratic(spectrum, 2))
    err = np.abs(conj - ideal).max()
    if err > 1e-10 * max(1.0, np.abs(S).max()):
        raise NumericalValidityError(f"conjugated quadratic part off by {err:.3e}")
    return spectrum, LinearSymplecticMap(M, Minv)


def check_nonresonance(spectrum: LinearSpectrum, bound: int) -> None:
    """Reject integer relations ``sum m_k omega_k ~ 0`` with ``|m|_1 <= bound``."""
    om = np.array(spectrum.omega)
    n = om.size
    if n < 2:
        return
    tol = spectrum.resonance_tol
    for total in range(1, bound + 1):
        for combo in itertools.combinations_with_replacement(range(n), total):
            base = np.bincount(combo, minlength=n)
            for signs in itertools.product((1, -1), repeat=n):
                m = base * np.array(signs)
                if m[np.flatnonzero(m)[0]] < 0:
                    continue
                if abs(m @ om) < tol:
                    raise SmallDivisorError(f"resonance {m.tolist()} . omega = {m @ om:.3e}")


# polynomial substitutions -------------------------------------------------
def linear_substitute(poly: PhasePolynomial, B: NDArray) -> PhasePolynomial:
    """Return ``poly(B z)`` as a polynomial in ``z`` (hbar untouched)."""
    d = poly.dof
    order = poly.truncation_order
    n = 2 * d
    forms = []
    for i in range(n):
        rows = np.zeros((n, n + 1), dtype=np.int64)
        rows[np.arange(n), np.arange(n)] = 1
        forms.append(PhasePolynomial.from_arrays(d, rows, np.asarray(B[i]), order))
    cache: dict[tuple[int, int], PhasePolynomial] = {}

    def power(i: int, e: int) -> PhasePolynomial:
        if (i, e) not in cache:
            cache[(i, e)] = forms[i] if e == 1 else power(i, e - 1) * forms[i]
        return cache[(i, e)]

    parts_e, parts_c = [], []
    for row, c in zip(poly.exps, poly.coeffs):
        term = None
        for i in range(n):
            if row[i]:
                term = power(i, int(row[i])) if term is None else term * power(i, int(row[i]))
        if term is None:
            e = np.zeros((1, n + 1), dtype=np.int64)
            cc = np.array([c])
        else:
            e = term.exps.copy()
            cc = term.coeffs * c
        e[:, n] += row[n]
        parts_e.append(e)
        parts_c.append(cc)
    if not parts_e:
        return PhasePolynomial.zero(d, order)
    return PhasePolynomial.from_arrays(d, np.vstack(parts_e), np.concatenate(parts_c), order)


@lru_cache(maxsize=None)
def _pair_table(maxdeg: int, to_complex: bool) -> NDArray:
    """``table[a, b, r]``: coefficient of ``u^r v^(a+b-r)`` in the image of ``s^a t^b``.

    Complexifying: ``q = (x + y)/sqrt2``, ``p = i (x - y)/sqrt2`` with
    ``(u, v) = (x, y)``. Realifying: ``x = (q - i p)/sqrt2``,
    ``y = (q + i p)/sqrt2`` with ``(u, v) = (q, p)``.
    """
    table = np.zeros((maxdeg + 1, maxdeg + 1, maxdeg + 1), dtype=complex)
    r2 = 1 / math.sqrt(2)
    if to_complex:
        first = np.array([r2, r2], dtype=complex)  # coefficients of (u, v) in s
        second = np.array([1j * r2, -1j * r2])
    else:
        first = np.array([r2, -1j * r2], dtype=complex)
        second = np.array([r2, 1j * r2])

    def lin_pow(lin, k):
        # coefficients of u^r v^(k-r), indexed by r
        out = np.zeros(k + 1, dtype=complex)
        for r in range(k + 1):
            out[r] = math.comb(k, r) * lin[0] ** r * lin[1] ** (k - r)
        return out

    for a in range(maxdeg + 1):
        pa = lin_pow(first, a)
        for b in range(maxdeg + 1 - a):
            pb = lin_pow(second, b)
            table[a, b, : a + b + 1] = np.convolve(pa, pb)
    return table


def _pair_substitute(poly: PhasePolynomial, to_complex: bool) -> PhasePolynomial:
    """Change every center pair between real and complex coordinates."""
    d = poly.dof
    exps, coeffs = poly.exps, poly.coeffs.astype(complex)
    if not exps.shape[0]:
        return PhasePolynomial(d, exps, coeffs, poly.truncation_order)
    table = _pair_table(max(int(exps[:, : 2 * d].sum(axis=1).max()), 1), to_complex)
    for k in range(1, d):
        a, b = exps[:, k], exps[:, d + k]
        cnt = a + b + 1
        idx = np.repeat(np.arange(exps.shape[0]), cnt)
        r = np.arange(int(cnt.sum())) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        new = exps[idx].copy()
        tot = a[idx] + b[idx]
        new[:, k] = r
        new[:, d + k] = tot - r
        vals = coeffs[idx] * table[a[idx], b[idx], r]
        exps, coeffs = canonicalize(new, vals, poly.truncation_order, d)
    return PhasePolynomial(d, exps, coeffs, poly.truncation_order)


def _eigenvalues(exps: NDArray, spectrum: LinearSpectrum) -> tuple[NDArray, NDArray, NDArray]:
    d = spectrum.dof
    real = spectrum.lam * (exps[:, d] - exps[:, 0])
    om = np.asarray(spectrum.omega)
    diff = exps[:, d + 1 : 2 * d] - exps[:, 1:d]
    imag = diff @ om if d > 1 else np.zeros(exps.shape[0])
    kernel = (exps[:, 0] == exps[:, d]) & np.all(diff == 0, axis=1)
    return real, imag, kernel


def solve_homological(
    h_n: PhasePolynomial, spectrum: LinearSpectrum, mode: str = "classical"
) -> tuple[PhasePolynomial, PhasePolynomial]:
    """Split ``h_n`` into ``D w_n`` and a normalized remainder.

    ``D = {H_2, .}`` is diagonal on monomials in complex center coordinates
    with eigenvalue ``lambda (beta_1 - alpha_1) + i sum omega_k (beta_k -
    alpha_k)``. The remainder keeps only monomials with zero eigenvalue,
    which are products of ``I``, ``J_k`` and ``hbar``. ``mode`` only
    documents the caller: on quadratic ``H_2`` both brackets agree.

    Returns
    -------
    w_n : PhasePolynomial
        Real generator of the same grade.
    normalized : PhasePolynomial
        Real kernel part.
    """
    w_c, k_c = _solve_complex(h_n, spectrum)
    return _pair_substitute(w_c, False).real(), _pair_substitute(k_c, False).real()


def _solve_complex(h_n: PhasePolynomial, spectrum: LinearSpectrum):
    d = h_n.dof
    if h_n.is_zero():
        return h_n, h_n
    n = h_n.homogeneous_grade()
    if n is None:
        raise StructuralError("homological equation needs a homogeneous right-hand side")
    hc = _pair_substitute(h_n, True)
    real, imag, kernel = _eigenvalues(hc.exps, spectrum)
    small = (~kernel) & (np.abs(real) + np.abs(imag) < spectrum.resonance_tol)
    if np.any(small):
        row = hc.exps[np.flatnonzero(small)[0]]
        raise SmallDivisorError(f"small divisor for monomial {row.tolist()} at grade {n}")
    mu = real + 1j * imag
    w_coeffs = np.where(kernel, 0.0, hc.coeffs / np.where(kernel, 1.0, mu))
    order = h_n.truncation_order
    w_c = PhasePolynomial.from_arrays(d, hc.exps[~kernel], w_coeffs[~kernel], order)
    k_c = PhasePolynomial.from_arrays(d, hc.exps[kernel], hc.coeffs[kernel], order)
    return w_c, k_c


def _kernel_actions(k_c: PhasePolynomial) -> dict[tuple[int, ...], float]:
    d = k_c.dof
    out = {}
    for row, c in zip(k_c.exps, k_c.coeffs):
        key = (int(row[0]), *(int(x) for x in row[1:d]), int(row[2 * d]))
        out[key] = float(np.real(c))
    return out


def to_actions(poly: PhasePolynomial, spectrum: LinearSpectrum | None = None, tol: float = 1e-10) -> ActionPolynomial:
    """Rewrite a kernel polynomial as a polynomial in ``I``, ``J_k``, ``hbar``."""
    d = poly.dof
    hc = _pair_substitute(poly, True)
    diag = (hc.exps[:, 0] == hc.exps[:, d]) & np.all(hc.exps[:, 1:d] == hc.exps[:, d + 1 : 2 * d], axis=1)
    scale = max(poly.max_abs(), 1.0)
    if np.any(np.abs(hc.coeffs[~diag]) > tol * scale):
        raise StructuralError("polynomial is not a function of the actions")
    return ActionPolynomial(d, _kernel_actions(PhasePolynomial(d, hc.exps[diag], hc.coeffs[diag], poly.truncation_order)))


# coordinate maps -----------------------------------------------------------
@dataclass(frozen=True)
class PolynomialMap:
    """Vector of classical polynomials sharing one monomial table."""

    exps: NDArray  # (U, 2d)
    coeffs: NDArray  # (U, 2d)

    @classmethod
    def from_polys(cls, polys: Sequence[PhasePolynomial]) -> "PolynomialMap":
        d2 = 2 * polys[0].dof
        allrows = np.vstack([p.exps[:, :d2] for p in polys])
        uniq, inv = np.unique(allrows, axis=0, return_inverse=True)
        inv = inv.ravel()
        coeffs = np.zeros((uniq.shape[0], len(polys)))
        start = 0
        for i, p in enumerate(polys):
            if np.any(p.exps[:, d2]):
                raise StructuralError("coordinate maps must be classical")
            stop = start + p.nterms
            coeffs[inv[start:stop], i] = p.coeffs
            start = stop
        return cls(uniq, coeffs)

    def __call__(self, points) -> NDArray:
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, self.exps.shape[1])
        maxp = int(self.exps.max()) if self.exps.size else 0
        powers = np.ones((flat.shape[0], flat.shape[1], maxp + 1))
        for k in range(1, maxp + 1):
            powers[..., k] = powers[..., k - 1] * flat
        mono = np.ones((flat.shape[0], self.exps.shape[0]))
        for v in range(flat.shape[1]):
            mono *= powers[:, v, :][:, self.exps[:, v]]
        return (mono @ self.coeffs).reshape(pts.shape)


def _coordinate_maps(generators: Sequence[PhasePolynomial], dof: int, order: int):
    """Truncated time-one flows of each generator and of its inverse.

    The forward flow of ``W`` acts on coordinates as ``exp(-ad_W)``, the
    inverse as ``exp(ad_W)``; both are truncated at ``order``.
    """
    coords = [PhasePolynomial.variable(dof, f"{k}{i + 1}", order) for k in "qp" for i in range(dof)]
    fwd, bwd = [], []
    for w in generators:
        fwd.append(PolynomialMap.from_polys([lie_transform(c, -w, "classical") for c in coords]))
        bwd.append(PolynomialMap.from_polys([lie_transform(c, w, "classical") for c in coords]))
    return tuple(fwd), tuple(bwd)


# drivers -------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class NormalFormResult:
    """Output of :func:`cnf` or :func:`qnf`.

    ``generators`` are the classical ``W_3..W_N`` used for coordinate maps.
    ``qnf_generators`` holds the quantum ones when the QNF was computed.
    ``T[i]`` and ``Tinv[i]`` are the truncated flows of ``generators[i]``
    and of their inverses.
    """

    spectrum: LinearSpectrum
    K_cnf: ActionPolynomial
    K_qnf_symbol: ActionPolynomial | None
    K_qnf_op: ActionPolynomial | None
    generators: tuple[PhasePolynomial, ...]
    qnf_generators: tuple[PhasePolynomial, ...] | None
    shift: NDArray
    M: LinearSymplecticMap
    order: int
    hbar_eff: float
    T: tuple[PolynomialMap, ...] = field(repr=False, default=None)
    Tinv: tuple[PolynomialMap, ...] = field(repr=False, default=None)

    def __post_init__(self):
        if self.T is None:
            T, Tinv = _coordinate_maps(self.generators, self.spectrum.dof, self.order)
            object.__setattr__(self, "T", T)
            object.__setattr__(self, "Tinv", Tinv)

    @property
    def dof(self) -> int:
        return self.spectrum.dof

    @property
    def E0(self) -> float:
        return self.spectrum.E0

    # serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        def table(k):
            return None if k is None else k.to_json()

        return {
            "dof": self.dof,
            "order": self.order,
            "hbar_eff": self.hbar_eff,
            "spectrum": {"lambda": self.spectrum.lam, "omega": list(self.spectrum.omega), "E0": self.spectrum.E0},
            "shift": self.shift.tolist(),
            "M": self.M.M.tolist(),
            "Minv": self.M.Minv.tolist(),
            "K_cnf": table(self.K_cnf),
            "K_qnf_symbol": table(self.K_qnf_symbol),
            "K_qnf_op": table(self.K_qnf_op),
            "generators": [phase_to_json(w) for w in self.generators],
            "qnf_generators": None
            if self.qnf_generators is None
            else [phase_to_json(w) for w in self.qnf_generators],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "NormalFormResult":
        d = int(doc["dof"])

        def table(items):
            return None if items is None else ActionPolynomial.from_json(d, items)

        sp = doc["spectrum"]
        return cls(
            spectrum=LinearSpectrum(float(sp["lambda"]), tuple(float(x) for x in sp["omega"]), float(sp["E0"])),
            K_cnf=table(doc["K_cnf"]),
            K_qnf_symbol=table(doc["K_qnf_symbol"]),
            K_qnf_op=table(doc["K_qnf_op"]),
            generators=tuple(phase_from_json(w) for w in doc["generators"]),
            qnf_generators=None
            if doc["qnf_generators"] is None
            else tuple(phase_from_json(w) for w in doc["qnf_generators"]),
            shift=np.array(doc["shift"], dtype=float),
            M=LinearSymplecticMap(np.array(doc["M"], dtype=float), np.array(doc["Minv"], dtype=float)),
            order=int(doc["order"]),
            hbar_eff=float(doc["hbar_eff"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "NormalFormResult":
        return cls.from_dict(json.loads(text))


@dataclass
class _Prepared:
    spectrum: LinearSpectrum
    linmap: LinearSymplecticMap
    shift: NDArray
    H: PhasePolynomial


def prepare(spec: SystemSpec, N: int, guess=None) -> _Prepared:
    """Equilibrium shift, Taylor expansion and linear normalization."""
    if not (isinstance(N, int) and N % 2 == 0 and 2 <= N <= MAX_ORDER):
        raise StructuralError(f"order N must be even with 2 <= N <= {MAX_ORDER}, got {N}")
    eq = find_equilibrium(spec, guess)
    H = taylor_expand(spec, eq.point, N)
    E0 = float(H.grade_part(0).coeffs.sum()) if H.grade_part(0).nterms else 0.0
    spectrum, linmap = linearize(H.grade_part(2), E0=E0)
    check_nonresonance(spectrum, 2 * N)
    H = linear_substitute(H._select(H.grades >= 3), linmap.Minv)
    H = H + normal_quadratic(spectrum, N, E0=True)
    return _Prepared(spectrum, linmap, eq.point, H)


def normalize(
    H: PhasePolynomial, spectrum: LinearSpectrum, mode: str = "classical"
) -> tuple[ActionPolynomial, list[PhasePolynomial], PhasePolynomial]:
    """Run the grade-by-grade normalization on a prepared Hamiltonian.

    ``H`` must already have the normal quadratic part. Returns the action
    form of the normalized Hamiltonian, the generators ``W_3..W_N`` and the
    final phase-space polynomial.
    """
    d = H.dof
    N = H.truncation_order
    actions = {(0,) * (d + 1): spectrum.E0}
    actions[(1,) + (0,) * d] = spectrum.lam
    for k, w in enumerate(spectrum.omega, start=1):
        key = [0] * (d + 1)
        key[k] = 1
        actions[tuple(key)] = w
    gens: list[PhasePolynomial] = []
    for n in range(3, N + 1):
        h_n = H.grade_part(n)
        w_c, k_c = _solve_complex(h_n, spectrum)
        w = _pair_substitute(w_c, False).real()
        norm = _pair_substitute(k_c, False).real()
        actions.update(_kernel_actions(k_c))
        if not w.is_zero():
            H = lie_transform(H, w, mode)
        H = H._select(H.grades != n) + norm
        gens.append(w)
    return ActionPolynomial(d, actions), gens, H


def cnf(spec: SystemSpec, N: int, guess=None) -> NormalFormResult:
    """Classical normal form of order ``N``."""
    prep = prepare(spec, N, guess)
    K, gens, _ = normalize(prep.H, prep.spectrum, "classical")
    return NormalFormResult(
        spectrum=prep.spectrum,
        K_cnf=K,
        K_qnf_symbol=None,
        K_qnf_op=None,
        generators=tuple(gens),
        qnf_generators=None,
        shift=prep.shift,
        M=prep.linmap,
        order=N,
        hbar_eff=spec.hbar_eff,
    )


def qnf(spec: SystemSpec, N: int, guess=None) -> NormalFormResult:
    """Quantum normal form (symbol and operator ordering) plus the CNF."""
    prep = prepare(spec, N, guess)
    K, gens, _ = normalize(prep.H, prep.spectrum, "classical")
    Kq, qgens, _ = normalize(prep.H, prep.spectrum, "quantum")
    return NormalFormResult(
        spectrum=prep.spectrum,
        K_cnf=K,
        K_qnf_symbol=Kq,
        K_qnf_op=weyl_order(Kq),
        generators=tuple(gens),
        qnf_generators=tuple(qgens),
        shift=prep.shift,
        M=prep.linmap,
        order=N,
        hbar_eff=spec.hbar_eff,
    )


# Weyl ordering -------------------------------------------------------------
@lru_cache(maxsize=None)
def _op_power(n: int, sign: int) -> tuple[tuple[int, int, float], ...]:
    """Operator ordering of ``X^n`` as ``((power, hbar_power, coeff), ...)``.

    ``sign = -1`` for ``I`` and ``+1`` for ``J``:
    ``Op[X^(n+1)] = X Op[X^n] + sign (hbar/2)^2 n^2 Op[X^(n-1)]``.
    """
    prev: dict[tuple[int, int], float] = {}
    cur: dict[tuple[int, int], float] = {(0, 0): 1.0}
    for m in range(n):
        nxt: dict[tuple[int, int], float] = {}
        for (p, j), c in cur.items():
            nxt[(p + 1, j)] = nxt.get((p + 1, j), 0.0) + c
        for (p, j), c in prev.items():
            nxt[(p, j + 2)] = nxt.get((p, j + 2), 0.0) + sign * 0.25 * m * m * c
        prev, cur = cur, nxt
    return tuple((p, j, c) for (p, j), c in sorted(cur.items()) if c != 0.0)


def weyl_order(symbol: ActionPolynomial) -> ActionPolynomial:
    """Rewrite a symbol in ``I``, ``J_k`` as a polynomial in the action operators.

    Products over different degrees of freedom factor, so each power is
    mapped independently with the recurrences for ``I`` and ``J``.
    """
    d = symbol.dof
    out: dict[tuple[int, ...], float] = {}
    for key, val in symbol.terms.items():
        expanded = [((), key[-1], val)]
        for mode, a in enumerate(key[:-1]):
            table = _op_power(a, -1 if mode == 0 else 1)
            expanded = [(pw + (p,), j + jj, c * cc) for pw, j, c in expanded for p, jj, cc in table]
        for pw, j, c in expanded:
            k = (*pw, j)
            out[k] = out.get(k, 0.0) + c
    return ActionPolynomial(d, out)


def weyl_symbol(op: ActionPolynomial) -> ActionPolynomial:
    """Inverse of :func:`weyl_order`."""
    d = op.dof
    remaining = dict(op.terms)
    out: dict[tuple[int, ...], float] = {}
    # peel off the highest total operator degree first; the map is unitriangular
    while remaining:
        key = max(remaining, key=lambda k: (sum(k[:-1]), k))
        val = remaining.pop(key)
        if val == 0.0:
            continue
        out[key] = out.get(key, 0.0) + val
        image = weyl_order(ActionPolynomial(d, {key: val})).terms
        for k, v in image.items():
            if k == key:
                continue
            remaining[k] = remaining.get(k, 0.0) - v
    return ActionPolynomial(d, out)


def nf_transform(result: NormalFormResult, point, direction: str = "to_nf") -> NDArray:
    """Map physical phase-space points to normal-form coordinates or back.

    ``to_nf`` applies the shift, ``M`` and the flows of ``W_3..W_N`` in that
    order; ``from_nf`` applies the inverse flows in reverse order, then
    ``M^-1`` and the shift. Points may be stacked along leading axes.
    """
    z = np.asarray(point, dtype=float)
    if direction == "to_nf":
        z = (z - result.shift) @ result.M.M.T
        for flow in result.T:
            z = flow(z)
        return z
    if direction == "from_nf":
        for flow in reversed(result.Tinv):
            z = flow(z)
        return z @ result.M.Minv.T + result.shift
    raise StructuralError(f"unknown direction {direction!r}")
