"""Reaction geometry in normal-form coordinates.

Normal-form points are arrays ``(q_1..q_d, p_1..p_d)``. The reactive
action is ``I = q_1 p_1`` and the bath actions are
``J_k = (q_k^2 + p_k^2) / 2``.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
import numpy as np
from numpy.typing import NDArray
from scipy.integrate import quad, solve_ivp
from scipy.stats import qmc

from .errors import ConvergenceError, DomainError, NumericalValidityError, StructuralError
from .normalform import NormalFormResult, nf_transform
from .polyalg import ActionPolynomial, PhasePolynomial
from .systems import SystemSpec

SEPARATRIX_TOL = 1e-12
SURFACE_TOL = 1e-9


@dataclass(frozen=True)
class ActionValues:
    I: float
    J: tuple[float, ...]


class TrajectoryClass(str, Enum):
    FORWARD_REACTIVE = "forward_reactive"
    BACKWARD_REACTIVE = "backward_reactive"
    NONREACTIVE_REACTANT = "nonreactive_reactant"
    NONREACTIVE_PRODUCT = "nonreactive_product"
    SEPARATRIX = "separatrix"


class SurfaceId(str, Enum):
    DIVIDING_SURFACE = "dividing_surface"
    FORWARD_HEMISPHERE = "forward_hemisphere"
    BACKWARD_HEMISPHERE = "backward_hemisphere"
    NHIM = "nhim"
    W_S = "W_s"
    W_U = "W_u"
    W_S_F = "W_s_f"
    W_S_B = "W_s_b"
    W_U_F = "W_u_f"
    W_U_B = "W_u_b"
    W_F_CYLINDER = "W_f_cylinder"
    W_B_CYLINDER = "W_b_cylinder"


def actions(points) -> tuple[NDArray, NDArray]:
    """Vectorized momentum map: ``I`` of shape ``(...)``, ``J`` of shape ``(..., d-1)``."""
    z = np.asarray(points, dtype=float)
    d = z.shape[-1] // 2
    I = z[..., 0] * z[..., d]
    J = 0.5 * (z[..., 1:d] ** 2 + z[..., d + 1 :] ** 2)
    return I, J


def momentum_map(nf_point) -> ActionValues:
    I, J = actions(nf_point)
    return ActionValues(float(I), tuple(float(x) for x in np.atleast_1d(J)))


def classify_trajectory(
    acts: ActionValues, q1_sign: float, separatrix_tol: float = SEPARATRIX_TOL
) -> TrajectoryClass:
    """Reactive class from the sign of ``I`` and the branch of ``q_1``.

    For ``I < 0`` the side follows from ``sign(p_1 - q_1)``; since ``q_1``
    and ``p_1`` then have opposite signs this equals ``-sign(q_1)``.
    """
    if abs(acts.I) <= separatrix_tol:
        return TrajectoryClass.SEPARATRIX
    if acts.I > 0:
        return TrajectoryClass.FORWARD_REACTIVE if q1_sign > 0 else TrajectoryClass.BACKWARD_REACTIVE
    return TrajectoryClass.NONREACTIVE_PRODUCT if q1_sign > 0 else TrajectoryClass.NONREACTIVE_REACTANT


def _energy(K: ActionPolynomial, I, J, hbar: float = 0.0):
    return K.evaluate(I, [J[..., k] for k in range(J.shape[-1])], hbar)


def surface_membership(
    nf_point, E: float, surface: SurfaceId | str, nf: NormalFormResult, tol: float = SURFACE_TOL
) -> bool:
    """Whether an on-shell normal-form point lies on a reaction surface."""
    surface = SurfaceId(surface)
    z = np.asarray(nf_point, dtype=float)
    d = z.size // 2
    I, J = actions(z)
    if abs(_energy(nf.K_cnf, np.asarray(I), np.asarray(J)) - E) >= tol:
        return False
    q1, p1 = z[0], z[d]
    zero_q, zero_p = abs(q1) <= tol, abs(p1) <= tol
    on_ds = abs(q1 - p1) <= tol
    nhim = zero_q and zero_p
    if surface is SurfaceId.DIVIDING_SURFACE:
        return on_ds
    if surface is SurfaceId.NHIM:
        return nhim
    if surface is SurfaceId.FORWARD_HEMISPHERE:
        return on_ds and not nhim and q1 + p1 > 0
    if surface is SurfaceId.BACKWARD_HEMISPHERE:
        return on_ds and not nhim and q1 + p1 < 0
    if surface is SurfaceId.W_S:
        return zero_q and not zero_p
    if surface is SurfaceId.W_U:
        return zero_p and not zero_q
    if surface is SurfaceId.W_S_F:
        return zero_q and p1 > tol
    if surface is SurfaceId.W_S_B:
        return zero_q and p1 < -tol
    if surface is SurfaceId.W_U_F:
        return zero_p and q1 > tol
    if surface is SurfaceId.W_U_B:
        return zero_p and q1 < -tol
    if surface is SurfaceId.W_F_CYLINDER:
        return (zero_q or zero_p) and q1 >= -tol and p1 >= -tol and not nhim
    return (zero_q or zero_p) and q1 <= tol and p1 <= tol and not nhim


def nf_vector_field(K: ActionPolynomial, point) -> NDArray:
    """Hamilton's equations of ``K(I, J)`` in normal-form coordinates."""
    z = np.asarray(point, dtype=float)
    d = z.shape[-1] // 2
    I, J = actions(z)
    Jl = [J[..., k] for k in range(d - 1)]
    out = np.empty_like(z)
    dI = K.derivative_I().evaluate(I, Jl)
    out[..., 0] = dI * z[..., 0]
    out[..., d] = -dI * z[..., d]
    for k in range(1, d):
        dJ = K.derivative_J(k + 1).evaluate(I, Jl)
        out[..., k] = dJ * z[..., d + k]
        out[..., d + k] = -dJ * z[..., k]
    return out


# action-space volume ---------------------------------------------------------
def _shell_root(f, E: float, start: float) -> float:
    """Smallest ``t > 0`` with ``f(t) = E`` given ``f(0) < E``, by bisection."""
    lo, hi = 0.0, max(start, 1e-300)
    with np.errstate(over="ignore", invalid="ignore"):
        return _bisect(f, E, lo, hi)


def _bisect(f, E: float, lo: float, hi: float) -> float:
    for _ in range(400):
        if f(hi) > E:
            break
        lo, hi = hi, 2 * hi
    else:
        raise NumericalValidityError("energy shell does not close: K(0, J) stays below E")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if f(mid) > E:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _bath_K(K: ActionPolynomial):
    d = K.dof
    return lambda J: K.evaluate(0.0, [np.asarray(J[k]) for k in range(d - 1)])


def _guess(K: ActionPolynomial, E: float, k: int) -> float:
    d = K.dof
    key = [0] * (d + 1)
    key[k + 1] = 1
    w = K.coefficient(tuple(key))
    E0 = K.coefficient((0,) * (d + 1))
    return (E - E0) / w if w > 0 else 1.0


def action_volume_qmc(
    K: ActionPolynomial, E: float, n_points: int = 2**14, n_scrambles: int = 16, seed: int = 0
) -> tuple[float, float]:
    """Quasi Monte Carlo volume with a standard error from random scrambles."""
    d = K.dof
    if d < 2:
        raise StructuralError("action volume needs at least one bath mode")
    E0 = K.coefficient((0,) * (d + 1))
    if E <= E0:
        return 0.0, 0.0
    g = _bath_K(K)
    box = np.array(
        [_shell_root(lambda t, k=k: g(np.eye(d - 1)[k] * t), E, _guess(K, E, k)) for k in range(d - 1)]
    )
    m = int(math.log2(n_points))
    estimates = []
    for s in range(n_scrambles):
        pts = qmc.Sobol(d - 1, scramble=True, seed=seed + s).random_base2(m) * box
        vals = K.evaluate(np.zeros(pts.shape[0]), [pts[:, k] for k in range(d - 1)])
        estimates.append(np.mean(vals <= E) * np.prod(box))
    est = np.array(estimates)
    return float(est.mean()), float(est.std(ddof=1) / math.sqrt(n_scrambles))


def action_volume(K: ActionPolynomial, E: float, method: str = "auto") -> float:
    """Volume of ``{J >= 0 : K(0, J) <= E}`` in the bath-action space.

    Parameters
    ----------
    K : ActionPolynomial
        Classical normal form (hbar terms are ignored).
    E : float
        Energy.
    method : {"auto", "bisection", "quadrature", "qmc"}
        ``auto`` picks bisection for one bath mode, quadrature of the
        boundary curve for two and quasi Monte Carlo beyond.
    """
    K = K.classical()
    d = K.dof
    if d < 2:
        raise StructuralError("action volume needs at least one bath mode")
    E0 = K.coefficient((0,) * (d + 1))
    if E <= E0:
        return 0.0
    if method == "auto":
        method = {2: "bisection", 3: "quadrature"}.get(d, "qmc")
    g = _bath_K(K)
    if method == "bisection":
        if d != 2:
            raise StructuralError("bisection volume is for a single bath mode")
        return _shell_root(lambda t: g([t]), E, _guess(K, E, 0))
    if method == "quadrature":
        if d != 3:
            raise StructuralError("quadrature volume is for two bath modes")
        j2max = _shell_root(lambda t: g([t, 0.0]), E, _guess(K, E, 0))
        g3 = _guess(K, E, 1)

        def boundary(j2: float) -> float:
            if g([j2, 0.0]) >= E:
                return 0.0
            return _shell_root(lambda t: g([j2, t]), E, g3)

        val, _ = quad(boundary, 0.0, j2max, epsabs=0.0, epsrel=1e-13, limit=200)
        return float(val)
    if method == "qmc":
        return action_volume_qmc(K, E)[0]
    raise StructuralError(f"unknown volume method {method!r}")


def flux_and_weyl(K: ActionPolynomial, E: float, hbar_eff: float, method: str = "auto") -> tuple[float, float]:
    """Directional flux ``(2 pi)^(d-1) V(E)`` and Weyl count ``f / (2 pi hbar)^(d-1)``."""
    d = K.dof
    if d < 2:
        raise StructuralError("flux is defined for d >= 2 only")
    f = (2 * math.pi) ** (d - 1) * action_volume(K, E, method)
    return f, f / (2 * math.pi * hbar_eff) ** (d - 1)


# trajectories -----------------------------------------------------------------
@dataclass(frozen=True)
class Trajectory:
    t: NDArray
    z: NDArray
    energy: NDArray


def _hamiltonian_fns(system):
    if isinstance(system, SystemSpec):
        ham = system.hamiltonian
        return ham.value, ham.vector_field
    if isinstance(system, PhasePolynomial):
        d = system.dof
        grad = system.gradient()

        def field(z):
            g = np.stack([gp.evaluate(z) for gp in grad], axis=-1)
            return np.concatenate([g[..., d:], -g[..., :d]], axis=-1)

        return system.evaluate, field
    raise StructuralError("integrate expects a SystemSpec or a PhasePolynomial Hamiltonian")


def integrate(system, z0, t_span, tol: float = 1e-10, t_eval=None) -> Trajectory:
    """Integrate Hamilton's equations with an embedded Runge-Kutta 4(5) pair.

    Parameters
    ----------
    system : SystemSpec or PhasePolynomial
        Closed-form system or polynomial Hamiltonian.
    z0 : array_like, shape (2d,)
        Initial point.
    t_span : (float, float)
        Start and end times; the end may precede the start.
    tol : float
        Relative tolerance. The absolute tolerance is ``tol**1.2`` scaled by
        the size of ``z0``.
    t_eval : array_like, optional
        Output times; defaults to the accepted steps.
    """
    value, field = _hamiltonian_fns(system)
    z0 = np.asarray(z0, dtype=float)
    atol = tol**1.2 * max(1.0, float(np.abs(z0).max()))
    sol = solve_ivp(
        lambda t, z: field(z), t_span, z0, method="RK45", rtol=tol, atol=atol, t_eval=t_eval
    )
    if sol.status != 0:
        where = sol.t[-1] if sol.t.size else t_span[0]
        raise ConvergenceError(f"integration stopped at t={where:.6g}: {sol.message}")
    z = sol.y.T
    return Trajectory(sol.t, z, np.asarray(value(z)))


@dataclass(frozen=True)
class DriftReport:
    """Per-sample maximal drift of ``I`` and ``J_k`` along full trajectories."""

    samples: NDArray
    dI: NDArray
    dJ: NDArray

    @property
    def median_I(self) -> float:
        return float(np.median(self.dI))

    @property
    def max_I(self) -> float:
        return float(np.max(self.dI))

    def to_csv(self, path) -> None:
        d = self.samples.shape[1] // 2
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["sample", *[f"q{k + 1}" for k in range(d)], *[f"p{k + 1}" for k in range(d)], "dI"]
                + [f"dJ{k + 2}" for k in range(d - 1)]
            )
            for i, (z, di, dj) in enumerate(zip(self.samples, self.dI, self.dJ)):
                w.writerow([i, *map(repr, map(float, z)), repr(float(di)), *map(repr, map(float, dj))])


def sample_ball(center, radius: float, n: int, seed: int = 0) -> NDArray:
    """Uniform samples in the phase-space ball of ``radius`` around ``center``."""
    center = np.asarray(center, dtype=float)
    rng = np.random.default_rng(seed)
    dim = center.size
    u = rng.normal(size=(n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return center + u * r[:, None]


def _drift_one(spec, nf, z0, T_max, n_eval, tol):
    ts = np.linspace(0.0, T_max, n_eval)
    traj = integrate(spec, z0, (0.0, T_max), tol=tol, t_eval=ts)
    I, J = actions(nf_transform(nf, traj.z))
    return float(np.max(np.abs(I - I[0]))), np.max(np.abs(J - J[0]), axis=0)


def validate_invariants(
    spec: SystemSpec,
    nf: NormalFormResult,
    samples,
    T_max: float,
    *,
    n_eval: int = 101,
    tol: float = 1e-10,
    workers: int = 1,
) -> DriftReport:
    """Drift of the normal-form integrals along trajectories of the full system."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    job = lambda z: _drift_one(spec, nf, z, T_max, n_eval, tol)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(job, samples))
    else:
        results = [job(z) for z in samples]
    dI = np.array([r[0] for r in results])
    dJ = np.array([r[1] for r in results]).reshape(len(results), -1)
    return DriftReport(samples, dI, dJ)


# manifolds --------------------------------------------------------------------
BRANCHES = ("W_u_f", "W_u_b", "W_s_f", "W_s_b")


@dataclass(frozen=True)
class ManifoldTrajectory:
    seed_nf: NDArray
    seed: NDArray
    trajectory: Trajectory
    escaped: bool


def nhim_seeds(nf: NormalFormResult, E: float, n_seeds: int, seed: int = 0) -> NDArray:
    """Points on the NHIM energy shell ``K_cnf(0, J) = E`` in normal-form coordinates.

    Directions in the bath-action simplex and torus angles are drawn from a
    seeded generator; each direction is scaled onto the shell.
    """
    K = nf.K_cnf
    d = K.dof
    if E <= nf.E0:
        raise DomainError(f"empty NHIM: E={E} does not exceed E0={nf.E0}")
    if d < 2:
        raise StructuralError("the NHIM needs at least one bath mode")
    rng = np.random.default_rng(seed)
    g = _bath_K(K)
    out = np.zeros((n_seeds, 2 * d))
    for i in range(n_seeds):
        u = rng.dirichlet(np.ones(d - 1)) if d > 2 else np.ones(1)
        t = _shell_root(lambda s: g(u * s), E, 1.0)
        J = u * t
        theta = rng.uniform(0.0, 2 * np.pi, d - 1)
        r = np.sqrt(2 * J)
        out[i, 1:d] = r * np.cos(theta)
        out[i, d + 1 :] = r * np.sin(theta)
    return out


def globalize_manifold(
    spec: SystemSpec,
    nf: NormalFormResult,
    E: float,
    branch: str,
    epsilon: float,
    n_seeds: int,
    T: float,
    *,
    seed: int = 0,
    seed_tol: float = 1e-4,
    tol: float = 1e-10,
    workers: int = 1,
) -> list[ManifoldTrajectory]:
    """Grow a branch of the stable or unstable manifold of the NHIM.

    Seeds on the NHIM shell are displaced by ``epsilon`` in ``q_1``
    (unstable branches) or ``p_1`` (stable branches), mapped to physical
    coordinates and integrated for time ``T``; stable branches run
    backward in time.
    """
    if branch not in BRANCHES:
        raise StructuralError(f"unknown branch {branch!r}; expected one of {BRANCHES}")
    d = spec.dof
    base = nhim_seeds(nf, E, n_seeds, seed)
    sign = 1.0 if branch.endswith("f") else -1.0
    col = 0 if branch.startswith("W_u") else d
    base[:, col] = sign * epsilon
    phys = nf_transform(nf, base, "from_nf")
    energies = spec.hamiltonian.value(phys)
    bad = np.abs(energies - E) >= seed_tol
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NumericalValidityError(
            f"seed {i} has |H - E| = {abs(energies[i] - E):.3e} >= seed_tol; energy outside the normal form's validity"
        )
    t_end = T if branch.startswith("W_u") else -T

    def job(i: int) -> ManifoldTrajectory:
        traj = integrate(spec, phys[i], (0.0, t_end), tol=tol)
        r0 = np.linalg.norm(phys[i] - nf.shift)
        r1 = np.linalg.norm(traj.z[-1] - nf.shift)
        return ManifoldTrajectory(base[i], phys[i], traj, bool(r1 > 2 * r0))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(job, range(n_seeds)))
    return [job(i) for i in range(n_seeds)]


def write_trajectory_csv(path, traj: Trajectory, nf: NormalFormResult | None = None) -> None:
    """CSV with ``t, q.., p.., E`` and, given a normal form, ``I, J_2..``."""
    d = traj.z.shape[1] // 2
    header = ["t", *[f"q{k + 1}" for k in range(d)], *[f"p{k + 1}" for k in range(d)], "E"]
    rows = np.column_stack([traj.t, traj.z, traj.energy])
    if nf is not None:
        I, J = actions(nf_transform(nf, traj.z))
        header += ["I", *[f"J{k + 2}" for k in range(d - 1)]]
        rows = np.column_stack([rows, I, J])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])
