"""Command-line front end.

Exit codes: 0 on success, 2 for configuration errors and 3 when a
computation leaves the region where the normal form is valid.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import phasespace, scattering
from .errors import ConfigError, NumericalValidityError, StructuralError
from .normalform import MAX_ORDER, NormalFormResult, cnf, qnf
from .systems import Eckart, Harmonic, Morse, SystemSpec, exact_crp_uncoupled, spec_from_dict

COMMANDS = ("normalform", "crp", "flux", "resonances", "validate", "globalize")


@dataclass(frozen=True)
class RunConfig:
    spec_path: Path
    command: str
    order: int = 6
    emin: float | None = None
    emax: float | None = None
    steps: int = 100
    out: Path | None = None
    format: str = "csv"
    epsilon: float = 1e-3
    seeds: int = 16
    tmax: float = 1.0
    branch: str = "W_u_f"
    energy: float | None = None
    radius: float = 0.2
    nmax: int = 3
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown {self.command!r}")
        if self.order % 2 or not 2 <= self.order <= MAX_ORDER:
            raise ConfigError(f"order: must be even in [2, {MAX_ORDER}], got {self.order}")
        if self.steps < 2:
            raise ConfigError("steps: must be at least 2")
        if self.emin is not None and self.emax is not None and not self.emin < self.emax:
            raise ConfigError("emin/emax: need emin < emax")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format: must be csv or json, got {self.format!r}")
        if self.seeds < 1 or self.threads < 1 or self.nmax < 0:
            raise ConfigError("seeds/threads must be positive and nmax non-negative")
        if self.tmax <= 0 or self.radius <= 0 or self.epsilon <= 0:
            raise ConfigError("tmax, radius and epsilon must be positive")

    def energies(self) -> np.ndarray:
        if self.emin is None or self.emax is None:
            raise ConfigError("emin/emax: required for this command")
        return np.linspace(self.emin, self.emax, self.steps)


def parse_spec(path) -> SystemSpec:
    """Read a JSON system specification."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"spec: file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec: invalid JSON in {path}: {exc}") from exc
    return spec_from_dict(doc, base_dir=path.parent)


def threads_from_env() -> int:
    raw = os.environ.get("SADDLESCOPE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SADDLESCOPE_THREADS: not an integer: {raw!r}") from exc
    if n < 1:
        raise ConfigError("SADDLESCOPE_THREADS: must be at least 1")
    return n


def _fmt(x) -> str:
    return repr(float(x))


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _has_exact_oracle(spec: SystemSpec) -> bool:
    pots = spec.potentials
    return (
        spec.is_uncoupled
        and isinstance(pots[0], Eckart)
        and all(isinstance(p, (Morse, Harmonic)) for p in pots[1:])
    )


def _weyl(nf: NormalFormResult, E: float, hbar: float) -> tuple[float, float]:
    if nf.dof == 1:
        step = 1.0 if E > nf.E0 else 0.0
        return step, step
    return phasespace.flux_and_weyl(nf.K_cnf, E, hbar)


def _table_rows(name: str, K) -> list[list[str]]:
    return [[name, *map(str, key), _fmt(val)] for key, val in K.terms.items()]


def cmd_normalform(cfg: RunConfig, spec: SystemSpec) -> str:
    nf = qnf(spec, cfg.order)
    if cfg.format == "json":
        return nf.to_json()
    d = spec.dof
    rows = _table_rows("K_cnf", nf.K_cnf) + _table_rows("K_qnf_symbol", nf.K_qnf_symbol)
    rows += _table_rows("K_qnf_op", nf.K_qnf_op)
    header = ["table", "a1", *[f"a{k + 1}" for k in range(1, d)], "j", "coefficient"]
    return _csv_text(header, rows)


def cmd_crp(cfg: RunConfig, spec: SystemSpec) -> str:
    nf = qnf(spec, cfg.order)
    E = cfg.energies()
    hbar = spec.hbar_eff
    n_qnf = scattering.crp_curve(nf.K_qnf_op, E, hbar, workers=cfg.threads)
    n_weyl = [_weyl(nf, e, hbar)[1] for e in E]
    exact = exact_crp_uncoupled(spec, E) if _has_exact_oracle(spec) else None
    if cfg.format == "json":
        return json.dumps(
            {
                "E": E.tolist(),
                "N_qnf": n_qnf.tolist(),
                "N_weyl": list(map(float, n_weyl)),
                "N_exact": None if exact is None else np.asarray(exact).tolist(),
            },
            indent=2,
        )
    rows = []
    for i, e in enumerate(E):
        rows.append([_fmt(e), _fmt(n_qnf[i]), _fmt(n_weyl[i]), "" if exact is None else _fmt(exact[i])])
    return _csv_text(["E", "N_qnf", "N_weyl", "N_exact"], rows)


def cmd_flux(cfg: RunConfig, spec: SystemSpec) -> str:
    nf = cnf(spec, cfg.order)
    E = cfg.energies()
    vals = [_weyl(nf, e, spec.hbar_eff) for e in E]
    if cfg.format == "json":
        return json.dumps({"E": E.tolist(), "flux": [v[0] for v in vals], "N_weyl": [v[1] for v in vals]}, indent=2)
    return _csv_text(["E", "flux", "N_weyl"], [[_fmt(e), _fmt(f), _fmt(n)] for e, (f, n) in zip(E, vals)])


def cmd_resonances(cfg: RunConfig, spec: SystemSpec) -> str:
    nf = qnf(spec, cfg.order)
    table = scattering.resonances(nf.K_qnf_op, spec.hbar_eff, cfg.nmax)
    d = spec.dof
    if cfg.format == "json":
        return json.dumps(
            [
                {"n": list(r.n), "Re_E": r.E.real, "Im_E": r.E.imag, "lifetime": r.lifetime, "valid": r.valid}
                for r in table
            ],
            indent=2,
        )
    header = [f"n_{k + 1}" for k in range(d)] + ["Re_E", "Im_E", "lifetime"]
    rows = [[*map(str, r.n), _fmt(r.E.real), _fmt(r.E.imag), _fmt(r.lifetime)] for r in table]
    return _csv_text(header, rows)


def cmd_validate(cfg: RunConfig, spec: SystemSpec) -> str:
    nf = cnf(spec, cfg.order)
    samples = phasespace.sample_ball(nf.shift, cfg.radius, cfg.seeds, cfg.seed)
    rep = phasespace.validate_invariants(spec, nf, samples, cfg.tmax, workers=cfg.threads)
    if cfg.format == "json":
        return json.dumps(
            {
                "samples": rep.samples.tolist(),
                "dI": rep.dI.tolist(),
                "dJ": rep.dJ.tolist(),
                "median_dI": rep.median_I,
            },
            indent=2,
        )
    buf = io.StringIO()
    d = spec.dof
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", *[f"q{k + 1}" for k in range(d)], *[f"p{k + 1}" for k in range(d)], "dI"] + [f"dJ{k + 2}" for k in range(d - 1)])
    for i, (z, di, dj) in enumerate(zip(rep.samples, rep.dI, rep.dJ)):
        w.writerow([i, *map(_fmt, z), _fmt(di), *map(_fmt, dj)])
    return buf.getvalue()


def cmd_globalize(cfg: RunConfig, spec: SystemSpec) -> str:
    if cfg.energy is None:
        raise ConfigError("energy: required for globalize")
    nf = cnf(spec, cfg.order)
    trajs = phasespace.globalize_manifold(
        spec, nf, cfg.energy, cfg.branch, cfg.epsilon, cfg.seeds, cfg.tmax, seed=cfg.seed, workers=cfg.threads
    )
    d = spec.dof
    if cfg.format == "json":
        return json.dumps(
            [
                {"seed_nf": m.seed_nf.tolist(), "escaped": m.escaped, "t": m.trajectory.t.tolist(), "z": m.trajectory.z.tolist()}
                for m in trajs
            ],
            indent=2,
        )
    header = ["seed", "t", *[f"q{k + 1}" for k in range(d)], *[f"p{k + 1}" for k in range(d)], "E"]
    rows = []
    for i, m in enumerate(trajs):
        tr = m.trajectory
        for t, z, e in zip(tr.t, tr.z, tr.energy):
            rows.append([i, _fmt(t), *map(_fmt, z), _fmt(e)])
    return _csv_text(header, rows)


HANDLERS = {
    "normalform": cmd_normalform,
    "crp": cmd_crp,
    "flux": cmd_flux,
    "resonances": cmd_resonances,
    "validate": cmd_validate,
    "globalize": cmd_globalize,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saddlescope", description="Normal forms and reaction dynamics near saddles.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--spec", required=True, help="JSON system specification")
    p.add_argument("--order", type=int, default=6, help="normal form order N (even, 2..12)")
    p.add_argument("--emin", type=float)
    p.add_argument("--emax", type=float)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", default=None, choices=("csv", "json"))
    p.add_argument("--epsilon", type=float, default=1e-3, help="manifold seed displacement")
    p.add_argument("--seeds", type=int, default=16, help="number of samples or manifold seeds")
    p.add_argument("--tmax", type=float, default=1.0, help="integration time")
    p.add_argument("--branch", default="W_u_f", choices=phasespace.BRANCHES)
    p.add_argument("--energy", type=float, help="energy for globalize")
    p.add_argument("--radius", type=float, default=0.2, help="sampling radius for validate")
    p.add_argument("--nmax", type=int, default=3, help="largest quantum number in resonance tables")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    return p


def run(cfg: RunConfig) -> str:
    spec = parse_spec(cfg.spec_path)
    text = HANDLERS[cfg.command](cfg, spec)
    if cfg.out is not None:
        Path(cfg.out).write_text(text)
    return text


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        fmt = args.format or ("json" if args.command == "normalform" else "csv")
        cfg = RunConfig(
            spec_path=Path(args.spec),
            command=args.command,
            order=args.order,
            emin=args.emin,
            emax=args.emax,
            steps=args.steps,
            out=Path(args.out) if args.out else None,
            format=fmt,
            epsilon=args.epsilon,
            seeds=args.seeds,
            tmax=args.tmax,
            branch=args.branch,
            energy=args.energy,
            radius=args.radius,
            nmax=args.nmax,
            seed=args.seed,
            threads=threads_from_env(),
        )
        text = run(cfg)
    except (ConfigError, StructuralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalValidityError as exc:
        print(f"numerical validity error: {exc}", file=sys.stderr)
        return 3
    if cfg.out is None:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
