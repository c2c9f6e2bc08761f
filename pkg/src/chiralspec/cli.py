"""Experiment driver: spectrum | magic-scan | perturb | weyl | lift | mc.

Configuration precedence is flags > environment (CHIRALSPEC_<KEY>) > config
file (--config, JSON) > defaults.  Every output file is stamped with the
config hash and master seed; reruns with the same configuration are
byte-identical.  Outputs are CSV/JSON data only; plotting is external.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (the audit
trail, when available, is printed to stderr as JSON).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .fields import ConfigurationError, admissible_basis, standard_U
from .lattice import MoireLattice
from .lifting import LiftError, LiftSchedule, lift_iterate
from .operators import AssemblyConfig, assemble
from .random_harness import (
    MCError,
    PerturbationLaw,
    delta_eq6,
    mc_smallest_singular,
    mc_weyl,
    perturbed_matrix,
    trial_rng,
)
from .spectral import (
    Disc,
    SolverError,
    cluster_eigenvalues,
    eigenvalues,
    magic_scan,
    per_cell_counts,
    singular_values,
)

ENV_PREFIX = "CHIRALSPEC_"


@dataclass(frozen=True)
class RunConfig:
    """Flat bag of experiment parameters; hashable as canonical JSON."""

    h: float = 0.5
    cutoff: float = 8.0
    z_re: float = 0.0
    z_im: float = 0.0
    k_re: float = 0.0
    k_im: float = 0.0
    tau0: float | None = None            # default sqrt(h)
    seed: int = 0
    trials: int = 20
    out: str = "out"
    # admissible-potential basis and law
    L: float | None = None               # default 2*h
    law: str = "uniform"
    R: float | None = None               # default 10*sqrt(D) ("physical" mode)
    sigma: float = 1.0
    kappa1: float | None = None          # override for the eq6 weight
    # region / counting
    region_re: float = 0.0
    region_im: float = 0.0
    region_radius: float = 0.25
    window: int = 1
    # magic scan
    h_min: float = 0.3
    h_max: float = 2.0
    h_steps: int = 69
    threshold: float = 1e-4
    # schedule constants
    s: float = 2.0
    epsilon: float = 0.1
    theta: float = 0.2
    eta: float = 0.1
    kappa3: float | None = None
    kappa4: float = 0.0
    C0: float = 10.0
    C_L: float = 2.0
    N_theta: int = 8

    @property
    def z(self) -> complex:
        return complex(self.z_re, self.z_im)

    @property
    def k(self) -> complex:
        return complex(self.k_re, self.k_im)

    def tau0_eff(self) -> float:
        return self.tau0 if self.tau0 is not None else math.sqrt(self.h)

    def L_eff(self) -> float:
        return self.L if self.L is not None else 2.0 * self.h

    def schedule(self) -> LiftSchedule:
        return LiftSchedule(
            s=self.s, epsilon=self.epsilon, theta=self.theta, eta=self.eta,
            kappa3=self.kappa3, kappa4=self.kappa4, C0=self.C0, C_L=self.C_L,
            N_theta=self.N_theta, tau0=self.tau0_eff(),
        )

    def kappa1_eff(self) -> float:
        return self.kappa1 if self.kappa1 is not None else self.schedule().kappa1

    def canonical(self) -> dict:
        return {k: v for k, v in sorted(asdict(self).items())}

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _coerce(value: str, target):
    if target is bool:
        return value.lower() in ("1", "true", "yes")
    if target is int:
        return int(value)
    if target is float:
        return float(value)
    return value


def load_config(path: str | None, env: dict, overrides: dict) -> RunConfig:
    """defaults < file < environment < explicit flags."""
    cfg = RunConfig()
    valid = {f.name: f for f in fields(RunConfig)}
    if path:
        with open(path) as fh:
            data = json.load(fh)
        unknown = set(data) - set(valid)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(cfg, **data)
    env_updates = {}
    defaults = RunConfig()
    for name in valid:
        raw = env.get(ENV_PREFIX + name.upper())
        if raw is not None:
            default_val = getattr(defaults, name)
            typ = float if default_val is None else type(default_val)
            env_updates[name] = _coerce(raw, typ)
    if env_updates:
        cfg = replace(cfg, **env_updates)
    clean = {k: v for k, v in overrides.items() if v is not None}
    if clean:
        cfg = replace(cfg, **clean)
    return cfg


def _stamp(cfg: RunConfig, sub: str) -> str:
    return f"# chiralspec {sub} config_hash={cfg.config_hash()} seed={cfg.seed}"


def _write_csv(path: Path, stamp: str, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(stamp + "\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")


def _write_json(path: Path, stamp_obj: dict, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump({**stamp_obj, **payload}, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _base_operator(cfg: RunConfig):
    U = standard_U()
    config = AssemblyConfig(h=cfg.h, cutoff_radius=cfg.cutoff, k=cfg.k, z=cfg.z)
    return assemble(config, U), U


def _law_and_basis(cfg: RunConfig):
    basis = admissible_basis(cfg.h, cfg.L_eff())
    D = 2 * basis.dimension
    R = cfg.R if cfg.R is not None else 10.0 * math.sqrt(D)
    law = PerturbationLaw(D=D, R=R, phi=cfg.law, sigma=cfg.sigma, kappa4=cfg.kappa4)
    return law, basis


def _delta_scale(cfg: RunConfig) -> float:
    kappa1 = cfg.kappa1_eff()
    return delta_eq6(cfg.tau0_eff(), cfg.h, kappa1, cfg.C0) * cfg.h**kappa1


def cmd_spectrum(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    stamp = _stamp(cfg, "spectrum")
    op, _ = _base_operator(cfg)
    cloud = eigenvalues(op)
    _write_csv(out / "eigvals_unperturbed.csv", stamp, "re,im", cloud.to_csv_rows())

    law, basis = _law_and_basis(cfg)
    gamma = law.sample(trial_rng(cfg.seed, 0))
    A = perturbed_matrix(op, basis, gamma, _delta_scale(cfg))
    cloud_p = eigenvalues(A)
    _write_csv(out / "eigvals_perturbed.csv", stamp, "re,im", cloud_p.to_csv_rows())

    rows = []
    for tag, cl in (("unperturbed", cloud), ("perturbed", cloud_p)):
        cells = per_cell_counts(cl, cfg.h, cfg.window)
        for idx, cnt in sorted(cells.items()):
            rows.append((tag, idx.m, idx.n, cnt))
    _write_csv(out / "per_cell_counts.csv", stamp, "which,m,n,count", rows)

    clusters = cluster_eigenvalues(cloud.values, tol=1e-6 * cfg.h)
    _write_csv(
        out / "clusters_unperturbed.csv", stamp, "re,im,multiplicity",
        [(c.real, c.imag, m) for c, m in clusters],
    )
    return 0


def cmd_magic_scan(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    stamp = _stamp(cfg, "magic-scan")
    lat = MoireLattice()
    U = standard_U(lat)
    z0 = (lat.eta1 + lat.eta2) / 3.0
    grid = np.linspace(cfg.h_min, cfg.h_max, cfg.h_steps)
    res = magic_scan(grid, z0, U, cutoff=cfg.cutoff, threshold=cfg.threshold)
    _write_csv(out / "magic_scan.csv", stamp, "h,t1,t1_over_h", res.to_csv_rows())
    stability = []
    for cand in res.candidates:
        lo, hi = max(cand - 0.02, cfg.h_min), min(cand + 0.02, cfg.h_max)
        res2 = magic_scan(
            np.linspace(lo, hi, 5), z0, U, cutoff=2 * cfg.cutoff,
            threshold=cfg.threshold,
        )
        match = min(res2.candidates, key=lambda c: abs(c - cand)) if res2.candidates else None
        stability.append(
            {
                "h": cand,
                "h_doubled_cutoff": match,
                "drift": None if match is None else abs(match - cand),
            }
        )
    _write_json(
        out / "magic_candidates.json",
        {"config_hash": cfg.config_hash(), "seed": cfg.seed},
        {"threshold": cfg.threshold, "candidates": stability},
    )
    return 0


def cmd_perturb(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    stamp = _stamp(cfg, "perturb")
    op, _ = _base_operator(cfg)
    law, basis = _law_and_basis(cfg)
    gamma = law.sample(trial_rng(cfg.seed, 0))
    A = perturbed_matrix(op, basis, gamma, _delta_scale(cfg))
    s_before = singular_values(op)
    s_after = singular_values(A)
    _write_csv(
        out / "singular_values.csv", stamp, "index,before,after",
        [(i + 1, b, a) for i, (b, a) in enumerate(zip(s_before.values, s_after.values))],
    )
    _write_csv(out / "eigvals_perturbed.csv", stamp, "re,im", eigenvalues(A).to_csv_rows())
    return 0


def cmd_weyl(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    stamp = _stamp(cfg, "weyl")
    op, _ = _base_operator(cfg)
    law, basis = _law_and_basis(cfg)
    region = Disc(complex(cfg.region_re, cfg.region_im), cfg.region_radius)
    res = mc_weyl(
        op, basis, law, cfg.trials, region, _delta_scale(cfg),
        master_seed=cfg.seed, cell_window=cfg.window,
    )
    with open(out / "weyl_trials.jsonl", "w") as fh:
        for rec in res.records:
            fh.write(rec.to_json_line(cfg.config_hash()) + "\n")
    _write_csv(
        out / "weyl_summary.csv", stamp,
        "trials,mean_count,median_abs_error,prediction",
        [(len(res.records), res.mean_count, res.median_abs_error, res.prediction)],
    )
    return 0


def cmd_lift(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    stamp = _stamp(cfg, "lift")
    op, _ = _base_operator(cfg)
    sched = cfg.schedule()
    before = singular_values(op)
    result = lift_iterate(op, cfg.tau0_eff(), sched)
    after = singular_values(result.final_matrix)
    _write_csv(
        out / "lift_singular_values.csv", stamp, "index,before,after",
        [(i + 1, b, a) for i, (b, a) in enumerate(zip(before.values, after.values))],
    )
    _write_json(
        out / "lift_audit.json",
        {"config_hash": cfg.config_hash(), "seed": cfg.seed},
        result.to_json_obj(),
    )
    return 0


def cmd_mc(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    stamp = _stamp(cfg, "mc")
    op, _ = _base_operator(cfg)
    law, basis = _law_and_basis(cfg)
    scale = _delta_scale(cfg)
    res = mc_smallest_singular(
        op, basis, law, cfg.trials, scale, master_seed=cfg.seed,
    )
    med = float(np.median(res.t1_values))
    thr = 1e-3 * med
    with open(out / "mc_trials.jsonl", "w") as fh:
        for rec in res.records:
            fh.write(rec.to_json_line(cfg.config_hash()) + "\n")
    _write_csv(
        out / "mc_summary.csv", stamp,
        "trials,median_t1,threshold,pass_fraction",
        [(len(res.records), med, thr, res.pass_fraction_at(thr))],
    )
    region = Disc(complex(cfg.region_re, cfg.region_im), cfg.region_radius)
    wres = mc_weyl(
        op, basis, law, min(cfg.trials, 20), region, scale,
        master_seed=cfg.seed, cell_window=cfg.window,
    )
    _write_csv(
        out / "mc_weyl_summary.csv", stamp,
        "trials,mean_count,median_abs_error,prediction,interior_cells,all_cells_2",
        [(
            len(wres.records), wres.mean_count, wres.median_abs_error,
            wres.prediction, wres.interior_cells,
            all(r.cell_counts_ok for r in wres.records if r.cell_counts_ok is not None),
        )],
    )
    return 0


_COMMANDS = {
    "spectrum": cmd_spectrum,
    "magic-scan": cmd_magic_scan,
    "perturb": cmd_perturb,
    "weyl": cmd_weyl,
    "lift": cmd_lift,
    "mc": cmd_mc,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="chiralspec",
        description="Spectral experiments for the chiral moire operator",
    )
    p.add_argument("--config", help="JSON config file", default=None)
    sub = p.add_subparsers(dest="command", required=True)
    flag_types = {f.name: f for f in fields(RunConfig)}
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        for fname, f in flag_types.items():
            default_val = getattr(RunConfig(), fname)
            typ = type(default_val) if default_val is not None else float
            if typ is bool:
                continue
            sp.add_argument(
                f"--{fname.replace('_', '-')}", dest=fname,
                type=str if typ is str else typ, default=None,
            )
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {
        f.name: getattr(args, f.name, None) for f in fields(RunConfig)
    }
    try:
        cfg = load_config(args.config, dict(os.environ), overrides)
        return _COMMANDS[args.command](cfg)
    except (ConfigurationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except LiftError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        audit = getattr(exc, "audit", None)
        if audit is not None and hasattr(audit, "to_json_obj"):
            json.dump(audit.to_json_obj(), sys.stderr, default=str)
            print(file=sys.stderr)
        return 3
    except (SolverError, MCError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
