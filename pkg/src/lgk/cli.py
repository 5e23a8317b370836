"""Command-line entry point: ``lgk <subcommand> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 a verification
tolerance was exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import LgkError

log = logging.getLogger("lgk")

EXIT_OK, EXIT_INVALID, EXIT_TOLERANCE = 0, 1, 2


class ToleranceFailure(Exception):
    pass


def _load_config(path) -> tuple[dict, Path | None]:
    if path is None:
        return {}, None
    p = Path(path)
    try:
        return json.loads(p.read_text()), p.parent
    except (OSError, json.JSONDecodeError) as exc:
        from .errors import ConfigError
        raise ConfigError(f"cannot read config {p}: {exc}") from exc


def _velocity(conf: dict, base: Path | None):
    from .harness import resolve_velocity_set
    from .errors import ConfigError
    if "velocity" not in conf:
        raise ConfigError("config needs a 'velocity' entry")
    return resolve_velocity_set(conf["velocity"], base)


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj) -> str:
    def conv(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        return str(o)
    return json.dumps(obj, indent=2, default=conv, allow_nan=True) + "\n"


def _m_list(args, conf) -> list[int]:
    raw = getattr(args, "M_list", None) or conf.get("M_list", [1])
    if isinstance(raw, str):
        return [int(m) for m in raw.split(",") if m.strip()]
    return [int(m) for m in raw]


def cmd_check(args, conf, base) -> int:
    from .velocity import (assumption_av_report, check_integer_independence, check_span,
                           integer_relation, lambda_derivatives_fd)
    from .harness import theorem_bound
    vs = _velocity(conf, base)
    span_ok, rank = check_span(vs) if vs.pair_form is not None else (None, None)
    indep = check_integer_independence(vs) if vs.pair_form is not None else None
    av = assumption_av_report(vs)
    report = {"velocities": vs.describe(), "dimension": vs.dim,
              "pair_form": vs.pair_form is not None, "span": span_ok, "rank": rank,
              "integer_independent": indep,
              "integer_relation": integer_relation(vs) if indep is False else None,
              "gram_invertible": av["invertible"], "gram_min_eigenvalue": av["min_eigenvalue"],
              "kappa": vs.kappa(), "a_bound": theorem_bound(vs),
              "effective_collisions": len(vs.collision_set)}
    report["gram_eigenvalues"] = av["eigenvalues"]
    report["p_star"] = vs.p_star
    if av["invertible"]:
        fd = lambda_derivatives_fd(vs)
        report["A_V"] = vs.a_matrix
        report["lambda_jacobian_error"] = fd["jacobian_error"]
        report["lambda_hessian_max"] = fd["hessian_max"]
    if "a" in conf and report["a_bound"] is not None:
        report["a"] = conf["a"]
        report["theorem_regime"] = conf["a"] < report["a_bound"]
    sys.stdout.write(_dump(report))
    if args.out:
        out = Path(args.out)
        out.write_text(_dump(report))
        if av["invertible"]:
            _write_coupling(out.with_name(out.stem + "_coupling.csv"), vs.coupling)
    valid = av["invertible"] and span_ok is not False and indep is not False
    if not valid:
        return EXIT_INVALID
    if av["invertible"] and (report["lambda_jacobian_error"] > 1e-6
                             or report["lambda_hessian_max"] > 1e-4):
        raise ToleranceFailure("Lambda derivatives off their predicted values")
    return EXIT_OK


def _write_coupling(path: Path, C: np.ndarray):
    """Nonzero entries of C[k,i,j,l], one per row."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "i", "j", "l", "value"])
        for idx in zip(*np.nonzero(np.abs(C) > 1e-15)):
            w.writerow([*(int(c) for c in idx), repr(float(C[idx]))])


def cmd_exact(args, conf, base) -> int:
    from .exactgen import build_generators, exact_report
    vs = _velocity(conf, base)
    N, a = int(conf.get("N", 3)), float(conf.get("a", 0.5))
    gen = build_generators(N, vs.dim, a, vs)
    if "lambdas" in conf:
        lams = [np.asarray(x, dtype=float) for x in conf["lambdas"]]
    else:
        from .rng import stream
        rng = stream(args.seed if args.seed is not None else conf.get("seed", 0), 0, "test")
        lmax = float(conf.get("lambda_max", 1.0))
        lams = [rng.uniform(-lmax, lmax, vs.dim + 1) for _ in range(int(conf.get("n_random", 20)))]
    rep = exact_report(gen, lams, float(conf.get("tolerance", 1e-10)))
    text = _dump(rep)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    if not rep["pass"]:
        raise ToleranceFailure("generator residual above tolerance")
    return EXIT_OK


def cmd_gap(args, conf, base) -> int:
    from .microcanonical import gap_table
    vs = _velocity(conf, base)
    rows = gap_table(_m_list(args, conf), vs)
    out = Path(args.out or "gaps.csv")
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["M", "i", "size", "zero_multiplicity", "gap", "gap_scaled"])
        for r in rows:
            w.writerow([r["M"], r["i"], r["size"], r["zero_multiplicity"], repr(r["gap"]),
                        repr(r["gap_scaled"])])
    bad = [r for r in rows if r["zero_multiplicity"] != 1]
    by_M = {}
    for r in rows:
        if math.isfinite(r["gap"]):
            by_M[r["M"]] = min(by_M.get(r["M"], math.inf), r["gap_scaled"])
    print(f"wrote {len(rows)} surfaces to {out}; min gap*(2M+1)^kappa per M: {by_M}")
    if bad:
        raise ToleranceFailure(f"{len(bad)} surfaces are not ergodic (zero multiplicity > 1)")
    return EXIT_OK


def cmd_chain(args, conf, base) -> int:
    from .microcanonical import (all_kspaces, build_k_chain, find_maximizer, verify_cor_sg_k)
    vs = _velocity(conf, base)
    if vs.pair_form is None:
        from .errors import ConfigError
        raise ConfigError("chain audits need a pair-form velocity set")
    audits, ok = [], True
    for M in _m_list(args, conf):
        L = (2 * M + 1) ** vs.dim
        for ks in all_kspaces(M, vs).values():
            kstar = find_maximizer(ks)
            nu_max = max(ks.nu_bar.values())
            lengths = [len(build_k_chain(ks, k, kstar)) for k in ks.ks]
            cor = verify_cor_sg_k(ks)
            bound = (L + 1) ** (vs.n_pairs - 1)
            row = {"M": M, "i": ks.label, "size": len(ks), "size_bound": bound,
                   "k_star": list(kstar), "is_max": ks.nu_bar[kstar] == nu_max,
                   "max_chain": max(lengths), "cor_ratio": cor["ratio"], "cor_bound": cor["bound"],
                   "pass": bool(len(ks) <= bound and ks.nu_bar[kstar] == nu_max
                                and max(lengths) <= len(ks) and cor["pass"])}
            ok &= row["pass"]
            audits.append(row)
    text = _dump({"surfaces": audits, "pass": ok})
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"{len(audits)} particle-number spaces audited; pass={ok}", file=sys.stderr)
    if not ok:
        raise ToleranceFailure("chain audit failed")
    return EXIT_OK


def cmd_simulate(args, conf, base) -> int:
    from .dynamics import SimParams, simulate
    from .lattice import Torus
    from .measure import PerturbationField, PotentialField, lambda_field_from_phi, sample
    from .rng import stream
    vs = _velocity(conf, base)
    seed = args.seed if args.seed is not None else int(conf.get("seed", 0))
    replica = int(conf.get("replica", 0))
    N, a, T = int(conf["N"]), float(conf["a"]), float(conf["T"])
    params = SimParams(N, a, vs, T, conf.get("snapshot_times", []), seed, replica,
                       bool(conf.get("collisions", True)))
    torus = Torus(vs.dim, N)
    if "phi_modes" in conf:
        phi = PerturbationField.from_dict(conf["phi_modes"], a, ncomp=vs.dim + 1)
        field_ = lambda_field_from_phi(vs, phi, N)
    else:
        field_ = PotentialField.constant(torus, conf.get("lambda", [0.0] * (vs.dim + 1)))
    init = sample(field_, vs, stream(seed, replica, "initial"))
    traj = simulate(params, init, backend=args.backend)
    out = _out_dir(args, "simulate_out")
    labels = vs.describe()
    for j, (t, occ) in enumerate(zip(traj.times, traj.snapshots)):
        cfg = init.__class__(torus, vs, occ)
        (out / f"snapshot_{j:04d}.lgkc").write_bytes(cfg.to_bytes(labels))
    summary = {"times": traj.times, "counters": traj.counters, "wall_time": traj.wall_time,
               "totals": [init.__class__(torus, vs, o).totals.tolist() for o in traj.snapshots],
               "seed": seed, "replica": replica, "backend": args.backend}
    (out / "trajectory.json").write_text(_dump(summary))
    print(f"{len(traj.snapshots)} snapshots written to {out}; counters {traj.counters}")
    return EXIT_OK


def cmd_pde(args, conf, base) -> int:
    from .harness import ExperimentConfig
    from .pde import PdeState, integrate
    conf = dict(conf)
    if args.grid:
        conf["grid"] = args.grid
    if args.Tend is not None:
        conf["T"] = args.Tend
    conf.setdefault("N_list", [1])
    conf.setdefault("replicas", 1)
    want_snapshots = bool(conf.pop("snapshots", False))
    exp = ExperimentConfig.from_dict(conf, base)
    vs = exp.velocity_set()
    phi = exp.perturbation(vs)
    state = PdeState.from_function(vs, exp.grid, phi)
    funcs = {f.name: f for f in exp.test_functions()}
    times = sorted(set(exp.snapshot_times))
    final, series = integrate(state, exp.T, c_cfl=exp.c_cfl, functionals=funcs, times=times)
    out = Path(args.out or "pde.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "functional_id", "value"])
        for fid, vals in series.items():
            for t, v in vals:
                w.writerow([repr(t), fid, repr(v)])
    if want_snapshots:
        for k in range(vs.dim + 1):
            np.savetxt(out.with_name(f"{out.stem}_phi{k}.csv"),
                       final.values[..., k].reshape(exp.grid, -1), delimiter=",", fmt="%.17g")
    print(f"PDE solved on G={exp.grid} to T={exp.T}; functionals written to {out}")
    return EXIT_OK


def cmd_compare(args, conf, base) -> int:
    from .harness import (ExperimentConfig, convergence_audit, emit_reports, resolve_threads,
                          run_comparison)
    conf = dict(conf)
    if args.seed is not None:
        conf["seed"] = args.seed
    exp = ExperimentConfig.from_dict(conf, base)
    threads = resolve_threads(args.threads)
    report = run_comparison(exp, threads=threads, backend=args.backend,
                            progress=lambda N, w: log.info("N=%d done in %.1fs", N, w))
    out = args.out or exp.output_dir or "compare_out"
    paths = emit_reports(report, out)
    audit = convergence_audit(report)
    for fid, a in audit.items():
        print(f"{fid}: gaps {['%.3g' % g for g in a['gap']]} "
              f"stderr {['%.3g' % s for s in a['stderr']]} pass={a['pass']}")
    print(f"[{report.meta['tag']}] reports: {', '.join(str(p) for p in paths.values())}")
    if args.audit and not all(a["pass"] for a in audit.values()):
        raise ToleranceFailure("convergence audit failed")
    return EXIT_OK


def cmd_version(args, conf, base) -> int:
    from .kernels import BACKENDS, default_backend
    print(f"lgk {__version__} (backends: {', '.join(sorted(BACKENDS))}; "
          f"default {default_backend()})")
    return EXIT_OK


COMMANDS = {"check": cmd_check, "exact": cmd_exact, "gap": cmd_gap, "chain": cmd_chain,
            "simulate": cmd_simulate, "pde": cmd_pde, "compare": cmd_compare,
            "version": cmd_version}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # flags may come before or after the subcommand; the subcommand copy must
    # not overwrite a value given earlier with its own default
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", help="JSON configuration file", **kw)
    g.add_argument("--out", help="output file or directory", **kw)
    g.add_argument("--threads", type=int, help="worker threads (fallback: LGK_THREADS)", **kw)
    g.add_argument("--seed", type=int, help="master seed, overrides the config", **kw)
    g.add_argument("--backend", choices=["cython", "python"], **kw)
    g.add_argument("-v", "--verbose", action="store_true", **kw)
    return g


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgk", parents=[_global_flags(False)],
                                     description="Lattice gas simulation and verification")
    sub = parser.add_subparsers(dest="command", required=True)
    inner = _global_flags(True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[inner])
        if name in ("gap", "chain"):
            p.add_argument("--M-list", dest="M_list", help="comma-separated box radii")
        if name == "pde":
            p.add_argument("--grid", type=int)
            p.add_argument("--Tend", type=float)
        if name == "compare":
            p.add_argument("--audit", action="store_true",
                           help="exit 2 unless every functional passes the convergence audit")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        conf, base = _load_config(args.config)
        return COMMANDS[args.command](args, conf, base)
    except ToleranceFailure as exc:
        print(f"tolerance failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except (LgkError, ValueError, KeyError) as exc:
        print(f"error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
