"""Experiment configuration, ensemble-versus-PDE comparison and report output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import SimParams, TestFunction, _empirical, simulate
from .errors import ConfigError, IoFailure
from .kernels import default_backend
from .lattice import Torus
from .measure import PerturbationField, lambda_field_from_phi, sample
from .pde import PdeState, integrate
from .rng import stream
from .velocity import (VelocitySet, assumption_av_report, check_integer_independence,
                       model_one, sqrt2_set, velocity_set_from_dict)

CSV_HEADER = ["N", "t", "functional_id", "mean", "stderr", "pde_value", "gap", "gap_in_se"]
TAGS = ("theorem-regime", "exploratory")


def resolve_velocity_set(spec, base_dir: Path | None = None) -> VelocitySet:
    """A velocity set from a dict, a JSON path, or a built-in name.

    Built-in names: ``model_one:<d>`` and ``sqrt2``.
    """
    if isinstance(spec, VelocitySet):
        return spec
    if isinstance(spec, dict):
        return velocity_set_from_dict(spec)
    if not isinstance(spec, str):
        raise ConfigError(f"cannot interpret velocity spec {spec!r}")
    if spec == "sqrt2":
        return sqrt2_set()
    if spec.startswith("model_one"):
        _, _, d = spec.partition(":")
        return model_one(int(d or 1))
    path = Path(spec)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    try:
        return velocity_set_from_dict(json.loads(path.read_text()))
    except OSError as exc:
        raise ConfigError(f"cannot read velocity file {path}: {exc}") from exc


def resolve_threads(flag: int | None) -> int:
    if flag:
        return max(1, int(flag))
    env = os.environ.get("LGK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"LGK_THREADS={env!r} is not an integer") from exc
    return 1


def theorem_bound(vs: VelocitySet) -> float | None:
    kappa = vs.kappa()
    return None if kappa is None else vs.dim / (kappa + 2 * vs.dim)


@dataclass
class ExperimentConfig:
    velocity: object
    a: float
    N_list: list[int]
    T: float
    replicas: int
    phi_modes: list[dict]
    functionals: list[dict]
    snapshot_times: list[float] = field(default_factory=list)
    grid: int = 128
    seed: int = 0
    tag: str | None = None
    c_cfl: float = 0.2
    output_dir: str | None = None

    def __post_init__(self):
        self.N_list = [int(n) for n in self.N_list]
        self.snapshot_times = [float(t) for t in self.snapshot_times] or [0.0, float(self.T)]

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(f"incomplete experiment config: {exc}") from exc
        cfg._base_dir = base_dir
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, path.parent)

    def velocity_set(self) -> VelocitySet:
        return resolve_velocity_set(self.velocity, getattr(self, "_base_dir", None))

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.velocity, VelocitySet):
            d["velocity"] = self.velocity.describe()
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate(self) -> tuple[VelocitySet, str, list[str]]:
        """Check the config; returns (velocity set, resolved tag, warnings)."""
        vs = self.velocity_set()
        warnings = []
        if not 0.0 < self.a < 1.0:
            raise ConfigError(f"a={self.a} must lie in (0, 1)")
        if self.replicas < 1 or not self.N_list or self.T < 0:
            raise ConfigError("need replicas >= 1, a non-empty N list and T >= 0")
        if not assumption_av_report(vs)["invertible"]:
            raise ConfigError("velocity set fails the Gram invertibility assumption")
        times = self.snapshot_times
        if sorted(times) != times or times[0] < 0 or times[-1] > self.T + 1e-15:
            raise ConfigError("snapshot times must be sorted and within [0, T]")
        bound = theorem_bound(vs)
        in_regime = bound is not None and self.a < bound
        tag = self.tag or ("theorem-regime" if in_regime else "exploratory")
        if tag not in TAGS:
            raise ConfigError(f"tag must be one of {TAGS}")
        if tag == "theorem-regime":
            if not in_regime:
                raise ConfigError(f"a={self.a} violates a < d/(kappa+2d) = {bound} "
                                  "required for theorem-regime runs")
            if not check_integer_independence(vs):
                raise ConfigError("theorem-regime runs need integer-independent generators")
        else:
            warnings.append(f"exploratory run: a={self.a} is outside the proven range"
                            f" (bound {bound})" if bound is not None else
                            "exploratory run: no spectral-gap exponent for this set")
        for m in self.phi_modes + self.functionals:
            if len(m.get("re", m.get("im", []))) != vs.dim + 1:
                raise ConfigError("Fourier coefficients need d+1 components")
        return vs, tag, warnings

    def test_functions(self) -> list[TestFunction]:
        n = None
        out = []
        for j, f in enumerate(self.functionals):
            n = len(f.get("re", f.get("im")))
            out.append(TestFunction(f["k"], f.get("re", [0.0] * n), f.get("im", [0.0] * n),
                                    f.get("id", f"F{j}")))
        return out

    def perturbation(self, vs: VelocitySet) -> PerturbationField:
        return PerturbationField.from_dict(self.phi_modes, self.a, ncomp=vs.dim + 1)


@dataclass
class ComparisonRow:
    N: int
    t: float
    functional_id: str
    mean: float
    stderr: float
    pde_value: float
    gap: float
    gap_in_se: float


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.N, repr(float(r.t)), r.functional_id, repr(float(r.mean)),
                        repr(float(r.stderr)), repr(float(r.pde_value)), repr(float(r.gap)),
                        repr(float(r.gap_in_se))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ComparisonReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected CSV header {header}")
        rows = [ComparisonRow(int(r[0]), float(r[1]), r[2], *(float(x) for x in r[3:]))
                for r in reader if r]
        return cls(rows)

    def select(self, functional_id: str, t: float | None = None) -> list[ComparisonRow]:
        rows = [r for r in self.rows if r.functional_id == functional_id]
        if t is None and rows:
            t = max(r.t for r in rows)
        return sorted((r for r in rows if r.t == t), key=lambda r: r.N)

    @property
    def functional_ids(self) -> list[str]:
        return list(dict.fromkeys(r.functional_id for r in self.rows))


def _replica_task(args):
    (vs, a, params, field_, torus, fvals, seed, replica, N, backend) = args
    init = sample(field_, vs, stream(seed, replica, f"initial/N={N}"))

    def observe(occ):
        return np.array([_empirical(occ, torus, vs, a, fv) for fv in fvals])

    traj = simulate(params, init, backend=backend,
                    rng=stream(seed, replica, f"dynamics/N={N}"), observe=observe)
    return np.stack(traj.snapshots), traj.counters


def pde_functionals(cfg: ExperimentConfig, vs: VelocitySet, phi: PerturbationField) -> dict:
    """{functional id: {t: value}} from one PDE solve at the configured grid."""
    state = PdeState.from_function(vs, cfg.grid, phi)
    funcs = {f.name: f for f in cfg.test_functions()}
    _, series = integrate(state, cfg.T, c_cfl=cfg.c_cfl, functionals=funcs,
                          times=cfg.snapshot_times)
    return {fid: dict(vals) for fid, vals in series.items()}


def run_comparison(cfg: ExperimentConfig, *, threads: int = 1, backend: str | None = None,
                   progress=None) -> ComparisonReport:
    """Simulate R replicas per N from the slowly varying product measure and compare with the PDE.

    Replica r at lattice size N draws from the streams keyed (seed, r,
    "initial/N=..") and (seed, r, "dynamics/N=.."), so results do not depend on
    how replicas are scheduled; aggregation runs in replica order.
    """
    vs, tag, warnings = cfg.validate()
    backend = backend or default_backend()
    phi = cfg.perturbation(vs)
    funcs = cfg.test_functions()
    t0 = time.perf_counter()
    pde = pde_functionals(cfg, vs, phi)
    walls = {"pde": time.perf_counter() - t0}
    rows: list[ComparisonRow] = []
    counters_total = {}
    for N in cfg.N_list:
        t1 = time.perf_counter()
        torus = Torus(vs.dim, N)
        field_ = lambda_field_from_phi(vs, phi, N)
        fvals = [f(torus.positions()) for f in funcs]
        params = SimParams(N, cfg.a, vs, cfg.T, list(cfg.snapshot_times), cfg.seed)
        tasks = [(vs, cfg.a, params, field_, torus, fvals, cfg.seed, r, N, backend)
                 for r in range(cfg.replicas)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(_replica_task, tasks))
        else:
            results = [_replica_task(t) for t in tasks]
        data = np.stack([res[0] for res in results])  # (R, n_times, n_funcs)
        counts = {}
        for _, c in results:
            for k, v in c.items():
                counts[k] = counts.get(k, 0) + v
        counters_total[str(N)] = counts
        mean = data.mean(axis=0)
        se = (data.std(axis=0, ddof=1) / math.sqrt(cfg.replicas) if cfg.replicas > 1
              else np.full_like(mean, math.nan))
        for ti, t in enumerate(cfg.snapshot_times):
            for fi, f in enumerate(funcs):
                pv = pde[f.name][t]
                gap = abs(float(mean[ti, fi]) - pv)
                s = float(se[ti, fi])
                rows.append(ComparisonRow(N, t, f.name, float(mean[ti, fi]), s, pv, gap,
                                          gap / s if s > 0 else math.inf))
        walls[f"N={N}"] = time.perf_counter() - t1
        if progress:
            progress(N, walls[f"N={N}"])
    meta = {"tag": tag, "warnings": warnings, "config": cfg.to_dict(),
            "config_hash": cfg.config_hash(), "master_seed": cfg.seed,
            "version": f"lgk {__version__}", "backend": backend, "threads": threads,
            "wall_times": walls, "counters": counters_total}
    return ComparisonReport(rows, meta)


def convergence_audit(report: ComparisonReport, *, slack_se: float = 2.0,
                      final_se: float = 5.0, t: float | None = None) -> dict:
    """Per functional: does the gap shrink from the smallest to the largest N, and is
    the largest-N gap within ``final_se`` standard errors?"""
    out = {}
    for fid in report.functional_ids:
        rows = report.select(fid, t)
        first, last = rows[0], rows[-1]
        slack = slack_se * math.hypot(first.stderr, last.stderr)
        decreasing = last.gap <= first.gap + slack
        chain = all(b.gap <= a_.gap + slack_se * math.hypot(a_.stderr, b.stderr)
                    for a_, b in zip(rows, rows[1:]))
        final_ok = last.gap <= final_se * last.stderr
        out[fid] = {"N": [r.N for r in rows], "gap": [r.gap for r in rows],
                    "stderr": [r.stderr for r in rows], "decreasing": bool(decreasing),
                    "monotone_chain": bool(chain), "final_within_se": bool(final_ok),
                    "pass": bool(decreasing and final_ok)}
    return out


def _svg_chart(report: ComparisonReport, t: float | None = None) -> str:
    """Gap against N per functional, log-log axes, as a standalone SVG."""
    W, H, pad = 640, 400, 60
    series = {fid: [(r.N, max(r.gap, 1e-300), r.stderr) for r in report.select(fid, t)]
              for fid in report.functional_ids}
    pts = [p for s in series.values() for p in s]
    if not pts:
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">'
                '<text x="20" y="30">no data</text></svg>\n')
    xs = [math.log10(p[0]) for p in pts]
    ys = [math.log10(v) for p in pts for v in (p[1], p[2]) if v > 0]
    x0, x1 = min(xs) - 0.05, max(xs) + 0.05
    y0, y1 = min(ys) - 0.1, max(ys) + 0.1

    def px(x):
        return pad + (math.log10(x) - x0) / (x1 - x0) * (W - 2 * pad)

    def py(y):
        return H - pad - (math.log10(y) - y0) / (y1 - y0) * (H - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             'font-family="sans-serif" font-size="12">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
             f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle">N (log scale)</text>',
             f'<text x="15" y="{H / 2}" transform="rotate(-90 15 {H / 2})" '
             'text-anchor="middle">|mean - PDE| (log scale)</text>']
    for N in sorted({p[0] for p in pts}):
        parts.append(f'<text x="{px(N):.1f}" y="{H - pad + 18}" text-anchor="middle">{N}</text>')
    for e in range(math.floor(y0), math.ceil(y1) + 1):
        if y0 <= e <= y1:
            parts.append(f'<text x="{pad - 8}" y="{py(10.0 ** e) + 4:.1f}" '
                         f'text-anchor="end">1e{e}</text>')
    for j, (fid, s) in enumerate(series.items()):
        c = colors[j % len(colors)]
        line = " ".join(f"{px(n):.1f},{py(g):.1f}" for n, g, _ in s)
        parts.append(f'<polyline points="{line}" fill="none" stroke="{c}" stroke-width="2"/>')
        se_line = " ".join(f"{px(n):.1f},{py(se):.1f}" for n, _, se in s if se > 0)
        if se_line:
            parts.append(f'<polyline points="{se_line}" fill="none" stroke="{c}" '
                         'stroke-dasharray="4 3"/>')
        for n, g, _ in s:
            parts.append(f'<circle cx="{px(n):.1f}" cy="{py(g):.1f}" r="3" fill="{c}"/>')
        parts.append(f'<text x="{W - pad + 5}" y="{pad + 16 * j}" fill="{c}">{fid}</text>')
    parts.append(f'<text x="{W - pad + 5}" y="{pad + 16 * len(series)}">dashed: stderr</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_reports(report: ComparisonReport, out_dir, formats=("csv", "json", "svg"),
                 stem: str = "comparison") -> dict:
    """Write the requested files; returns {format: path}."""
    out = Path(out_dir)
    paths = {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            p = out / f"{stem}.csv"
            p.write_text(report.to_csv())
            paths["csv"] = p
        if "json" in formats:
            p = out / f"{stem}.manifest.json"
            manifest = dict(report.meta)
            if report.rows:
                manifest["audit"] = convergence_audit(report)
            p.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
            paths["json"] = p
        if "svg" in formats:
            p = out / f"{stem}.svg"
            p.write_text(_svg_chart(report))
            paths["svg"] = p
    except OSError as exc:
        raise IoFailure(f"cannot write reports to {out}: {exc}") from exc
    return paths
