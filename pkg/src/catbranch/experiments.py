"""Experiment orchestration: config in, CSV / NDJSON / manifest out.

Numeric outputs depend only on the validated config, its master seed and the
package version. Wall time and the git description go into ``manifest.json``
only, so CSV files from two runs of the same config are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field
from functools import partial
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from . import moments
from .config import ConfigError, field_from, initial_from, lattice_from, validate
from .fss import FssConfig, fss_compare
from .kernels import KernelTable
from .lattice import Lattice
from .offspring import law_from_spec
from .parallel import replicate_map
from .particles import ParticleState, ParticleSystem, SimConfig, coexistence_trial
from .sde import analytic_duality, integrate_dp, integrate_limit, self_duality_check
from .seeding import SEED_RULE, particle_rng, sde_rng

CSV_SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CHECK_FAILED = 3
EXIT_INTERNAL = 4

SUBCOMMANDS = ("simulate", "simulate-sde", "kernels", "moments-check", "coexistence", "fss", "duality-check")


def package_version() -> str:
    try:
        return metadata.version("catbranch")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def config_hash(subcommand: str, cfg: dict) -> str:
    """SHA-256 of the canonical JSON of the config (``workers`` excluded: it never changes results)."""
    payload = {k: v for k, v in cfg.items() if k != "workers"}
    blob = json.dumps({"subcommand": subcommand, "config": payload, "version": package_version()},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config_hash: str
    version: str
    master_seed: Optional[int]
    seed_rule: str
    git_describe: str = "unknown"
    wall_time_s: float = 0.0
    summary: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    exit_code: int = EXIT_OK
    out_dir: str = ""

    def to_json(self) -> dict:
        out = asdict(self)
        out["schema"] = "catbranch.manifest/1"
        return out


class _Writer:
    """Writes CSV files stamped with the config hash and master seed."""

    def __init__(self, out_dir: Path, manifest: RunManifest):
        self.out_dir = out_dir
        self.manifest = manifest

    def header(self, kind: str) -> str:
        m = self.manifest
        return (f"# catbranch:{kind} schema={CSV_SCHEMA_VERSION} version={m.version} "
                f"config_hash={m.config_hash} master_seed={m.master_seed}\n")

    def csv(self, name: str, kind: str, columns: list, rows: list) -> Path:
        buf = io.StringIO()
        buf.write(self.header(kind))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        path = self.out_dir / name
        path.write_text(buf.getvalue())
        self.manifest.outputs.append(name)
        return path

    def ndjson(self, name: str, kind: str, records) -> Path:
        m = self.manifest
        path = self.out_dir / name
        with path.open("w") as fh:
            fh.write(json.dumps({"schema": f"catbranch:{kind}/{CSV_SCHEMA_VERSION}", "version": m.version,
                                 "config_hash": m.config_hash, "master_seed": m.master_seed}, sort_keys=True) + "\n")
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self.manifest.outputs.append(name)
        return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (tuple, list)):
        return " ".join(str(x) for x in v)
    return v


def load_config_file(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"invalid JSON: {exc}")]) from None


def run_experiment(subcommand: str, raw_config: dict, out_dir=None, workers: Optional[int] = None) -> RunManifest:
    """Validate, dispatch, write outputs plus ``manifest.json``; the manifest carries the exit code.

    Without ``out_dir`` results go to ``runs/<subcommand>-<first 12 hex digits of the config hash>``.
    """
    cfg = validate(subcommand, raw_config)
    if workers is not None:
        cfg["workers"] = workers
    digest = config_hash(subcommand, cfg)
    out_dir = Path(out_dir) if out_dir is not None else Path("runs") / f"{subcommand}-{digest[:12]}"
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(subcommand, digest, package_version(), cfg.get("seed"), SEED_RULE, git_describe())
    manifest.out_dir = str(out_dir)
    writer = _Writer(out_dir, manifest)
    start = time.perf_counter()
    handler = _HANDLERS[subcommand]
    manifest.exit_code = handler(cfg, writer, manifest)
    manifest.wall_time_s = time.perf_counter() - start
    (out_dir / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n")
    return manifest


# --- simulate --------------------------------------------------------------

def _simulate_replicate(index: int, cfg: dict) -> tuple[dict, list]:
    lattice = lattice_from(cfg["lattice"])
    sim = SimConfig(lattice, cfg["kappa"], cfg["gamma"], law_from_spec(cfg["law"]), cfg["horizon"],
                    record_trajectory=cfg["record_events"], max_events=cfg["max_events"])
    system = ParticleSystem(sim, initial_from(cfg["initial"], lattice), particle_rng(cfg["seed"], index))
    system.advance(sim.horizon)
    traj = system.trajectory()
    events = [dict(e.to_json(), replicate=index) for e in traj.events] if traj.events is not None else []
    return traj.summary(), events


def _run_simulate(cfg: dict, writer: _Writer, manifest: RunManifest) -> int:
    results = replicate_map(partial(_simulate_replicate, cfg=cfg), range(cfg["replicates"]), cfg["workers"])
    columns = ["replicate", "final_time", "total_xi", "total_eta", "interaction_sum", "n_events",
               "n_xi_walk", "n_eta_walk", "n_xi_branch", "n_eta_branch", "quiescent"]
    rows = [[i] + [s[c] for c in columns[1:]] for i, (s, _) in enumerate(results)]
    writer.csv("simulate.csv", "simulate", columns, rows)
    if cfg["record_events"]:
        writer.ndjson("events.ndjson", "events", (e for _, evs in results for e in evs))
    totals = np.array([[s["total_xi"], s["total_eta"]] for s, _ in results], dtype=float)
    manifest.summary = {
        "mean_total_xi": float(totals[:, 0].mean()),
        "mean_total_eta": float(totals[:, 1].mean()),
        "mean_events": float(np.mean([s["n_events"] for s, _ in results])),
    }
    return EXIT_OK


# --- simulate-sde ----------------------------------------------------------

def _run_simulate_sde(cfg: dict, writer: _Writer, manifest: RunManifest) -> int:
    R, batch = cfg["replicates"], 10_000
    rows, clipped = [], 0.0
    done, b = 0, 0
    if cfg["mode"] == "torus":
        lattice = lattice_from(cfg["lattice"])
        table = KernelTable(lattice, cfg["kappa"])
        u0, v0 = field_from(cfg["u0"], lattice.size), field_from(cfg["v0"], lattice.size)
        columns = ["path", "total_u", "total_v"]
        while done < R:
            size = min(batch, R - done)
            state = integrate_dp(u0, v0, table, cfg["gamma_tilde"], cfg["t"], sde_rng(cfg["seed"], b), size, cfg["dt"])
            tu, tv = state.totals()
            rows.extend([done + i, tu[i], tv[i]] for i in range(size))
            clipped += state.clipped_mass
            done += size
            b += 1
        initial = (float(u0.sum()), float(v0.sum()))
    else:
        columns = ["path", "X", "Y"]
        while done < R:
            size = min(batch, R - done)
            state = integrate_limit(cfg["u0"], cfg["v0"], cfg["gamma_tilde"], cfg["t"], sde_rng(cfg["seed"], b), size, cfg["dt"])
            rows.extend([done + i, state.X[i], state.Y[i]] for i in range(size))
            clipped += state.clipped_mass
            done += size
            b += 1
        initial = (float(cfg["u0"]), float(cfg["v0"]))
    writer.csv("sde.csv", "sde", columns, rows)
    arr = np.array([r[1:] for r in rows], dtype=float)
    manifest.summary = {"initial_totals": list(initial), "mean_totals": arr.mean(axis=0).tolist(),
                        "clipped_mass_per_path": clipped / R}
    return EXIT_OK


# --- kernels ---------------------------------------------------------------

def _run_kernels(cfg: dict, writer: _Writer, manifest: RunManifest) -> int:
    lattice = lattice_from(cfg["lattice"])
    table = KernelTable(lattice, cfg["kappa"])
    d = lattice.dimension
    columns = ["quantity", "t"] + [f"x{i + 1}" for i in range(d)] + ["value"]
    rows = []
    sites = lattice.sites()
    for q in cfg["quantities"]:
        for t in cfg["times"]:
            values = table.p_table(t) if q == "p" else table.green_table(t)
            rows.extend([q, float(t), *x, values[i]] for i, x in enumerate(sites))
    writer.csv("kernels.csv", "kernels", columns, rows)
    manifest.summary = {"sites": lattice.size, "rows": len(rows)}
    return EXIT_OK


# --- moments-check ---------------------------------------------------------

def _moment_replicate(index: int, cfg: dict) -> list:
    lattice = lattice_from(cfg["lattice"])
    times = sorted(cfg["times"])
    sim = SimConfig(lattice, cfg["kappa"], cfg["gamma"], law_from_spec(cfg["law"]), times[-1])
    system = ParticleSystem(sim, ParticleState.constant(lattice, cfg["theta1"], cfg["theta2"]),
                            particle_rng(cfg["seed"], index))
    x, y = tuple(cfg["x"]), tuple(cfg["y"])
    out = []
    for t in times:
        system.advance(t)
        xi_x, eta_x = system.count_at(x)
        xi_y, eta_y = system.count_at(y)
        out.append((xi_x, eta_x, xi_y, eta_y, system.total_xi, system.total_eta))
    return out


def moment_check_rows(cfg: dict) -> list:
    """Rows ``(formula, t, oracle, estimate, stderr, z)`` for every formula and time."""
    lattice = lattice_from(cfg["lattice"])
    cfg = dict(cfg)
    cfg.setdefault("x", list(lattice.origin))
    cfg.setdefault("y", list(lattice.neighbors(lattice.origin)[0]))
    cfg["x"] = list(lattice.wrap(cfg["x"]))
    cfg["y"] = list(lattice.wrap(cfg["y"]))
    law = law_from_spec(cfg["law"])
    table = KernelTable(lattice, cfg["kappa"])
    samples = np.asarray(replicate_map(partial(_moment_replicate, cfg=cfg), range(cfg["replicates"]), cfg.get("workers")),
                         dtype=float)
    times = sorted(cfg["times"])
    distinct = cfg["x"] != cfg["y"]
    rows = []
    for k, t in enumerate(times):
        xi_x, eta_x, xi_y, eta_y, tot_xi, tot_eta = samples[:, k, :].T
        q = moments.MomentQuery(table, t, cfg["gamma"], law.sigma2, cfg["theta1"], cfg["theta2"],
                                tuple(cfg["x"]), tuple(cfg["y"]))
        checks = [
            ("mean_xi", moments.mean_xi(q), xi_x),
            ("mean_eta", moments.mean_eta(q), eta_x),
            ("cross_xi_eta_same_site", moments.cross_moment(q), xi_x * eta_x),
            ("second_moment_xi", moments.second_moment_xi(q), xi_x ** 2),
            ("second_moment_eta", moments.second_moment_eta(q), eta_x ** 2),
            ("total_xi", cfg["theta1"] * lattice.size, tot_xi),
            ("total_eta", cfg["theta2"] * lattice.size, tot_eta),
        ]
        if distinct:
            checks += [
                ("cross_xi_eta", moments.cross_moment(q), xi_x * eta_y),
                ("pair_moment_xi", moments.pair_moment_xi(q), xi_x * xi_y),
                ("pair_moment_eta", moments.pair_moment_eta(q), eta_x * eta_y),
            ]
        for name, oracle, s in checks:
            est, se = mc_mean(s)
            rows.append((name, float(t), float(oracle), est, se, z_score(est, oracle, se)))
    return rows


def mc_mean(samples) -> tuple[float, float]:
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        return float(samples.mean()), 0.0
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))


def z_score(estimate: float, oracle: float, stderr: float) -> float:
    diff = estimate - oracle
    if stderr == 0:
        return 0.0 if abs(diff) <= 1e-12 * max(1.0, abs(oracle)) else math.copysign(math.inf, diff)
    return diff / stderr


def _run_moments_check(cfg: dict, writer: _Writer, manifest: RunManifest) -> int:
    rows = moment_check_rows(cfg)
    writer.csv("moments.csv", "moments", ["formula", "t", "oracle", "mc_estimate", "mc_stderr", "z_score"], rows)
    failing = [r for r in rows if not abs(r[5]) < cfg["z_threshold"]]
    manifest.summary = {"checks": len(rows), "failing": [list(r) for r in failing],
                        "max_abs_z": max(abs(r[5]) for r in rows)}
    return EXIT_CHECK_FAILED if failing else EXIT_OK


# --- coexistence -----------------------------------------------------------

def _coexistence_replicate(index: int, cfg: dict) -> tuple:
    lattice = Lattice.zd(cfg["dimension"])
    horizon = max(cfg["horizons"])
    sim = SimConfig(lattice, cfg["kappa"], cfg["gamma"], law_from_spec(cfg["law"]), horizon,
                    max_events=cfg["max_events"])
    rec = coexistence_trial(sim, initial_from(cfg["initial"], lattice), horizon, particle_rng(cfg["seed"], index))
    return rec.xi_alive, rec.eta_alive, rec.extinction_time, rec.n_events


def coexistence_curve(cfg: dict) -> tuple[list, list]:
    """Per-horizon survival estimates and per-replicate trial records (common paths across horizons)."""
    trials = replicate_map(partial(_coexistence_replicate, cfg=cfg), range(cfg["replicates"]), cfg.get("workers"))
    R = len(trials)
    curve = []
    for h in sorted(cfg["horizons"]):
        alive = sum(1 for _, _, ext, _ in trials if ext is None or ext > h)
        p = alive / R
        curve.append((float(h), R, alive, p, math.sqrt(p * (1 - p) / R)))
    return curve, trials


def _run_coexistence(cfg: dict, writer: _Writer, manifest: RunManifest) -> int:
    curve, trials = coexistence_curve(cfg)
    writer.csv("coexistence.csv", "coexistence", ["horizon", "replicates", "both_alive", "estimate", "stderr"], curve)
    writer.csv("coexistence_trials.csv", "coexistence-trials",
               ["replicate", "xi_alive", "eta_alive", "extinction_time", "n_events"],
               [(i, xa, ea, "" if ext is None else float(ext), n) for i, (xa, ea, ext, n) in enumerate(trials)])
    manifest.summary = {"estimates": {str(h): p for h, _, _, p, _ in curve}}
    return EXIT_OK


# --- fss -------------------------------------------------------------------

def fss_config_from(cfg: dict) -> FssConfig:
    return FssConfig(
        d=cfg["d"], n_values=tuple(cfg["n_values"]), T=cfg["T"], theta1=cfg["theta1"], theta2=cfg["theta2"],
        gamma=cfg["gamma"], law=law_from_spec(cfg["law"]), kappa=cfg["kappa"],
        grid=tuple(tuple(p) for p in cfg["grid"]), replicates=cfg["replicates"],
        limit_replicates=cfg["limit_replicates"], dt=cfg["dt"], seed=cfg["seed"],
        gap_tolerance=cfg["gap_tolerance"], allow_unproven=cfg["allow_unproven"],
    )


def _run_fss(cfg: dict, writer: _Writer, manifest: RunManifest) -> int:
    from .fss import FssConfigError

    try:
        fss_cfg = fss_config_from(cfg)
    except FssConfigError as exc:
        raise ConfigError([("", str(exc))]) from None
    report = fss_compare(fss_cfg, cfg.get("workers"))
    columns = ["n", "a", "b", "particle_re", "particle_im", "particle_stderr", "limit_re", "limit_im",
               "limit_stderr", "gap_re", "gap_im", "gap_abs", "combined_stderr", "verdict"]
    rows = [(r.n, r.a, r.b, r.particle.value.real, r.particle.value.imag, r.particle.stderr,
             r.limit.value.real, r.limit.value.imag, r.limit.stderr, r.gap.real, r.gap.imag,
             abs(r.gap), r.stderr, "pass" if report.verdict(r) else "fail") for r in report.rows]
    writer.csv("fss.csv", "fss", columns, rows)
    manifest.summary = {"gamma_sigma2": fss_cfg.gamma_sigma2, "gamma_sigma2_bound": fss_cfg.gamma_sigma2_bound,
                        "max_gap": max(abs(r.gap) for r in report.rows), "passed": report.passed}
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


# --- duality-check ---------------------------------------------------------

def _run_duality(cfg: dict, writer: _Writer, manifest: RunManifest) -> int:
    lattice = lattice_from(cfg["lattice"])
    table = KernelTable(lattice, cfg["kappa"])
    fields = [field_from(cfg[k], lattice.size) for k in ("u0", "v0", "ut0", "vt0")]
    rows = []
    ok = True
    if cfg["gamma_tilde"] == 0:
        lhs, rhs = analytic_duality(table, *fields, cfg["t"])
        gap = abs(lhs - rhs)
        passed = gap <= 1e-8
        rows.append(("analytic", lhs.real, lhs.imag, rhs.real, rhs.imag, 0.0, 0.0, gap, 1e-8, "pass" if passed else "fail"))
        ok &= passed
    res = self_duality_check(table, cfg["gamma_tilde"], *fields, cfg["t"], cfg["replicates"], cfg["dt"], cfg["seed"])
    allowance = 3 * res.stderr + cfg["bias_allowance"]
    passed = res.gap <= allowance
    rows.append(("euler", res.lhs.real, res.lhs.imag, res.rhs.real, res.rhs.imag, res.lhs_stderr, res.rhs_stderr,
                 res.gap, allowance, "pass" if passed else "fail"))
    ok &= passed
    writer.csv("duality.csv", "duality", ["method", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "lhs_stderr",
                                          "rhs_stderr", "gap", "allowance", "verdict"], rows)
    manifest.summary = {"gap": res.gap, "allowance": allowance, "clipped_mass": res.clipped_mass}
    return EXIT_OK if ok else EXIT_CHECK_FAILED


_HANDLERS = {
    "simulate": _run_simulate,
    "simulate-sde": _run_simulate_sde,
    "kernels": _run_kernels,
    "moments-check": _run_moments_check,
    "coexistence": _run_coexistence,
    "fss": _run_fss,
    "duality-check": _run_duality,
}


# --- plotting scripts ------------------------------------------------------

class PlotSchemaError(ValueError):
    pass


PLOT_COLUMNS = {
    "moments": ["formula", "t", "oracle", "mc_estimate", "mc_stderr"],
    "coexistence": ["horizon", "estimate", "stderr"],
    "fss": ["n", "a", "b", "gap_abs", "combined_stderr"],
}

_PLOT_PRELUDE = '''"""Plot {kind} results from {csv_name} (generated by catbranch)."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

CSV = Path(__file__).with_name({csv_name!r}) if len(sys.argv) < 2 else Path(sys.argv[1])


def rows():
    with open(CSV) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


data = rows()
fig, ax = plt.subplots()
'''

_PLOT_BODIES = {
    "moments": '''oracle = [float(r["oracle"]) for r in data]
est = [float(r["mc_estimate"]) for r in data]
err = [3 * float(r["mc_stderr"]) for r in data]
ax.errorbar(oracle, est, yerr=err, fmt="o", capsize=3, label="Monte Carlo (3 sigma)")
lo, hi = min(oracle + est), max(oracle + est)
ax.plot([lo, hi], [lo, hi], "k--", lw=1, label="oracle = estimate")
for r, x, y in zip(data, oracle, est):
    ax.annotate(f'{r["formula"]} t={r["t"]}', (x, y), fontsize=6)
ax.set_xlabel("closed-form value")
ax.set_ylabel("Monte Carlo estimate")
''',
    "coexistence": '''h = [float(r["horizon"]) for r in data]
p = [float(r["estimate"]) for r in data]
err = [3 * float(r["stderr"]) for r in data]
ax.errorbar(h, p, yerr=err, fmt="o-", capsize=3)
ax.set_xlabel("horizon")
ax.set_ylabel("P(both types alive)")
ax.set_ylim(bottom=0)
''',
    "fss": '''series = {}
for r in data:
    series.setdefault((r["a"], r["b"]), []).append((int(r["n"]), float(r["gap_abs"]), 3 * float(r["combined_stderr"])))
for (a, b), pts in sorted(series.items()):
    pts.sort()
    ax.errorbar([p[0] for p in pts], [p[1] for p in pts], yerr=[p[2] for p in pts], fmt="o-", capsize=3,
                label=f"a={a}, b={b}")
ax.set_xlabel("torus half-width n")
ax.set_ylabel("|particle transform - limit transform|")
ax.legend(fontsize=6)
''',
}

_PLOT_EPILOGUE = '''ax.set_title({title!r})
fig.tight_layout()
fig.savefig(CSV.with_suffix(".png"), dpi=150)
'''


def read_csv_columns(path) -> list:
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                return next(csv.reader([line]))
    return []


def emit_plot_script(csv_path, kind: str, out_path=None) -> Path:
    """Write a standalone matplotlib script for ``csv_path``; nothing is rendered here."""
    if kind not in PLOT_COLUMNS:
        raise PlotSchemaError(f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_COLUMNS)}")
    csv_path = Path(csv_path)
    columns = read_csv_columns(csv_path)
    missing = [c for c in PLOT_COLUMNS[kind] if c not in columns]
    if missing:
        raise PlotSchemaError(f"{csv_path.name} lacks columns required for a {kind} plot: {', '.join(missing)}")
    out_path = Path(out_path) if out_path else csv_path.with_name(f"plot_{kind}.py")
    titles = {"moments": "closed-form moments vs Monte Carlo", "coexistence": "coexistence probability vs horizon",
              "fss": "finite-system-scheme gap vs n"}
    script = (_PLOT_PRELUDE.format(kind=kind, csv_name=csv_path.name) + _PLOT_BODIES[kind]
              + _PLOT_EPILOGUE.format(title=titles[kind]))
    out_path.write_text(script)
    return out_path
