"""Command-line runner: ``sqe2d <subcommand> [--config FILE] [--set key=value ...]``.

Every subcommand writes ``<subcommand>.csv``, ``<subcommand>.schema.json``,
``<subcommand>.cfg`` (the resolved config, loadable with ``--config``) and a
plotting stub into the output directory. CSV files start with ``#`` lines
holding the resolved config, then a header row; floats carry 17 significant
digits. Exit codes: 0 ok, 1 ``--check`` failure, 2 invalid config, 3 numeric
abort.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import verification as ver
from .gaussian import Diagnostics, renorm_constant, sample_gff
from .rng import ReplicaStreams
from .spectral import Grid, SpectralCutoff, Spectrum, inverse_transform, sobolev_norm

OUT_ENV = "SQE2D_OUT"
EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 1, 2, 3

SUBCOMMANDS = ("sample-gff", "simulate", "converge-n", "verify-wick", "sn-decay", "invariance", "ibp", "comparison", "contraction")


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s):
    return None if str(s).lower() in ("", "none", "auto") else int(s)


def _opt_float(s):
    return None if str(s).lower() in ("", "none", "auto") else float(s)


def _floats(s) -> tuple[float, ...]:
    return tuple(float(x) for x in str(s).split(",") if x.strip())


def _ints(s) -> tuple[int, ...]:
    return tuple(int(x) for x in str(s).split(",") if x.strip())


# key: (parser, default, help)
KEYS: dict[str, tuple] = {
    "measure": (str, "sinh", "interaction preset: exp (delta_alpha), sinh ((delta_alpha + delta_-alpha)/2), uniform (flat density), zero, atoms"),
    "alpha": (float, 1.0, "coupling of the exp and sinh presets"),
    "alpha0": (_opt_float, None, "support radius of nu; defaults to the largest |atom| (uniform: required)"),
    "mass": (float, 1.0, "total mass of nu for the presets"),
    "atoms": (str, "", "explicit atoms for measure=atoms, as 'a:w,a:w'"),
    "quad_nodes": (int, 16, "Gauss-Legendre nodes for a density part"),
    "A": (float, 2.0, "cutoff base: P_N keeps |l| <= A^N"),
    "N": (int, 2, "cutoff level"),
    "N_min": (int, 1, "first level of a cutoff schedule"),
    "N_max": (int, 4, "last level of a cutoff schedule"),
    "M": (_opt_int, None, "grid size (auto: power of two >= oversample * A^N)"),
    "oversample": (float, 4.0, "grid oversampling factor for the automatic grid"),
    "dt": (_opt_float, None, "time step (auto: 1e-3 * min(1, 8 / A^N))"),
    "T": (float, 1.0, "time horizon"),
    "output_every": (float, 0.01, "output cadence in time units"),
    "beta": (float, 0.5, "Sobolev index: norms are taken in H^-beta"),
    "epsilon": (float, 0.1, "S_N norm is H^(-1+epsilon)"),
    "p": (float, 2.0, "S_N base exponent; p(alpha) = p alpha0 / |alpha|"),
    "kappa": (float, 1.0, "S_N weight C(alpha) = kappa |alpha|"),
    "seed": (int, 0, "master seed"),
    "seeds": (int, 10, "number of seeds for per-seed studies (seed, seed+1, ...)"),
    "replicas": (int, 1, "replicas per run"),
    "block_size": (int, 1, "replicas per random stream"),
    "samples": (int, 10_000, "Monte Carlo sample count"),
    "drift_projected": (_bool, False, "apply P_N to the drift"),
    "project_exponent": (_bool, True, "use exp(alpha P_N Phi) rather than exp(alpha Phi) in the drift"),
    "clamp": (float, 50.0, "bound on the exponent inside exp"),
    "init": (str, "gff", "initial law of the linear part: gff or zero"),
    "eta_sup": (float, 1.0, "sup norm of the smooth initial datum eta (0 disables it)"),
    "eta_radius": (float, 3.0, "Fourier radius of eta and of perturbations"),
    "perturbation_sup": (float, 0.5, "sup norm of the perturbation eta' - eta"),
    "alphas": (_floats, (1.0, -2.0, 2.5), "couplings for verify-wick"),
    "wick_levels": (_ints, (0, 2, 3), "cutoff levels for verify-wick normalization"),
    "wick_n_max": (int, 4, "highest Wick power in verify-wick"),
    "times": (_floats, (), "evaluation times for invariance (default T and 2T)"),
    "sn_replicas": (int, 400, "draws per level in sn-decay"),
    "sn_block": (int, 16, "replicas per stream in sn-decay"),
    "floor": (float, 1e-3, "minimum rejection-sampling acceptance rate"),
    "workers": (int, 1, "worker processes for replica blocks"),
    "snapshots": (_bool, False, "write binary snapshots of replica 0"),
}

# per-subcommand defaults layered over KEYS
DEFAULTS: dict[str, dict] = {
    "sample-gff": {"replicas": 64},
    "simulate": {"measure": "zero", "T": 0.1, "replicas": 2},
    "converge-n": {"N_max": 4, "seeds": 10},
    "sn-decay": {"A": 3.0, "oversample": 2.0},
    "invariance": {"N": 0, "dt": 1e-3, "drift_projected": True, "samples": 10_000},
    "ibp": {"N": 0, "samples": 20_000},
    "comparison": {"measure": "exp"},
    "contraction": {"measure": "sinh"},
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for i, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {i}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def resolve(command: str, raw: dict[str, str]) -> dict:
    cfg = {k: d for k, (_, d, _) in KEYS.items()}
    cfg.update(DEFAULTS.get(command, {}))
    for k, v in raw.items():
        if k not in KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        try:
            cfg[k] = KEYS[k][0](v)
        except ValueError as e:
            raise ConfigError(f"bad value for {k}: {e}") from None
    return cfg


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return "none" if v is None else str(v)


def build_measure(cfg: dict) -> dyn.WeightedMeasure:
    kind, a, m = cfg["measure"], cfg["alpha"], cfg["mass"]
    if kind == "exp":
        nu = dyn.exp_model(a, m)
    elif kind == "sinh":
        nu = dyn.sinh_model(a, m)
    elif kind == "uniform":
        if cfg["alpha0"] is None:
            raise ConfigError("measure=uniform needs alpha0")
        nu = dyn.uniform_model(cfg["alpha0"], m, cfg["quad_nodes"])
    elif kind == "zero":
        nu = dyn.zero_model(cfg["alpha0"] or 1.0)
    elif kind == "atoms":
        pairs = []
        for item in cfg["atoms"].split(","):
            if item.strip():
                x, w = item.split(":")
                pairs.append((float(x), float(w)))
        if not pairs:
            raise ConfigError("measure=atoms needs atoms")
        alpha0 = cfg["alpha0"] or max(abs(x) for x, _ in pairs)
        nu = dyn.WeightedMeasure(alpha0, tuple(pairs))
    else:
        raise ConfigError(f"unknown measure {kind!r}")
    if cfg["alpha0"] is not None and kind in ("exp", "sinh") and not math.isclose(cfg["alpha0"], abs(a)):
        nu = dyn.WeightedMeasure(cfg["alpha0"], nu.atoms)
    if not nu.l1_regime:
        raise ConfigError(f"alpha0^2 = {nu.alpha0**2:.6g} is outside the L^1 regime (< 8 pi)")
    return nu


def run_config(cfg: dict, **over) -> dyn.RunConfig:
    keys = ("M", "A", "N", "dt", "T", "beta", "epsilon", "seed", "replicas", "block_size",
            "drift_projected", "project_exponent", "clamp", "init", "output_every", "oversample")
    kw = {k: cfg[k] for k in keys}
    kw.update(over)
    return dyn.RunConfig(**kw)


# --- artifacts -----------------------------------------------------------------


@dataclass(frozen=True)
class SnapshotFile:
    """Binary field snapshot: fixed little-endian header, then M*M float64 values row-major."""

    M: int
    A: float
    N: int
    time: float
    seed: int
    digest: bytes
    values: np.ndarray

    MAGIC = b"SQE2DSNP"
    VERSION = 1
    HEADER = struct.Struct("<8sIIdIdQ32s")

    def to_bytes(self) -> bytes:
        v = np.ascontiguousarray(self.values, dtype="<f8")
        if v.shape != (self.M, self.M):
            raise ValueError(f"values must have shape ({self.M}, {self.M})")
        head = self.HEADER.pack(self.MAGIC, self.VERSION, self.M, self.A, self.N, self.time, self.seed, self.digest)
        return head + v.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "SnapshotFile":
        h = cls.HEADER
        magic, version, M, A, N, t, seed, digest = h.unpack_from(data)
        if magic != cls.MAGIC or version != cls.VERSION:
            raise ValueError("not a version-1 snapshot")
        if len(data) != h.size + 8 * M * M:
            raise ValueError("payload length does not match M^2")
        vals = np.frombuffer(data, dtype="<f8", offset=h.size).reshape(M, M)
        return cls(M, A, N, t, seed, digest, vals)

    def write(self, path: Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path: Path) -> "SnapshotFile":
        return cls.from_bytes(Path(path).read_bytes())


class Output:
    def __init__(self, root: Path, command: str, cfg: dict):
        self.root, self.command, self.cfg = Path(root), command, cfg
        self.root.mkdir(parents=True, exist_ok=True)

    def preamble(self) -> list[str]:
        return [f"# command={self.command}"] + [f"# {k}={format_value(v)}" for k, v in sorted(self.cfg.items())]

    def table(self, name: str, columns: list[tuple[str, str]], rows: list[list]) -> Path:
        """Write a CSV and its schema; ``columns`` pairs names with descriptions."""
        buf = io.StringIO()
        buf.write("\n".join(self.preamble()) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([c for c, _ in columns])
        for r in rows:
            w.writerow([format_value(float(x)) if isinstance(x, (float, np.floating)) else format_value(x) for x in r])
        path = self.root / f"{name}.csv"
        path.write_text(buf.getvalue(), encoding="utf-8")
        schema = {"file": path.name, "comment_prefix": "#", "separator": ",",
                  "columns": [{"name": c, "description": d} for c, d in columns]}
        (self.root / f"{name}.schema.json").write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self._plot_stub(name, [c for c, _ in columns])
        return path

    def _plot_stub(self, name: str, cols: list[str]) -> None:
        x, y = cols[0], cols[-1]
        stub = (
            "import matplotlib.pyplot as plt\n"
            "import pandas as pd\n\n"
            f'df = pd.read_csv("{name}.csv", comment="#")\n'
            f'df.plot(x="{x}", y="{y}", marker="o")\n'
            f'plt.savefig("{name}.png")\n'
        )
        (self.root / f"plot_{name}.py").write_text(stub, encoding="utf-8")

    def config(self) -> None:
        text = "".join(f"{k} = {format_value(v)}\n" for k, v in sorted(self.cfg.items()))
        (self.root / f"{self.command}.cfg").write_text(text, encoding="utf-8")

    def snapshot(self, tag: str, phi: Spectrum, c: SpectralCutoff, t: float, seed: int, nu: dyn.WeightedMeasure) -> None:
        v = inverse_transform(phi)
        snap = SnapshotFile(phi.grid.M, float(c.A), int(c.N), float(t), int(seed), nu.digest(), v)
        d = self.root / "snapshots"
        d.mkdir(exist_ok=True)
        snap.write(d / f"{self.command}_{tag}.bin")


# --- subcommands -----------------------------------------------------------------
# each returns (check results or None); a check result is a list of (name, passed, detail)


def cmd_sample_gff(cfg, out: Output):
    c = SpectralCutoff(cfg["A"], cfg["N"])
    grid = Grid(cfg["M"]) if cfg["M"] else Grid.for_cutoff(c, cfg["oversample"])
    if not grid.resolves(c):
        raise ConfigError(f"grid M={grid.M} does not resolve K={c.K}")
    R = cfg["replicas"]
    phi = sample_gff(ReplicaStreams(cfg["seed"], R, cfg["block_size"]), c, grid, size=R)
    v = inverse_transform(phi)
    rows = []
    norms = np.atleast_1d(sobolev_norm(phi, -cfg["beta"]))
    for r in range(R):
        rows.append([cfg["seed"], r, float(v[r].mean()), float(v[r].var()), float(norms[r])])
    out.table("sample-gff", [
        ("seed", "master seed"), ("replica", "replica index"),
        ("mean", "grid average of the field"), ("variance", "grid variance of the field"),
        ("norm_h_minus_beta", "H^-beta norm"),
    ], rows)
    if cfg["snapshots"]:
        out.snapshot("r0", phi[0], c, 0.0, cfg["seed"], dyn.zero_model())
    C = renorm_constant(c)
    if R < 2:
        return None
    # every grid point has variance C_N, so the spatial mean of phi^2 does too
    var = ver.MCEstimate.from_samples(np.mean(v**2, axis=(-2, -1)))
    return [("pointwise_variance", var.within(C), f"mean phi^2 = {var.mean:.6g} +- {var.std_error:.3g}, C_N = {C:.6g}")]


def cmd_simulate(cfg, out: Output):
    nu = build_measure(cfg)
    rc = run_config(cfg)
    if cfg["eta_sup"] > 0 and cfg["init"] == "zero":
        rc = run_config(cfg, eta=dyn.smooth_field(rc.grid, cfg["seed"], cfg["eta_radius"], cfg["eta_sup"]))
    diag = Diagnostics()
    rows = []
    for s in dyn.trajectory(rc, nu, diagnostics=diag):
        v = inverse_transform(s.phi)
        norms = np.atleast_1d(sobolev_norm(s.phi, -cfg["beta"]))
        for r in range(rc.replicas):
            rows.append([cfg["seed"], r, s.time, float(v[r].mean()), float(v[r].max()), float(v[r].min()), float(norms[r])])
        if cfg["snapshots"]:
            out.snapshot(f"t{len(rows) // rc.replicas - 1:05d}", s.phi[0], rc.cutoff, s.time, cfg["seed"], nu)
    out.table("simulate", [
        ("seed", "master seed"), ("replica", "replica index"), ("time", "output time"),
        ("mean", "grid average of Phi"), ("max", "grid maximum of Phi"), ("min", "grid minimum of Phi"),
        ("norm_h_minus_beta", "H^-beta norm of Phi"),
    ], rows)
    return [("clamp_events", diag.clamped == 0, f"{diag.clamped} of {diag.evaluated} exponents clamped")]


def cmd_converge_n(cfg, out: Output):
    nu = build_measure(cfg)
    levels = list(range(cfg["N_min"], cfg["N_max"] + 2))
    rows, decreasing = [], 0
    for k in range(cfg["seeds"]):
        seed = cfg["seed"] + k
        rc = run_config(cfg, N=levels[0], seed=seed, replicas=1)
        d = dyn.coupled_cutoff_differences(rc, nu, levels)[0]
        ok = bool(np.all(np.diff(d) < 0))
        decreasing += ok
        for N, x in zip(levels[:-1], d):
            rows.append([seed, N, cfg["A"] ** N, float(x), ok])
    out.table("converge-n", [
        ("seed", "seed of the coupled run"), ("N", "cutoff level"), ("K", "cutoff radius A^N"),
        ("sup_diff", "sup over output times of ||Phi^(N+1) - Phi^N|| in H^-beta"),
        ("strictly_decreasing", "whether this seed's sup_diff column strictly decreases in N"),
    ], rows)
    need = math.ceil(0.8 * cfg["seeds"])
    return [("cauchy_in_N", decreasing >= need, f"{decreasing} of {cfg['seeds']} seeds strictly decreasing (need {need})")]


def cmd_verify_wick(cfg, out: Output):
    rows, checks = [], []
    n = cfg["samples"]
    for a in cfg["alphas"]:
        for lev in cfg["wick_levels"]:
            c = SpectralCutoff(cfg["A"], lev)
            e = ver.wick_exp_point_mc(a, c, n, cfg["seed"])
            ok = e.within(1.0)
            rows.append(["exp", a, lev, c.K, e.mean, e.std_error, 1.0, e.replicas])
            checks.append((f"wick_exp alpha={a:g} K={c.K:g}", ok, f"z={e.z_score(1.0):.3g}"))
    c = SpectralCutoff(cfg["A"], cfg["N"])
    for k in range(1, cfg["wick_n_max"] + 1):
        e, target = ver.wick_power_moment_mc(k, c, n, cfg["seed"])
        rows.append([f"power{k}", 0.0, cfg["N"], c.K, e.mean, e.std_error, target, e.replicas])
        checks.append((f"wick_power n={k} K={c.K:g}", e.within(target), f"z={e.z_score(target):.3g}"))
    e, target = ver.wick_diff_norm_mc(cfg["alpha"], c, cfg["beta"], n, cfg["seed"])
    rows.append(["diff_norm", cfg["alpha"], cfg["N"], c.K, e.mean, e.std_error, target, e.replicas])
    checks.append((f"oracle alpha={cfg['alpha']:g} N={cfg['N']}", e.within(target), f"z={e.z_score(target):.3g}"))
    out.table("verify-wick", [
        ("kind", "exp: exp_N(alpha phi)(0); powerK: mean of :phi^K:^2; diff_norm: E||exp_(N+1) - exp_N||^2 in H^-beta"),
        ("alpha", "coupling"), ("N", "cutoff level"), ("K", "cutoff radius"),
        ("mean", "Monte Carlo mean"), ("std_error", "Monte Carlo standard error"),
        ("target", "exact value"), ("replicas", "sample count"),
    ], rows)
    return checks


def cmd_sn_decay(cfg, out: Output):
    nu = build_measure(cfg)
    sc = ver.SnConfig(cfg["p"], cfg["epsilon"], cfg["kappa"], cfg["A"], cfg["N_min"], cfg["N_max"],
                      cfg["T"], cfg["sn_replicas"], cfg["oversample"], cfg["sn_block"])
    res = ver.sn_statistic(sc, nu, cfg["seed"], cfg["workers"])
    rows = []
    for i, (N, e) in enumerate(zip(res.levels, res.estimates)):
        o = res.oracle[i] if res.oracle else math.nan
        rows.append([N, cfg["A"] ** N, e.mean, e.std_error, o, e.replicas, res.ratio, res.ratio_se])
    out.table("sn-decay", [
        ("N", "cutoff level"), ("K", "cutoff radius"), ("mean", "MC estimate of E[S_N]"),
        ("std_error", "standard error"), ("oracle", "exact E[S_N] when every p(alpha) = 2, else nan"),
        ("replicas", "draws"), ("fitted_ratio", "exp(slope) of log-mean against N"),
        ("ratio_se", "bootstrap standard deviation of the fitted ratio"),
    ], rows)
    checks = [("sn_decay", res.decays, f"ratio={res.ratio:.4g} se={res.ratio_se:.3g}")]
    if res.oracle:
        for N, e, o in zip(res.levels, res.estimates, res.oracle):
            checks.append((f"sn_oracle N={N}", e.within(o), f"z={e.z_score(o):.3g}"))
    return checks


def cmd_invariance(cfg, out: Output):
    nu = build_measure(cfg)
    rc = run_config(cfg, replicas=1)
    times = cfg["times"] or (cfg["T"], 2 * cfg["T"])
    obs = ver.invariance_observables(rc.grid)
    res = ver.invariance_test(nu, rc, obs, cfg["seed"], cfg["samples"], times, workers=cfg["workers"], floor=cfg["floor"])
    rows, checks = [], []
    for r in res:
        for t, f, d in zip(times, r.final, r.difference):
            rows.append([r.name, t, r.initial.mean, r.initial.std_error, f.mean, f.std_error, d.mean, d.std_error, d.replicas])
        checks.append((f"invariance {r.name}", r.agrees(), " ".join(f"z={d.z_score(0):.3g}" for d in r.difference)))
    out.table("invariance", [
        ("observable", "cylindrical functional"), ("time", "evolution time"),
        ("mean_0", "mean at t = 0"), ("se_0", "its standard error"),
        ("mean_t", "mean at time t"), ("se_t", "its standard error"),
        ("paired_diff", "mean of F(phi_t) - F(phi_0)"), ("paired_se", "its standard error"), ("replicas", "replicas"),
    ], rows)
    return checks


def ibp_pairs(grid: Grid) -> list[tuple[str, ver.CylindricalFunctional, ver.CylindricalFunctional]]:
    e0 = ver.mode_direction(grid, (0, 0))
    c10 = ver.mode_direction(grid, (1, 0))
    s01 = ver.mode_direction(grid, (0, 1), "sin")
    mix = Spectrum((c10.coeffs + e0.coeffs) / math.sqrt(2))
    return [
        ("linear_linear", ver.CylindricalFunctional(ver.Linear(), (c10,)), ver.CylindricalFunctional(ver.Linear(), (c10,))),
        ("sin_cos", ver.CylindricalFunctional(ver.Sin(), (c10,)), ver.CylindricalFunctional(ver.Cos(), (mix,))),
        ("cos_sum_square", ver.CylindricalFunctional(ver.CosOfSum(), (e0, s01)), ver.CylindricalFunctional(ver.Square(), (mix,))),
    ]


def cmd_ibp(cfg, out: Output):
    nu = build_measure(cfg)
    c = SpectralCutoff(cfg["A"], cfg["N"])
    grid = Grid(cfg["M"]) if cfg["M"] else Grid.for_cutoff(c, cfg["oversample"])
    rows, checks = [], []
    for label, measure in (("zero", dyn.zero_model()), (cfg["measure"], nu)):
        for name, F, G in ibp_pairs(grid):
            r = ver.dirichlet_ibp_check(F, G, measure, c, grid, cfg["seed"], cfg["samples"], workers=cfg["workers"], floor=cfg["floor"])
            rows.append([label, name, r.defect.mean, r.defect.std_error, r.energy.mean, r.generator_term.mean, r.defect.replicas])
            checks.append((f"ibp {label} {name}", r.defect.within(0.0), f"z={r.defect.z_score(0):.3g}"))
    out.table("ibp", [
        ("measure", "interaction"), ("pair", "(F, G) pair"),
        ("defect", "MC mean of 1/2 <DF, DG> + G L F"), ("defect_se", "its standard error"),
        ("energy", "MC mean of 1/2 <DF, DG>"), ("generator_term", "MC mean of G L F"), ("replicas", "samples"),
    ], rows)
    return checks


def _remainder_runs(cfg, nu, etas_for_seed):
    for k in range(cfg["seeds"]):
        seed = cfg["seed"] + k
        rc = run_config(cfg, seed=seed, replicas=1)
        yield seed, rc, list(dyn.coupled_remainders(rc, nu, etas_for_seed(rc.grid, seed)))


def cmd_comparison(cfg, out: Output):
    nu = build_measure(cfg)
    rows, checks = [], []
    for seed, rc, path in _remainder_runs(cfg, nu, lambda g, s: [dyn.smooth_field(g, s, cfg["eta_radius"], cfg["eta_sup"])]):
        eta = dyn.smooth_field(rc.grid, seed, cfg["eta_radius"], cfg["eta_sup"])
        ts = [t for t, _, _ in path]
        ys = [y[0] for _, _, y in path]
        b = ver.comparison_bound_check(ts, ys, nu, eta, rc.time_step)
        s = nu.sign or 1
        for t, y, v in zip(ts, ys, b.violations):
            rows.append([seed, t, float(np.max(s * inverse_transform(y))), float(np.max(v))])
        checks.append((f"comparison seed={seed}", b.ok, f"max violation {b.max_violation:.3g}"))
    out.table("comparison", [
        ("seed", "seed"), ("time", "output time"), ("max_sY", "max over the grid of sign(nu) Y_t"),
        ("violation", "max_sY - (||eta||_inf + 10 dt t); <= 0 passes"),
    ], rows)
    return checks


def cmd_contraction(cfg, out: Output):
    nu = build_measure(cfg)

    def etas(grid, seed):
        eta = dyn.smooth_field(grid, seed, cfg["eta_radius"], cfg["eta_sup"])
        pert = dyn.smooth_field(grid, seed + 1_000_003, cfg["eta_radius"], cfg["perturbation_sup"])
        return [eta, eta + pert]

    rows, checks = [], []
    for seed, rc, path in _remainder_runs(cfg, nu, etas):
        ts = [t for t, _, _ in path]
        vals = [float(ver.contraction_functional(inverse_transform(y[0] - y[1]))[0]) for _, _, y in path]
        b = ver.contraction_check(ts, vals, rc.time_step)
        for i, (t, v) in enumerate(zip(ts, vals)):
            rows.append([seed, t, v, float(b.violations[i - 1]) if i else math.nan])
        checks.append((f"contraction seed={seed}", b.ok, f"max excess {b.max_violation:.3g}"))
    out.table("contraction", [
        ("seed", "seed"), ("time", "output time"), ("value", "int Z arctan Z dx, Z = Y - Y'"),
        ("excess", "increment since the previous output minus 10 dt (t_k - t_(k-1)); <= 0 passes"),
    ], rows)
    return checks


COMMANDS = {
    "sample-gff": cmd_sample_gff,
    "simulate": cmd_simulate,
    "converge-n": cmd_converge_n,
    "verify-wick": cmd_verify_wick,
    "sn-decay": cmd_sn_decay,
    "invariance": cmd_invariance,
    "ibp": cmd_ibp,
    "comparison": cmd_comparison,
    "contraction": cmd_contraction,
}


def _key_help() -> str:
    lines = ["config keys (file lines or --set key=value):"]
    for k, (_, d, h) in KEYS.items():
        lines.append(f"  {k:<18} {h} [default: {format_value(d)}]")
    lines.append("per-subcommand defaults:")
    for c, d in DEFAULTS.items():
        lines.append(f"  {c:<18} " + ", ".join(f"{k}={format_value(v)}" for k, v in d.items()))
    lines.append(f"output directory: --out, else ${OUT_ENV}, else ./sqe2d_out")
    lines.append("exit codes: 0 ok, 1 --check failure, 2 invalid config, 3 numeric abort")
    return "\n".join(lines)


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sqe2d", description="Simulate and verify the truncated exponential-interaction quantization equation.",
                                formatter_class=argparse.RawDescriptionHelpFormatter, epilog=_key_help())
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="flat key = value file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--check", action="store_true", help="evaluate the subcommand's checks, write check.json, exit 1 on failure")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        raw = parse_config_text(args.config.read_text()) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            raw[k.strip()] = v.strip()
        cfg = resolve(args.command, raw)
        root = args.out or Path(os.environ.get(OUT_ENV, "sqe2d_out"))
        out = Output(root / args.command, args.command, cfg)
        out.config()
        checks = COMMANDS[args.command](cfg, out)
    except dyn.NumericalAbort as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError, ver.AcceptanceCollapse) as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.check:
        return 0
    checks = checks or []
    report = {"command": args.command, "seed": cfg["seed"],
              "passed": all(ok for _, ok, _ in checks),
              "checks": [{"name": n, "passed": bool(ok), "detail": d} for n, ok, d in checks]}
    (out.root / "check.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    for n, ok, d in checks:
        print(f"{'PASS' if ok else 'FAIL'} {n}: {d}")
    return 0 if report["passed"] else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
