"""Experiment orchestration: sweep stages, result bundles, reports and plot scripts.

A bundle is a directory holding ``manifest.json`` and one CSV per stage.
Each CSV starts with a ``# config_sha256=...`` comment line followed by a
header row; floats are written with 17 significant digits.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import warnings
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import curie_weiss as cw
from . import gibbs
from .config import ExperimentConfig
from .hopf_lax import hopf_lax_eval
from .scalar_channel import PsiCurve, tabulate_psi
from .viscosity_pde import max_speed_bound, solve_hj

CSV_FILES = {
    "psi": "psi.csv",
    "limit": "limit.csv",
    "finite-n": "finite_n.csv",
    "curie-weiss": "curie_weiss.csv",
}
MANIFEST = "manifest.json"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def format_csv(columns: list[str], rows, config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_sha256={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        values = [row[c] for c in columns] if isinstance(row, dict) else row
        w.writerow([_fmt(x) for x in values])
    return buf.getvalue()


def write_csv(path: Path, columns, rows, config_hash: str):
    Path(path).write_text(format_csv(list(columns), rows, config_hash))


def read_csv(path) -> dict[str, np.ndarray]:
    """Columns of a bundle CSV as float arrays (comment lines skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    data = [[float(x) for x in r] for r in reader if r]
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


def csv_config_hash(path) -> str:
    with open(path) as fh:
        first = fh.readline().strip()
    return first.split("=", 1)[1] if first.startswith("# config_sha256=") else ""


# ---------------------------------------------------------------------------
# Stages


def psi_curve_for(config: ExperimentConfig) -> PsiCurve:
    prior = config.prior_obj
    L = prior.bound ** 2
    if config.psi_h_max is not None:
        h_top = config.psi_h_max
    elif config.p == 2:
        h_top = config.limit_h_max + 4.0 * config.limit_t_max * L + 1.0
    else:
        h_top = config.limit_h_max + max_speed_bound(config.p, L) * config.limit_t_max + 1.0
    n = int(math.ceil(h_top / config.psi_dh)) + 1
    return tabulate_psi(prior, (n - 1) * config.psi_dh, n, config.quad_order)


def stage_psi(config: ExperimentConfig, curve: PsiCurve):
    cols = ["h", "psi", "psi_prime"]
    rows = list(zip(curve.h_grid, curve.psi_values, curve.psi_prime_values))
    return cols, rows


def limit_solver_name(p: int) -> str:
    return "hopf-lax" if p == 2 else "pde-llf"


def stage_limit(config: ExperimentConfig, curve: PsiCurve):
    """Limit ``f`` on the ``[0, M]^2`` grid: Hopf-Lax for p = 2, the PDE otherwise."""
    axis = config.grid_axis
    cols = ["t", "h", "f", "maximizer"]
    rows = []
    if config.p == 2:
        for t in axis:
            for h in axis:
                r = hopf_lax_eval(curve, float(t), float(h))
                rows.append((float(t), float(h), r.value, r.maximizer))
        return cols, rows
    n_cells = int(math.ceil(config.limit_h_max / config.dh - 1e-9))
    grid = solve_hj(curve, config.p, config.limit_t_max, n_cells * config.dh, config.dh,
                    config.cfl, t_slices=axis)
    for t in axis:
        f_t = grid.at(float(t))
        for h in axis:
            rows.append((float(t), float(h), float(np.interp(h, grid.h_grid, f_t)), float("nan")))
    return cols, rows


def stage_hopflax(config: ExperimentConfig, curve: PsiCurve):
    if config.p != 2:
        raise ValueError(f"the Hopf-Lax formula is implemented for p = 2 only (p = {config.p})")
    return stage_limit(config, curve)


def stage_pde(config: ExperimentConfig, curve: PsiCurve):
    """All PDE nodes of ``[0, h_max]`` at the grid's t-slices."""
    n_cells = int(math.ceil(config.limit_h_max / config.dh - 1e-9))
    grid = solve_hj(curve, config.p, config.limit_t_max, n_cells * config.dh, config.dh,
                    config.cfl, t_slices=np.linspace(0.0, config.limit_t_max, int(config.resolution)))
    rows = [(float(t), float(h), float(v))
            for t, f_t in zip(grid.t_grid, grid.values) for h, v in zip(grid.h_grid, f_t)]
    return ["t", "h", "f"], rows


def stage_finite_n(config: ExperimentConfig):
    prior = config.prior_obj
    pts = gibbs.square_grid(config.M, config.resolution)
    prefix = "hj" if config.p == 2 else "tensor"
    rows, cols = [], None
    for N in config.N:
        tab = gibbs.sample_table(prior, N, config.p, pts, config.n_samples,
                                 config.base_seed, config.threads, budget=config.budget)
        reports = gibbs.reports_from_table(tab)
        resid = gibbs.hj_residual_from_table(tab)
        for rep, res in zip(reports, resid):
            row = rep.as_row()
            bound = res.bound_terms
            row.update({
                f"{prefix}_lhs": res.lhs.value, f"{prefix}_lhs_se": res.lhs.se,
                f"{prefix}_rhs": res.rhs.value, f"{prefix}_rhs_se": res.rhs.se,
                f"{prefix}_diff": res.difference.value, f"{prefix}_se": res.difference.se,
                f"{prefix}_bound": bound.value if bound else float("nan"),
                f"{prefix}_bound_se": bound.se if bound else float("nan"),
                f"{prefix}_within_bound": int(bool(res.within_bound)) if bound else -1,
            })
            cols = cols or list(row)
            rows.append(row)
    return cols, rows


def stage_curie_weiss(config: ExperimentConfig):
    axis = config.grid_axis
    cols = ["N", "t", "h", "F", "residual_exact", "residual_fd", "f_limit"]
    rows = []
    for N in config.cw_N:
        for t in axis:
            for h in axis:
                rec = cw.cw_free_energy(N, float(t), float(h))
                if t >= config.fd_delta:
                    ex, fd = cw.cw_identity_check(N, float(t), float(h), config.fd_delta)
                else:
                    ex, fd = abs(rec.dF_dt - rec.dF_dh ** 2 - rec.d2F_dh2 / N), float("nan")
                rows.append((N, float(t), float(h), rec.F, ex, fd, cw.cw_limit_eval(float(t), float(h))))
    return cols, rows


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"artifact": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _run(stage, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc


_NEEDS_CURVE = {"psi": stage_psi, "limit": stage_limit, "hopflax": stage_hopflax, "pde": stage_pde}
_NO_CURVE = {"finite-n": stage_finite_n, "curie-weiss": stage_curie_weiss}


def stage_table(config: ExperimentConfig, stage: str, curve: PsiCurve | None = None):
    """``(columns, rows)`` of one stage."""
    if stage in _NEEDS_CURVE:
        if curve is None:
            curve = _run("psi", psi_curve_for, config)
        return _run(stage, _NEEDS_CURVE[stage], config, curve)
    if stage in _NO_CURVE:
        return _run(stage, _NO_CURVE[stage], config)
    raise StageError(stage, ValueError("unknown stage"))


def stage_csv(config: ExperimentConfig, stage: str, curve: PsiCurve | None = None) -> str:
    cols, rows = stage_table(config, stage, curve)
    return format_csv(cols, rows, config.sha256())


def run_stage(config: ExperimentConfig, stage: str, out_dir, curve: PsiCurve | None = None) -> Path:
    """Run one stage and write its CSV into ``out_dir``; returns the CSV path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / CSV_FILES.get(stage, stage.replace("-", "_") + ".csv")
    path.write_text(stage_csv(config, stage, curve))
    return path


def run_sweep(config: ExperimentConfig, out_dir=None) -> Path:
    """Run the configured stages in order and write the bundle; returns its directory."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve = None
    if "psi" in config.stages or "limit" in config.stages:
        curve = _run("psi", psi_curve_for, config)
    files = {}
    for stage in [s for s in ("psi", "limit", "finite-n", "curie-weiss") if s in config.stages]:
        path = run_stage(config, stage, out, curve)
        files[path.name] = _sha256(path)
    manifest = {
        "config": config.result_dict(),
        "config_sha256": config.sha256(),
        "stages": [s for s in ("psi", "limit", "finite-n", "curie-weiss") if s in config.stages],
        "seeds": {"base_seed": config.base_seed,
                  "scheme": "sample i uses SeedSequence(base_seed, spawn_key=(i,)) -> Philox; "
                            "draw order xbar, W, z; same base_seed for every N"},
        "limit_solver": limit_solver_name(config.p),
        "versions": _versions(),
        "files": files,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_manifest(bundle) -> dict:
    path = Path(bundle) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no manifest in {bundle}")
    return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    sup_abs_bias: float        # sup over the grid of |Fbar_N - f|
    sup_abs_bias_se: float     # standard error at the argmax
    sup_mse: float             # sup over the grid of E (F_N - f)^2 = Var + bias^2
    argmax_mse: tuple
    t0_max_z: float            # max over t = 0 points of |Fbar_N - f| / se


@dataclass(frozen=True)
class ConvergenceReport:
    rows: list
    limit_solver: str

    @property
    def mse_strictly_decreasing(self) -> bool:
        v = [r.sup_mse for r in self.rows]
        return all(b < a for a, b in zip(v, v[1:]))

    @property
    def bias_strictly_decreasing(self) -> bool:
        v = [r.sup_abs_bias for r in self.rows]
        return all(b < a for a, b in zip(v, v[1:]))


def _limit_lookup(limit: dict, t: np.ndarray, h: np.ndarray) -> np.ndarray:
    from scipy.interpolate import RegularGridInterpolator
    tl, hl = np.unique(limit["t"]), np.unique(limit["h"])
    if (t.min() < tl[0] - 1e-12 or t.max() > tl[-1] + 1e-12
            or h.min() < hl[0] - 1e-12 or h.max() > hl[-1] + 1e-12):
        raise ValueError("finite-N grid lies outside the limit solution's range")
    if tl.size * hl.size != limit["f"].size:
        raise ValueError("limit solution is not on a product grid")
    order = np.lexsort((limit["h"], limit["t"]))
    f = limit["f"][order].reshape(tl.size, hl.size)
    if tl.size < 2 or hl.size < 2:
        return f.ravel()[0] * np.ones_like(t)
    interp = RegularGridInterpolator((tl, hl), f)
    return interp(np.stack([np.clip(t, tl[0], tl[-1]), np.clip(h, hl[0], hl[-1])], axis=1))


def convergence_report(bundle) -> ConvergenceReport:
    bundle = Path(bundle)
    manifest = load_manifest(bundle)
    for name in (CSV_FILES["finite-n"], CSV_FILES["limit"]):
        if not (bundle / name).exists():
            raise FileNotFoundError(f"bundle lacks {name}")
    fin = read_csv(bundle / CSV_FILES["finite-n"])
    lim = read_csv(bundle / CSV_FILES["limit"])
    f = _limit_lookup(lim, fin["t"], fin["h"])
    rows = []
    for N in sorted(set(fin["N"].astype(int).tolist())):
        sel = fin["N"] == N
        bias = fin["F_bar"][sel] - f[sel]
        se = fin["F_bar_se"][sel]
        mse = fin["F_var"][sel] + bias ** 2
        kb, km = int(np.argmax(np.abs(bias))), int(np.argmax(mse))
        t0 = fin["t"][sel] == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(bias[t0]) / se[t0]
        rows.append(ConvergenceRow(
            N, float(abs(bias[kb])), float(se[kb]), float(mse[km]),
            (float(fin["t"][sel][km]), float(fin["h"][sel][km])),
            float(np.nanmax(z)) if z.size else float("nan")))
    return ConvergenceReport(rows, manifest.get("limit_solver", limit_solver_name(2)))


def concentration_from_bundle(bundle) -> gibbs.ConcentrationReport:
    fin = read_csv(Path(bundle) / CSV_FILES["finite-n"])
    variances, points = {}, None
    for N in sorted(set(fin["N"].astype(int).tolist())):
        sel = fin["N"] == N
        pts = list(zip(fin["t"][sel].tolist(), fin["h"][sel].tolist()))
        points = points or pts
        variances[N] = (fin["F_var"][sel], fin["F_var_se"][sel])
    return gibbs.concentration_from_variances(points, variances)


def format_convergence(rep: ConvergenceReport) -> str:
    lines = [f"limit solver: {rep.limit_solver}",
             f"{'N':>5} {'sup|Fbar-f|':>14} {'se':>10} {'sup E(F-f)^2':>14} {'t=0 max z':>10}"]
    for r in rep.rows:
        lines.append(f"{r.N:>5} {r.sup_abs_bias:>14.6e} {r.sup_abs_bias_se:>10.2e} "
                     f"{r.sup_mse:>14.6e} {r.t0_max_z:>10.3f}")
    lines.append(f"sup E(F-f)^2 strictly decreasing in N: {rep.mse_strictly_decreasing}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Plot scripts (gnuplot, relative paths only)


def _write_dat(path: Path, header: str, blocks):
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for i, block in enumerate(blocks):
            if i:
                fh.write("\n\n")
            for row in block:
                fh.write(" ".join(_fmt(x) for x in row) + "\n")


def emit_plots(bundle) -> list[Path]:
    """Write gnuplot scripts plus their data files into ``bundle``.

    Figures whose source CSV is missing are skipped with a warning.
    """
    bundle = Path(bundle)
    written = []
    fin_path, lim_path = bundle / CSV_FILES["finite-n"], bundle / CSV_FILES["limit"]
    have_fin, have_lim = fin_path.exists(), lim_path.exists()

    if have_fin and have_lim:
        fin = read_csv(fin_path)
        f = _limit_lookup(read_csv(lim_path), fin["t"], fin["h"])
        Ns = sorted(set(fin["N"].astype(int).tolist()))
        blocks = [[(t, h, fb, se, fl) for t, h, fb, se, fl in
                   zip(fin["t"][fin["N"] == N], fin["h"][fin["N"] == N],
                       fin["F_bar"][fin["N"] == N], fin["F_bar_se"][fin["N"] == N], f[fin["N"] == N])]
                  for N in Ns]
        _write_dat(bundle / "free_energy.dat", "one block per N: t h F_bar F_bar_se f_limit", blocks)
        titles = " ".join(str(n) for n in Ns)
        (bundle / "free_energy.gp").write_text(
            "# finite-N free energy against the limit\n"
            f"Ns = \"{titles}\"\n"
            "set xlabel 'h'; set ylabel 'F'\n"
            "set key left top\n"
            "plot for [i=1:words(Ns)] 'free_energy.dat' index (i-1) using 2:3:4 "
            "with yerrorbars title sprintf('N=%s', word(Ns, i)), \\\n"
            "     'free_energy.dat' index 0 using 2:5 with points pt 7 title 'limit'\n")
        written.append(bundle / "free_energy.gp")

        rep = convergence_report(bundle)
        _write_dat(bundle / "residual.dat", "N sup_abs_bias sup_abs_bias_se sup_mse",
                   [[(r.N, r.sup_abs_bias, r.sup_abs_bias_se, r.sup_mse) for r in rep.rows]])
        (bundle / "residual.gp").write_text(
            "# distance to the limit against N\n"
            "set logscale xy\n"
            "set xlabel 'N'; set ylabel 'sup over grid'\n"
            "plot 'residual.dat' using 1:2:3 with yerrorlines title 'sup |Fbar_N - f|', \\\n"
            "     'residual.dat' using 1:4 with linespoints title 'sup E(F_N - f)^2'\n")
        written.append(bundle / "residual.gp")
    else:
        missing = CSV_FILES["finite-n"] if not have_fin else CSV_FILES["limit"]
        warnings.warn(f"{missing} missing: skipping free-energy and residual figures", stacklevel=2)

    if have_fin:
        conc = concentration_from_bundle(bundle)
        _write_dat(bundle / "concentration.dat", "N max_var max_var_se",
                   [[(r.N, r.max_var.value, r.max_var.se) for r in conc.rows]])
        (bundle / "concentration.gp").write_text(
            "# maximal Var(F_N) over the grid against N\n"
            "set logscale xy\n"
            "set xlabel 'N'; set ylabel 'max Var F_N'\n"
            f"# fitted log-log slope: {conc.slope:.6g}\n"
            "plot 'concentration.dat' using 1:2:3 with yerrorlines title 'max Var', \\\n"
            "     'concentration.dat' using 1:(column(2)*column(1)/$1**2) with lines dt 2 title '~1/N'\n")
        written.append(bundle / "concentration.gp")
    else:
        warnings.warn(f"{CSV_FILES['finite-n']} missing: skipping concentration figure", stacklevel=2)

    cw_path = bundle / CSV_FILES["curie-weiss"]
    if cw_path.exists():
        d = read_csv(cw_path)
        Ns = sorted(set(d["N"].astype(int).tolist()))
        blocks = [[(t, h, ex, fd) for t, h, ex, fd in
                   zip(d["t"][d["N"] == N], d["h"][d["N"] == N],
                       d["residual_exact"][d["N"] == N], d["residual_fd"][d["N"] == N])]
                  for N in Ns]
        _write_dat(bundle / "curie_weiss.dat", "one block per N: t h residual_exact residual_fd", blocks)
        titles = " ".join(str(n) for n in Ns)
        (bundle / "curie_weiss.gp").write_text(
            "# Curie-Weiss HJ identity residuals\n"
            f"Ns = \"{titles}\"\n"
            "set logscale y\n"
            "set xlabel 't'; set ylabel 'residual'\n"
            "plot for [i=1:words(Ns)] 'curie_weiss.dat' index (i-1) using 1:($3 > 0 ? $3 : 1e-18) "
            "with points title sprintf('exact, N=%s', word(Ns, i)), \\\n"
            "     for [i=1:words(Ns)] 'curie_weiss.dat' index (i-1) using 1:4 "
            "with points title sprintf('finite difference, N=%s', word(Ns, i))\n")
        written.append(bundle / "curie_weiss.gp")
    else:
        warnings.warn(f"{CSV_FILES['curie-weiss']} missing: skipping Curie-Weiss figure", stacklevel=2)
    return written
