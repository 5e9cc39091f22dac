"""Experiment runner, sweeps and CSV artifacts.

Artifacts written to a run directory:

``summary.csv``
    one row: experiment, mode, method, l, gn_iterations, converged,
    pcg_total, offline_tlm, offline_adj, online fwd/tlm/adj, probe_tlm,
    probe_adj, final_cost, final_grad_ratio
``iterations.csv``
    one row per GN iteration (see :data:`ITERATION_COLUMNS`)
``errors.csv``
    time_index, time, forecast_error, analysis_error (relative 2-norm errors)
``sketch_size.csv``
    method, l, seed, condition, pcg_iterations (first iterate)
``conditioning.csv``
    n, nu, cond_gn_hessian, cond_shifted, and PCG counts per method
``spectrum.csv``
    index, eigenvalue, relative (eigenvalue / largest)
``config.yaml``
    the resolved configuration
"""
from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from ..analysis import split_precond_condition
from ..fourdvar import (GNConfig, GNResult, Mode, evaluate, gn_solve, misfit_operator)
from ..linalg import LinearMap, pcg_solve, woodbury_apply
from ..sketching import SketchConfig, build_sketch, lanczos_sketch, randsvd_sketch
from .config import ConfigError, ExperimentConfig
from .scenario import Scenario, generate_scenario, sketch_seed

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["experiment", "mode", "method", "l", "gn_iterations", "converged", "pcg_total",
                   "offline_tlm", "offline_adj", "fwd", "tlm", "adj", "probe_tlm", "probe_adj",
                   "final_cost", "final_grad_ratio"]
ITERATION_COLUMNS = ["k", "cost", "grad_inf_norm", "pcg_iterations", "pcg_converged",
                     "sketch_recomputed", "final_l", "kappa_sk", "kappa_re", "step_size",
                     "ls_evals", "fwd", "tlm", "adj", "offline_tlm", "offline_adj",
                     "probe_tlm", "probe_adj"]
ERROR_COLUMNS = ["time_index", "time", "forecast_error", "analysis_error"]
SKETCH_SIZE_COLUMNS = ["method", "l", "seed", "condition", "pcg_iterations"]
CONDITIONING_METHODS = ("randsvd", "nystrom", "singleview")


class SolverFailure(RuntimeError):
    """The assimilation did not converge or a solver broke down."""


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, columns: Sequence[str], rows: Sequence[Dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class RunArtifacts:
    directory: Path
    files: Dict[str, Path] = field(default_factory=dict)
    summary: Dict = field(default_factory=dict)
    result: Optional[GNResult] = None
    ok: bool = True

    def table(self, name: str) -> List[Dict[str, str]]:
        return read_csv(self.files[name])


def gn_config(cfg: ExperimentConfig) -> GNConfig:
    sk = cfg.sketch.with_seed(sketch_seed(cfg))
    return GNConfig(mode=cfg.mode, sketch=sk, grad_tol=cfg.grad_tol, pcg_tol=cfg.pcg_tol,
                    max_gn_iters=cfg.max_gn_iters)


def relative_errors(traj, truth_traj) -> np.ndarray:
    return np.linalg.norm(traj - truth_traj, axis=1) / np.linalg.norm(truth_traj, axis=1)


def summary_row(cfg: ExperimentConfig, res: GNResult) -> Dict:
    c = res.counters
    g0 = res.logs[0].grad_inf_norm if res.logs else res.grad_inf_norm
    method = "" if Mode(cfg.mode) == Mode.PREC_GAMMA else cfg.sketch.method
    if Mode(cfg.mode) in (Mode.PREC_LANCZOS, Mode.PREC_A_LANCZOS):
        method = "lanczos"
    return dict(experiment=cfg.experiment, mode=Mode(cfg.mode).value, method=method,
                l=cfg.sketch.l, gn_iterations=res.iterations, converged=res.converged,
                pcg_total=res.total_pcg, final_cost=res.cost,
                final_grad_ratio=res.grad_inf_norm / g0 if g0 else 0.0, **c)


def _assimilate(cfg: ExperimentConfig, sc: Scenario, out: Path) -> RunArtifacts:
    res = gn_solve(sc.problem, gn_config(cfg))
    truth_traj = sc.trajectory(sc.truth)
    fc = relative_errors(sc.trajectory(sc.background), truth_traj)
    an = relative_errors(sc.trajectory(res.x), truth_traj)
    rows = [dict(time_index=i, time=i * cfg.dt_obs, forecast_error=fc[i], analysis_error=an[i])
            for i in range(cfg.n_forecast + 1)]
    it_rows = [dict(k=l.k, cost=l.cost, grad_inf_norm=l.grad_inf_norm,
                    pcg_iterations=l.pcg_iterations, pcg_converged=l.pcg_converged,
                    sketch_recomputed=l.sketch_recomputed, final_l=l.final_l,
                    kappa_sk=l.kappa_sk, kappa_re=l.kappa_re, step_size=l.step_size,
                    ls_evals=l.ls_evals, **l.counters) for l in res.logs]
    summary = summary_row(cfg, res)
    art = RunArtifacts(out, result=res, summary=summary, ok=res.converged)
    art.files["summary"] = out / "summary.csv"
    art.files["iterations"] = out / "iterations.csv"
    art.files["errors"] = out / "errors.csv"
    write_csv(art.files["summary"], SUMMARY_COLUMNS, [summary])
    write_csv(art.files["iterations"], ITERATION_COLUMNS, it_rows)
    write_csv(art.files["errors"], ERROR_COLUMNS, rows)
    return art


def dense_misfit(sc: Scenario, x0=None):
    """Dense ``A`` at ``x0`` (default: background) from one block adjoint sweep,
    plus the evaluation there."""
    p = sc.problem
    ev = evaluate(p, sc.background if x0 is None else x0)
    A = misfit_operator(p, trajectory=ev.trajectory, charge="offline")
    return A.adjoint_apply(np.eye(p.m)).T.copy(), ev


def _first_iterate_system(sc: Scenario, A_dense, ev):
    H = A_dense.T @ A_dense
    rhs = -sc.problem.prior.apply_sqrt(ev.grad)
    return H, np.eye(H.shape[0]) + H, rhs


def _sketch_dense(method, A_dense, H, l, seed, rhs):
    A = LinearMap.from_matrix(A_dense)
    cfg = SketchConfig(method=method, l=l, seed=seed)
    return build_sketch(A, cfg, H=LinearMap.from_matrix(H, symmetric=True), start=rhs).evd


def _pcg_count(S, rhs, evd, tol):
    precond = None if evd is None else (lambda r: woodbury_apply(evd, r))
    rep = pcg_solve(S, rhs, precond, tol=tol)
    if not rep.converged:
        raise SolverFailure("PCG did not converge on the first-iterate system")
    return rep.iterations


def _sketch_size(cfg: ExperimentConfig, sc: Scenario, out: Path) -> RunArtifacts:
    A_dense, ev = dense_misfit(sc)
    H, S, rhs = _first_iterate_system(sc, A_dense, ev)
    rows = [dict(method="none", l=0, seed=0, condition=split_precond_condition(H, 0 * H),
                 pcg_iterations=_pcg_count(S, rhs, None, cfg.pcg_tol))]
    base = sketch_seed(cfg)
    for method in cfg.sweep_methods:
        seeds = [0] if method == "lanczos" else range(cfg.sweep_seeds)
        for l in cfg.sketch_sizes:
            for s in seeds:
                evd = _sketch_dense(method, A_dense, H, l, base + s, rhs)
                rows.append(dict(method=method, l=l, seed=s,
                                 condition=split_precond_condition(H, evd.to_dense()),
                                 pcg_iterations=_pcg_count(S, rhs, evd, cfg.pcg_tol)))
    art = RunArtifacts(out)
    art.files["sketch_size"] = out / "sketch_size.csv"
    write_csv(art.files["sketch_size"], SKETCH_SIZE_COLUMNS, rows)
    return art


def _conditioning(cfg: ExperimentConfig, sc: Scenario, out: Path) -> RunArtifacts:
    """First-iterate conditioning, leading spectrum and PCG counts."""
    p = sc.problem
    ev = evaluate(p, sc.background)
    A = misfit_operator(p, trajectory=ev.trajectory, charge="offline")
    k = min(cfg.spectrum_rank, p.m, p.n)
    spec = randsvd_sketch(A, k, sketch_seed(cfg)).evd
    lam = spec.eigenvalues
    # GN Hessian Gamma^{-1/2} (I + H) Gamma^{-1/2}, with H replaced by its leading part
    B = p.prior.B.toarray()
    gn = B @ (np.eye(p.n) + spec.to_dense()) @ B
    w = np.linalg.eigvalsh(0.5 * (gn + gn.T))
    row = dict(n=p.n, nu=getattr(p.model, "nu", float("nan")), steps=p.steps_per_interval,
               cond_gn_hessian=w[-1] / w[0], cond_shifted=1.0 + lam[0])

    A_on = misfit_operator(p, trajectory=ev.trajectory, charge="online")
    S = LinearMap((p.n, p.n), lambda x: x + A_on.adjoint_apply(A_on.apply(x)), symmetric=True)
    rhs = -p.prior.apply_sqrt(ev.grad)
    row["pcg_none"] = _pcg_count(S, rhs, None, cfg.pcg_tol)
    base = sketch_seed(cfg)
    l = cfg.sketch.l
    for method in CONDITIONING_METHODS:
        evd = build_sketch(A, SketchConfig(method=method, l=l, seed=base)).evd
        row[f"pcg_{method}"] = _pcg_count(S, rhs, evd, cfg.pcg_tol)
    row["pcg_lanczos"] = _pcg_count(S, rhs, lanczos_sketch(A_on.gram(), l, rhs).evd, cfg.pcg_tol)

    art = RunArtifacts(out, summary=row)
    art.files["conditioning"] = out / "conditioning.csv"
    art.files["spectrum"] = out / "spectrum.csv"
    cols = ["n", "nu", "steps", "cond_gn_hessian", "cond_shifted", "pcg_none"] + \
        [f"pcg_{m}" for m in CONDITIONING_METHODS] + ["pcg_lanczos"]
    write_csv(art.files["conditioning"], cols, [row])
    write_csv(art.files["spectrum"], ["index", "eigenvalue", "relative"],
              [dict(index=i + 1, eigenvalue=v, relative=v / lam[0]) for i, v in enumerate(lam)])
    return art


def run_experiment(cfg: ExperimentConfig, out=None) -> RunArtifacts:
    """Generate the scenario, run the configured task and write artifacts."""
    out = Path(cfg.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
    sc = generate_scenario(cfg)
    task = {"assimilate": _assimilate, "sketch_size": _sketch_size,
            "conditioning": _conditioning}[cfg.task]
    art = task(cfg, sc, out)
    art.files["config"] = out / "config.yaml"
    return art


def _axis_value(cfg: ExperimentConfig, name: str, raw: str):
    if name.startswith("sketch."):
        key = name.split(".", 1)[1]
        current = getattr(cfg.sketch, key, None)
    else:
        key = name
        if not hasattr(cfg, name):
            raise ConfigError(f"unknown sweep axis {name!r}")
        current = getattr(cfg, name)
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int) or (current is None and raw.isdigit()):
        return int(raw)
    if isinstance(current, float) or current is None:
        try:
            return float(raw)
        except ValueError:
            return raw
    return raw


def parse_axes(specs: Sequence[str], cfg: ExperimentConfig) -> Dict[str, list]:
    """``["n=199,399", "nu=0.1,1"]`` -> ``{"n": [199, 399], "nu": [0.1, 1.0]}``."""
    axes = {}
    for s in specs:
        if "=" not in s:
            raise ConfigError(f"sweep axis must look like name=v1,v2 (got {s!r})")
        name, vals = s.split("=", 1)
        name = name.strip()
        values = [v.strip() for v in vals.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"sweep axis {name!r} has no values")
        axes[name] = [_axis_value(cfg, name, v) for v in values]
    return axes


def _apply_point(cfg: ExperimentConfig, point: Dict) -> ExperimentConfig:
    top = {k: v for k, v in point.items() if not k.startswith("sketch.")}
    sk = {k.split(".", 1)[1]: v for k, v in point.items() if k.startswith("sketch.")}
    if sk:
        top["sketch"] = sk
    return cfg.replace(**top)


def _point_name(point: Dict) -> str:
    return "_".join(f"{k.replace('sketch.', '')}-{v}" for k, v in point.items())


def _run_point(args):
    cfg, point, out = args
    try:
        art = run_experiment(_apply_point(cfg, point), out)
        rows = []
        for name in ("summary", "conditioning"):
            if name in art.files:
                rows = art.table(name)
        if "sketch_size" in art.files:
            rows = art.table("sketch_size")
        return [{**{k: str(v) for k, v in point.items()}, **r, "status": "ok"} for r in rows]
    except Exception as exc:  # one failing point must not stop the sweep
        logger.error("sweep point %s failed: %s", point, exc)
        return [{**{k: str(v) for k, v in point.items()}, "status": f"failed: {exc}"}]


def sweep(cfg: ExperimentConfig, axes: Dict[str, list], out=None, workers: int = 1) -> Path:
    """Run the Cartesian product of ``axes`` and collate into ``sweep.csv``."""
    out = Path(cfg.out if out is None else out)
    names = list(axes)
    points = [dict(zip(names, vals)) for vals in itertools.product(*(axes[k] for k in names))]
    for p in points:
        _apply_point(cfg, p)  # validate before any compute
    jobs = [(cfg, p, out / _point_name(p)) for p in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    rows = [r for rs in results for r in rs]
    cols = list(dict.fromkeys(c for r in rows for c in r))
    write_csv(out / "sweep.csv", cols, rows)
    return out / "sweep.csv"


def report(directory) -> Path:
    """Collate every ``summary.csv`` under ``directory`` into ``report.csv``."""
    directory = Path(directory)
    rows = []
    for path in sorted(directory.rglob("summary.csv")):
        for r in read_csv(path):
            rows.append({"run": str(path.parent.relative_to(directory)), **r})
    if not rows:
        raise FileNotFoundError(f"no summary.csv files under {directory}")
    out = directory / "report.csv"
    write_csv(out, ["run"] + SUMMARY_COLUMNS, rows)
    return out
