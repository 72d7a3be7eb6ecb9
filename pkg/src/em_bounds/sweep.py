"""Sweep driver: bounds and optimizers over element count, persisted as CSV + JSON."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .bounds import (
    CLOSED_FORM, INVALID, BoundResult, fid_bisection_bound, fid_sdr_bound, frob_ni_bound,
    frob_nio_bound, frob_sdr_bound,
)
from .model import ModelError, ScenarioModel, load_model, reduce_fixed
from .scenario import TARGET_KINDS, ScenarioSpec, generate, target_operator
from .sdp import OPTIMAL, SolverOptions
from .search import (
    ES_CAP, Objective, coordinate_descent, exhaustive_search, fidelity_objective, frobenius_objective,
    genetic_algorithm, project_sdr,
)

log = logging.getLogger(__name__)

REPORT_VERSION = 1
FROB = "frobenius"
FROB_BOUNDS = ("frob-sdr", "frob-ni", "frob-nio")
FID_BOUNDS = ("fid-sdr", "fid-bisection")
OPTIMIZERS = ("es", "cd", "ga", "p-sdr")
OK_STATUSES = (OPTIMAL, CLOSED_FORM, INVALID, "ok")
ORDER_TOL = 1e-6

COLUMNS = [
    "scenario", "scenario_hash", "n_s", "target", "seed", "method", "role", "value", "raw_value",
    "status", "sigma", "effective_rank", "best_v", "evaluations", "ratio", "time_s", "message",
]


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioSource:
    name: str
    spec: ScenarioSpec | None = None
    file: str | None = None

    def load(self) -> ScenarioModel:
        if self.spec is not None:
            return generate(self.spec, tag=self.name)
        return load_model(self.file)


@dataclass
class SweepConfig:
    scenarios: list[ScenarioSource]
    n_s_values: list[int]
    targets: list[str] = field(default_factory=lambda: list(TARGET_KINDS))
    bounds: list[str] = field(default_factory=lambda: ["frob-sdr", "frob-ni", "frob-nio", "fid-sdr"])
    optimizers: list[str] = field(default_factory=lambda: list(OPTIMIZERS))
    seeds: list[int] = field(default_factory=lambda: [0])
    target_seed: int = 0
    bisection_fallback: bool = True
    solver: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict[str, Any], base: Path | None = None) -> "SweepConfig":
        known = {"scenarios", "n_s_values", "targets", "bounds", "optimizers", "seeds", "target_seed",
                 "bisection_fallback", "solver", "version"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if d.get("version", 1) != 1:
            raise ConfigError(f"unsupported config version {d['version']!r}")
        sources = []
        for i, s in enumerate(d.get("scenarios", [])):
            name = s.get("name", f"scenario{i}")
            if "spec" in s:
                try:
                    sources.append(ScenarioSource(name, spec=ScenarioSpec.from_dict(s["spec"])))
                except ModelError as exc:
                    raise ConfigError(f"scenario {name!r}: {exc}") from None
            elif "file" in s:
                path = Path(s["file"])
                if base is not None and not path.is_absolute():
                    path = base / path
                sources.append(ScenarioSource(name, file=str(path)))
            else:
                raise ConfigError(f"scenario {name!r} needs a 'spec' or a 'file'")
        kw = {k: d[k] for k in ("targets", "bounds", "optimizers", "seeds", "target_seed",
                                "bisection_fallback", "solver") if k in d}
        cfg = cls(scenarios=sources, n_s_values=[int(n) for n in d.get("n_s_values", [])], **kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.scenarios:
            raise ConfigError("config lists no scenarios")
        if not self.n_s_values or min(self.n_s_values) < 1:
            raise ConfigError("n_s_values must be a non-empty list of positive integers")
        for t in self.targets:
            if t not in TARGET_KINDS:
                raise ConfigError(f"unknown target {t!r}")
        for b in self.bounds:
            if b not in FROB_BOUNDS + FID_BOUNDS:
                raise ConfigError(f"unknown bound {b!r}")
        for o in self.optimizers:
            if o not in OPTIMIZERS:
                raise ConfigError(f"unknown optimizer {o!r}")
        if "es" in self.optimizers and max(self.n_s_values) > ES_CAP:
            raise ConfigError(f"exhaustive search requested with n_s up to {max(self.n_s_values)} > {ES_CAP}")
        bad = set(self.solver) - set(SolverOptions.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown solver options: {sorted(bad)}")

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.solver)


def load_config(path: str | Path) -> SweepConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return SweepConfig.from_dict(d, base=path.parent)


# -- cells ----------------------------------------------------------------------

def cell_key(row: dict[str, Any]) -> tuple:
    return (row["scenario_hash"], int(row["n_s"]), row["target"], int(row["seed"]), row["method"])


def _bits_str(v: np.ndarray) -> str:
    return "".join(str(int(b)) for b in v)


def _bound_row(res: BoundResult, elapsed: float) -> dict[str, Any]:
    return {
        "method": res.kind, "role": "bound", "value": res.value, "raw_value": res.raw_value,
        "status": res.solver_status, "sigma": res.sigma, "effective_rank": res.effective_rank,
        "time_s": elapsed, "message": res.message,
    }


def _error_row(method: str, role: str, exc: Exception, elapsed: float) -> dict[str, Any]:
    return {"method": method, "role": role, "value": np.nan, "status": "error", "time_s": elapsed,
            "message": f"{type(exc).__name__}: {exc}"}


def run_group(model: ScenarioModel, target: str, seed: int, cfg: SweepConfig,
              todo: set[str], h_des: np.ndarray | None) -> list[dict[str, Any]]:
    """Compute the requested methods of one (scenario, n_s, target, seed) group."""
    opts = cfg.solver_options()
    rows: list[dict[str, Any]] = []
    objective: Objective = frobenius_objective() if h_des is None else fidelity_objective(h_des)
    sdr: BoundResult | None = None

    def timed(method: str, role: str, fn):
        t0 = time.perf_counter()
        try:
            return fn(), time.perf_counter() - t0
        except Exception as exc:  # recorded in-row, never aborts the sweep
            log.warning("%s failed: %s", method, exc)
            rows.append(_error_row(method, role, exc, time.perf_counter() - t0))
            return None, 0.0

    bound_fns = {
        "frob-sdr": lambda: frob_sdr_bound(model, opts),
        "frob-ni": lambda: frob_ni_bound(model),
        "frob-nio": lambda: frob_nio_bound(model),
        "fid-sdr": lambda: fid_sdr_bound(model, h_des, opts),
        "fid-bisection": lambda: fid_bisection_bound(model, h_des, opts),
    }
    sdr_kind = "frob-sdr" if h_des is None else "fid-sdr"
    need_sdr = sdr_kind in todo or "p-sdr" in todo
    for method in (FROB_BOUNDS if h_des is None else FID_BOUNDS):
        if method not in todo and not (method == sdr_kind and need_sdr):
            continue
        res, dt = timed(method, "bound", bound_fns[method])
        if res is None:
            continue
        if method == sdr_kind:
            sdr = res
        if method in todo:
            rows.append(_bound_row(res, dt))
        if (method == "fid-sdr" and cfg.bisection_fallback and not res.valid
                and "fid-bisection" not in todo):
            fb, dt = timed("fid-bisection", "bound", bound_fns["fid-bisection"])
            if fb is not None:
                rows.append(_bound_row(fb, dt))

    opt_fns = {
        "es": lambda: exhaustive_search(model, objective),
        "cd": lambda: coordinate_descent(model, objective, seed=seed),
        "ga": lambda: genetic_algorithm(model, objective, seed=seed),
    }
    for method in OPTIMIZERS:
        if method not in todo:
            continue
        if method == "p-sdr":
            if sdr is None or sdr.blocks is None:
                rows.append({"method": "p-sdr", "role": "optimizer", "value": np.nan, "status": "error",
                             "message": "no relaxed solution to project"})
                continue
            res, dt = timed(method, "optimizer", lambda: project_sdr(model, sdr.blocks.y, objective, sdr.sigma))
        else:
            res, dt = timed(method, "optimizer", opt_fns[method])
        if res is None:
            continue
        rows.append({"method": method, "role": "optimizer", "value": res.best_value, "status": "ok",
                     "best_v": _bits_str(res.best_v), "evaluations": res.evaluations, "time_s": dt})
    return rows


def attach_ratios(rows: list[dict[str, Any]]) -> None:
    """ratio = bound / best optimizer value within each group, in place."""
    groups: dict[tuple, list[dict[str, Any]]] = {}
    for r in rows:
        groups.setdefault(cell_key(r)[:4], []).append(r)
    for grp in groups.values():
        vals = [float(r["value"]) for r in grp if r["role"] == "optimizer" and _finite(r["value"])]
        best = max(vals) if vals else np.nan
        for r in grp:
            if r["role"] == "bound" and _finite(r["value"]) and np.isfinite(best) and best > 0:
                r["ratio"] = float(r["value"]) / best
            else:
                r["ratio"] = None


def _finite(x: Any) -> bool:
    try:
        return bool(np.isfinite(float(x)))
    except (TypeError, ValueError):
        return False


def ordering_violations(rows: Iterable[dict[str, Any]], tol: float = ORDER_TOL) -> list[str]:
    """Groups where a certified bound falls below the exhaustive-search optimum."""
    rows = list(rows)
    es = {cell_key(r)[:4]: float(r["value"]) for r in rows if r["method"] == "es" and _finite(r["value"])}
    out = []
    for r in rows:
        if r["role"] != "bound" or r["status"] not in (OPTIMAL, CLOSED_FORM) or not _finite(r["value"]):
            continue
        key = cell_key(r)[:4]
        if key in es and float(r["value"]) < es[key] - tol * (1 + abs(es[key])):
            out.append(f"{key}: {r['method']} = {float(r['value']):.10g} < ES {es[key]:.10g}")
    return out


# -- persistence ----------------------------------------------------------------

def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_rows(path: Path) -> list[dict[str, Any]]:
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["n_s"], r["seed"] = int(r["n_s"]), int(r["seed"])
        for k in ("value", "raw_value", "sigma", "effective_rank", "ratio", "time_s"):
            r[k] = float(r[k]) if r.get(k) not in (None, "") else None
        r["evaluations"] = int(r["evaluations"]) if r.get("evaluations") else None
    return rows


def write_rows(path: Path, rows: list[dict[str, Any]]) -> None:
    tmp = path.with_suffix(".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c)) for c in COLUMNS})
    tmp.replace(path)


def write_report(path: Path, cfg: SweepConfig, rows: list[dict[str, Any]], hashes: dict[str, str]) -> None:
    cfg_d = asdict(cfg)
    for s in cfg_d["scenarios"]:
        if s["spec"] is not None:
            s["spec"] = ScenarioSpec(**s["spec"]).to_dict()
    report = {
        "version": REPORT_VERSION,
        "config": cfg_d,
        "scenario_hashes": hashes,
        "rows": [{k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in r.items()}
                 for r in rows],
        "ordering_violations": ordering_violations(rows),
    }
    path.write_text(json.dumps(report, indent=1, default=str) + "\n")


def load_report(path: str | Path) -> dict[str, Any]:
    d = json.loads(Path(path).read_text())
    if d.get("version") != REPORT_VERSION:
        raise ValueError(f"unsupported report version {d.get('version')!r}")
    return d


@dataclass
class SweepSummary:
    computed: int
    skipped: int
    failed: int
    rows: int


def run_sweep(cfg: SweepConfig, out_dir: str | Path, threads: int = 1) -> SweepSummary:
    """Run every missing cell, append to results.csv and rewrite report.json.

    Groups run on a bounded pool; rows are merged and written by the caller
    thread only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    rows = read_rows(csv_path)
    done = {cell_key(r) for r in rows}

    jobs = []
    hashes: dict[str, str] = {}
    skipped = 0
    for src in cfg.scenarios:
        full = src.load()
        hashes[src.name] = full.digest()
        for n in cfg.n_s_values:
            if n > full.n_s:
                raise ConfigError(f"n_s value {n} exceeds scenario {src.name!r} with {full.n_s} elements")
            reduced = reduce_fixed(full, range(n))
            for target in [FROB, *cfg.targets]:
                if target == FROB:
                    methods = [m for m in cfg.bounds if m in FROB_BOUNDS] + cfg.optimizers
                    h_des = None
                else:
                    methods = [m for m in cfg.bounds if m in FID_BOUNDS] + cfg.optimizers
                    h_des = make_target(target, full.n_r, full.n_t, cfg.target_seed)
                for seed in cfg.seeds:
                    base = {"scenario": src.name, "scenario_hash": hashes[src.name], "n_s": n,
                            "target": target, "seed": seed}
                    todo = {m for m in methods if (*cell_key({**base, "method": m}),) not in done}
                    skipped += len(methods) - len(todo)
                    if todo:
                        jobs.append((base, reduced, target, seed, todo, h_des))

    def work(job):
        base, model, target, seed, todo, h_des = job
        return base, run_group(model, target, seed, cfg, todo, h_des)

    computed = 0
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for base, new_rows in pool.map(work, jobs):
            for r in new_rows:
                rows.append({**base, **r})
            computed += len(new_rows)
            attach_ratios(rows)
            write_rows(csv_path, rows)
    attach_ratios(rows)
    write_rows(csv_path, rows)
    write_report(out / "report.json", cfg, rows, hashes)
    failed = sum(1 for r in rows if r["status"] not in OK_STATUSES)
    return SweepSummary(computed, skipped, failed, len(rows))


def make_target(kind: str, n_r: int, n_t: int, seed: int = 0) -> np.ndarray:
    """Target operator of shape (n_r, n_t); non-square shapes take the leading
    block of the square operator, renormalized."""
    if n_r == n_t:
        return target_operator(kind, n_r, seed=seed)
    m = target_operator(kind, max(n_r, n_t), seed=seed)[:n_r, :n_t]
    return m / np.linalg.norm(m)


# -- plot data ------------------------------------------------------------------

def plot_series(rows: list[dict[str, Any]]) -> dict[str, list[dict[str, Any]]]:
    """Per-figure series: x = n_s, one column per method.

    Bounds are deterministic per cell; optimizer outcomes are reduced by the
    best value over seeds.
    """
    if not rows:
        raise ValueError("report contains no rows")
    figs: dict[str, dict[int, dict[str, float]]] = {}
    multi = len({r["scenario"] for r in rows}) > 1
    for r in rows:
        if not _finite(r["value"]):
            continue
        stem = FROB if r["target"] == FROB else f"fidelity_{r['target']}"
        name = f"{r['scenario']}_{stem}" if multi else stem
        col = r["method"]
        val = float(r["value"])
        if r["method"] == "fid-sdr" and r["target"] != FROB:
            val = min(val, 1.0)
        fig = figs.setdefault(name, {}).setdefault(int(r["n_s"]), {})
        fig[col] = max(fig.get(col, -np.inf), val)
    out = {}
    for name, by_n in figs.items():
        out[name] = [{"n_s": n, **by_n[n]} for n in sorted(by_n)]
    return out


def write_plotdata(report_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    report_dir = Path(report_dir)
    rpath = report_dir / "report.json" if report_dir.is_dir() else report_dir
    report = load_report(rpath)
    series = plot_series(report["rows"])
    out = Path(out_dir) if out_dir else rpath.parent / "plotdata"
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, pts in sorted(series.items()):
        cols = ["n_s"] + sorted({k for p in pts for k in p if k != "n_s"})
        path = out / f"{name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for p in pts:
                w.writerow({c: _fmt(p.get(c)) for c in cols})
        paths.append(path)
    return paths
