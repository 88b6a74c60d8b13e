"""Configuration-driven upscaling runs and convergence studies."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .estimators import EstimatorReport, build_report
from .mesh import MeshHierarchy
from .parallel import ordered_map
from .random_field import EVALUATION_STREAM, FieldModel, draw_sample, restrict_to_fine
from .solvers import ErrorRow, error_norms, solve_local, solve_quasilocal, solve_reference
from .upscaling import (BlockMean, FluctuationStats, LocalTensor, ModelInvalidError,
                        QuasilocalTensor, SampleUpscaler, assemble_bilinear,
                        coercivity_margin, compress_local, fluctuation_stats)

log = logging.getLogger(__name__)

SCHEMA = "# qlhom results schema v1"
OUTPUT_ENV = "QLHOM_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    coarse_levels: List[int] = field(default_factory=lambda: [0, 1, 2])
    eps_level: int = 3
    fine_level: int = 5
    ell: Union[int, str] = "auto"
    alpha: float = 1.0
    beta: float = 10.0
    N_avg: int = 100
    N_eval: int = 100
    master_seed: int = 0
    f: float = 1.0
    output_dir: str = "results"
    gamma_pass: str = "cache"

    def __post_init__(self):
        self.coarse_levels = [int(c) for c in self.coarse_levels]
        if not self.coarse_levels:
            raise ConfigError("coarse_levels must be nonempty")
        if min(self.coarse_levels) < 0 or max(self.coarse_levels) > self.eps_level:
            raise ConfigError("need 0 <= coarse level <= eps_level")
        if self.eps_level > self.fine_level:
            raise ConfigError("need eps_level <= fine_level")
        if not (0 < self.alpha <= self.beta):
            raise ConfigError("need 0 < alpha <= beta")
        if self.N_avg < 1 or self.N_eval < 1:
            raise ConfigError("N_avg and N_eval must be at least 1")
        if self.ell != "auto" and (not isinstance(self.ell, int) or self.ell < 0):
            raise ConfigError("ell must be a nonnegative integer or 'auto'")
        if self.f != 1.0:
            raise ConfigError("only the constant load f = 1 is supported")
        if self.gamma_pass not in ("cache", "regenerate"):
            raise ConfigError("gamma_pass must be 'cache' or 'regenerate'")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be nonnegative")

    def ell_for(self, level: int) -> int:
        return level + 1 if self.ell == "auto" else int(self.ell)

    @property
    def model(self) -> FieldModel:
        return FieldModel(self.alpha, self.beta, self.eps_level, self.master_seed)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def output_path(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)


@dataclass
class LevelResult:
    coarse_level: int
    H: float
    ell: int
    quasilocal: QuasilocalTensor
    local: LocalTensor
    report: EstimatorReport
    coercivity_margin: float
    errors: Optional[ErrorRow] = None


class MultiLevelUpscaler:
    """Per-sample quasilocal tensors for several coarse levels sharing one fine assembly."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.hierarchy = MeshHierarchy(min(config.coarse_levels), config.eps_level,
                                       config.fine_level)
        self.upscalers = [SampleUpscaler(self.hierarchy.with_coarse_level(c), config.ell_for(c))
                          for c in config.coarse_levels]
        self.model = config.model

    def prepare(self) -> None:
        for up in self.upscalers:
            up.prepare()

    def sample_blocks(self, index: int) -> List[np.ndarray]:
        h = self.hierarchy
        A = restrict_to_fine(draw_sample(self.model, h, index), h)
        nontrivial = [up for up in self.upscalers if not up.level.trivial]
        data = nontrivial[0].level.stiffness_values(A) if nontrivial else None
        return [up.compute(A, data).blocks for up in self.upscalers]

    def reference(self, index: int) -> np.ndarray:
        h = self.hierarchy
        return solve_reference(h, draw_sample(self.model, h, index, EVALUATION_STREAM),
                               self.config.f).values


def run_upscale(config: ExperimentConfig, threads: int = 1) -> tuple[List[LevelResult], dict]:
    """Monte Carlo averages and estimators for every coarse level."""
    t0 = time.perf_counter()
    mlu = MultiLevelUpscaler(config)
    mlu.prepare()
    t_setup = time.perf_counter() - t0
    nlev = len(config.coarse_levels)
    means = [BlockMean() for _ in range(nlev)]
    kept = [[] for _ in range(nlev)] if config.gamma_pass == "cache" else None

    with ordered_map(mlu.sample_blocks, threads) as pmap:
        for i, per_level in enumerate(pmap(mlu.sample_blocks, range(config.N_avg))):
            for k, b in enumerate(per_level):
                means[k].add(b)
                if kept is not None:
                    kept[k].append(b)
            log.info("averaging sample %d/%d", i + 1, config.N_avg)
        averaged = [up.empty().with_blocks(m.mean()) for up, m in zip(mlu.upscalers, means)]
        if kept is not None:
            streams = kept
        else:
            # second pass regenerates every sample from its seed
            streams = [[] for _ in range(nlev)]
            for per_level in pmap(mlu.sample_blocks, range(config.N_avg)):
                for k, b in enumerate(per_level):
                    streams[k].append(b)
    t_avg = time.perf_counter() - t0 - t_setup

    results = []
    for k, c in enumerate(config.coarse_levels):
        mesh = mlu.hierarchy.levels[c]
        stats = fluctuation_stats(averaged[k], streams[k], mesh)
        local = compress_local(averaged[k], mesh)
        report = build_report(stats, averaged[k], local, mesh, config.alpha, config.beta)
        margin = coercivity_margin(assemble_bilinear(averaged[k], mesh))
        results.append(LevelResult(c, mesh.mesh_size, config.ell_for(c), averaged[k], local,
                                   report, margin))
    timings = {"setup_s": t_setup, "averaging_s": t_avg,
               "total_s": time.perf_counter() - t0, "threads": threads,
               "hierarchy": mlu.hierarchy, "upscaler": mlu}
    return results, timings


def validate_models(results: List[LevelResult]) -> List[str]:
    problems = []
    for r in results:
        if not r.coercivity_margin > 0:
            problems.append(f"level {r.coarse_level}: quasilocal operator not coercive "
                            f"(margin {r.coercivity_margin:.3e})")
        if not r.report.admissibility["admissible"]:
            a = r.report.admissibility
            problems.append(f"level {r.coarse_level}: local tensor outside "
                            f"[{a['lower']}, {a['upper']}] (eigenvalues "
                            f"[{a['sym_eig_min']:.4g}, {a['sym_eig_max']:.4g}])")
    return problems


def run_convergence(config: ExperimentConfig, threads: int = 1):
    results, timings = run_upscale(config, threads)
    problems = validate_models(results)
    if problems:
        raise ModelInvalidError("; ".join(problems))
    mlu: MultiLevelUpscaler = timings.pop("upscaler")
    h = mlu.hierarchy
    t0 = time.perf_counter()
    with ordered_map(mlu.reference, threads) as pmap:
        refs = list(pmap(mlu.reference, range(config.N_eval)))
    t_ref = time.perf_counter() - t0
    for r in results:
        mesh = h.levels[r.coarse_level]
        u_ql = solve_quasilocal(r.quasilocal, mesh, config.f)
        u_loc = solve_local(r.local, mesh, config.f, config.alpha, config.beta)
        r.errors = error_norms(refs, u_ql, u_loc, h)
    timings["reference_s"] = t_ref
    timings["upscaler"] = mlu
    return results, timings


# --- output --------------------------------------------------------------

UPSCALE_COLUMNS = ["coarse_level", "H", "eps", "h", "ell", "N_avg", "gamma", "gamma_scaled",
                   "eta", "sym_eig_min", "sym_eig_max", "admissible", "coercivity_margin"]
ERROR_COLUMNS = ["err_ql", "err_loc", "experr_ql", "experr_loc",
                 "rel_err_ql", "rel_err_loc", "rel_experr_ql", "rel_experr_loc"]
ORDER_COLUMNS = ["order_err_ql", "order_err_loc", "order_experr_ql", "order_experr_loc"]
CONVERGENCE_COLUMNS = (["coarse_level", "H", "eps", "h", "ell", "N_avg", "N_eval"]
                       + ERROR_COLUMNS + ["gamma", "gamma_scaled", "eta"] + ORDER_COLUMNS)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _common(r: LevelResult, config: ExperimentConfig, h: MeshHierarchy) -> dict:
    return {"coarse_level": r.coarse_level, "H": r.H, "eps": h.levels[config.eps_level].mesh_size,
            "h": h.levels[config.fine_level].mesh_size, "ell": r.ell, "N_avg": config.N_avg}


def upscale_rows(results, config, h) -> List[dict]:
    rows = []
    for r in results:
        a = r.report.admissibility
        row = _common(r, config, h)
        row.update(gamma=r.report.gamma, gamma_scaled=r.report.gamma_scaled, eta=r.report.eta,
                   sym_eig_min=a["sym_eig_min"], sym_eig_max=a["sym_eig_max"],
                   admissible=a["admissible"], coercivity_margin=r.coercivity_margin)
        rows.append(row)
    return rows


def convergence_rows(results, config, h) -> List[dict]:
    rows = []
    prev = None
    for r in results:
        e = r.errors
        row = _common(r, config, h)
        row["N_eval"] = config.N_eval
        row.update(err_ql=e.err_ql, err_loc=e.err_loc, experr_ql=e.experr_ql,
                   experr_loc=e.experr_loc, **e.relative)
        row.update(gamma=r.report.gamma, gamma_scaled=r.report.gamma_scaled, eta=r.report.eta)
        for col, src in zip(ORDER_COLUMNS, ["err_ql", "err_loc", "experr_ql", "experr_loc"]):
            row[col] = (math.log(prev[src] / row[src]) / math.log(prev["H"] / row["H"])
                        if prev is not None and row[src] > 0 and prev[src] > 0 else None)
        rows.append(row)
        prev = row
    return rows


def write_csv(path: Path, rows: List[dict], columns: List[str], kind: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"{SCHEMA} ({kind})\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def read_csv(path) -> List[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rdr = csv.DictReader(lines)
    out = []
    for row in rdr:
        out.append({k: (float(v) if v not in ("",) else None) for k, v in row.items()})
    return out


def write_outputs(results, timings, config: ExperimentConfig, kind: str) -> Path:
    h: MeshHierarchy = timings["hierarchy"]
    out = config.output_path()
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    for r in results:
        with open(out / "tensors" / f"level{r.coarse_level}.json", "w") as fh:
            json.dump({"quasilocal": r.quasilocal.to_dict(), "local": r.local.to_dict()}, fh)
    if kind == "upscale":
        write_csv(out / "results.csv", upscale_rows(results, config, h), UPSCALE_COLUMNS, kind)
    else:
        write_csv(out / "results.csv", convergence_rows(results, config, h),
                  CONVERGENCE_COLUMNS, kind)
    report = {
        "kind": kind,
        "config": asdict(config),
        "levels": [{"coarse_level": r.coarse_level, "H": r.H, "ell": r.ell,
                    "coercivity_margin": r.coercivity_margin, "estimators": r.report.to_dict()}
                   for r in results],
        "timings": {k: v for k, v in timings.items() if isinstance(v, (int, float))},
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=1)
    return out
