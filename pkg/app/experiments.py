"""Monte-Carlo runs: scaled constants, splicing gaps on planted gadgets, and B&B tree growth.

Every trial derives its seed from the master seed through numpy's SeedSequence, so a
RunConfig fully determines the report. Reports are written as CSV (one row per trial)
plus a JSON document that embeds the config and the aggregated statistics.
"""

from __future__ import annotations

import concurrent.futures
import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Literal, Sequence

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator

from app.bnb import BoundSpec, CensusRun, GrowthTable, branch_and_bound, leaf_census, verify_certificate
from app.combs import comb_lp, separate_combs
from app.config import DP_MAX_N, EXACT_LIMIT, RUN_PRESETS_FILE, logger
from app.errors import InvalidArgumentError, InvariantError
from app.gadget_solution import splice
from app.instance import (
    OUTER_RADIUS,
    CopySpec,
    PointSet,
    build_gadget,
    collinear_points,
    find_copies,
    generate_uniform,
    plant_gadget_copies,
    rescale,
    triangle_template,
    verify_copy,
)
from app.io_formats import dump_json
from app.lp_core import held_karp
from app.stats import summarize_column
from app.tsp_solvers import Tour, exact_tsp_dp, heuristic_tour

SCHEMA_VERSION = 1
SANDWICH_TOL = 1e-6
HK_CRITERION_MIN_N = 14


class RunConfig(BaseModel):
    """One experiment run; every field lands in the report for reproducibility."""

    name: str = "run"
    n_grid: list[int] = Field(default_factory=lambda: [8, 10, 12])
    d: int = Field(default=2, ge=2)
    c: int = Field(default=6, ge=2)
    trials: int = Field(default=10, ge=1)
    seed: int = Field(default=0, ge=0)
    exact_limit: int = Field(default=EXACT_LIMIT, ge=3)
    exact_tours: bool = True
    k: int = Field(default=8, ge=4)
    copies: int = Field(default=1, ge=0)
    anchors: int = Field(default=8, ge=3)
    eps: float = Field(default=0.05, gt=0)
    D: float = Field(default=1.0, gt=0)
    density_eps: float = Field(default=0.1, gt=0)
    density_D: float = Field(default=0.5, gt=0)
    check: bool = False
    bound: Literal["hk", "comb"] = "hk"
    families: list[Literal["uniform", "collinear"]] = Field(default_factory=lambda: ["uniform"])
    workers: int = Field(default=1, ge=1)
    out_dir: str | None = None

    @field_validator("n_grid")
    @classmethod
    def _grid(cls, value: list[int]) -> list[int]:
        if not value or any(n < 3 for n in value):
            raise ValueError("n_grid necesita valores >= 3")
        return sorted(set(value))

    def bound_spec(self) -> BoundSpec:
        return BoundSpec.hk() if self.bound == "hk" else BoundSpec.comb(self.c)


class RunPresetsFile(BaseModel):
    presets: dict[str, RunConfig]


def load_presets(path: Path = RUN_PRESETS_FILE) -> dict[str, RunConfig]:
    """Named RunConfig presets; an unreadable or invalid file yields no presets."""
    if not path.exists():
        logger.warning(f"Archivo de presets no encontrado: {path}")
        return {}
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        parsed = RunPresetsFile.model_validate(data)
    except (OSError, yaml.YAMLError, ValidationError) as exc:
        logger.error(f"run_presets.yaml invalido: {exc}")
        return {}
    return {name: cfg.model_copy(update={"name": name}) for name, cfg in parsed.presets.items()}


def load_preset(name: str, path: Path = RUN_PRESETS_FILE) -> RunConfig:
    presets = load_presets(path)
    if name not in presets:
        raise InvalidArgumentError(f"Preset desconocido: {name!r} (disponibles: {sorted(presets)}).")
    return presets[name]


def trial_seeds(master: int, n: int, trials: int) -> list[int]:
    """Distinct per-trial seeds spawned from (master, n)."""
    children = np.random.SeedSequence([master, n]).spawn(trials)
    seeds = [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]
    if len(set(seeds)) != len(seeds):
        raise InvariantError("Semillas de ensayo repetidas.")
    return seeds


def _run_trials(fn: Callable[..., Any], tasks: Sequence[tuple], workers: int) -> list[Any]:
    if workers < 2 or len(tasks) < 2:
        return [fn(*task) for task in tasks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, *zip(*tasks)))


def best_tour(X: PointSet, exact_limit: int, seed: int, certify: bool = True) -> tuple[Tour, bool]:
    """Optimal tour and whether it is certified.

    DP when n <= min(exact_limit, DP_MAX_N); above that a Held-Karp branch and bound seeded
    with the heuristic tour, or the heuristic alone (flagged False) when certify is off.
    """
    if X.n <= min(exact_limit, DP_MAX_N):
        return exact_tsp_dp(X), True
    incumbent = heuristic_tour(X, seed)
    if not certify:
        return incumbent, False
    result = branch_and_bound(X, BoundSpec.hk(), incumbent=incumbent, seed=seed)
    problems = verify_certificate(result)
    if problems:
        logger.error(f"Certificado B&B invalido (n={X.n}): {problems[:3]}")
        raise InvariantError("El arbol podado no certifica el tour.")
    logger.debug(f"Tour certificado por B&B: n={X.n}, {result.stats.nodes_expanded} nodos.")
    return result.tour, True


def check_sandwich(hk: float, comb: float, tsp: float, tol: float = SANDWICH_TOL) -> None:
    slack = tol * max(1.0, abs(tsp))
    if hk > comb + slack or comb > tsp + slack:
        logger.error(f"Sandwich violado: HK={hk:.9f} Comb={comb:.9f} TSP={tsp:.9f}")
        raise InvariantError("Se violo HK <= Comb_c <= TSP.")


# --- Scaled constants ---


@dataclass(frozen=True)
class ConstantsRow:
    n: int
    d: int
    c: int
    seed: int
    tsp: float
    tsp_exact: bool
    hk: float
    comb: float
    tsp_scaled: float
    hk_scaled: float
    comb_scaled: float
    ratio_hk: float
    ratio_comb: float
    triangle_copies: int
    copy_density: float


def count_triangle_copies(X: PointSet, eps: float, D: float) -> int:
    """Disjoint (eps, D)-copies of the small triangle template after scaling X to unit density."""
    unit = rescale(X, X.n ** (1.0 / X.dim))
    return len(find_copies(unit, CopySpec(triangle_template(d=X.dim), eps, D)))


def constants_trial(
    n: int,
    d: int,
    c: int,
    seed: int,
    exact_limit: int,
    exact_tours: bool,
    density_eps: float,
    density_D: float,
) -> ConstantsRow:
    X = generate_uniform(n, d, seed)
    tour, exact = best_tour(X, exact_limit, seed, exact_tours)
    hk = held_karp(X).value
    comb = comb_lp(X, c).value
    check_sandwich(hk, comb, tour.length)
    scale = n ** ((d - 1) / d)
    copies = count_triangle_copies(X, density_eps, density_D)
    return ConstantsRow(
        n=n,
        d=d,
        c=c,
        seed=seed,
        tsp=tour.length,
        tsp_exact=exact,
        hk=hk,
        comb=comb,
        tsp_scaled=tour.length / scale,
        hk_scaled=hk / scale,
        comb_scaled=comb / scale,
        ratio_hk=hk / tour.length,
        ratio_comb=comb / tour.length,
        triangle_copies=copies,
        copy_density=copies / n,
    )


@dataclass(frozen=True)
class ExperimentReport:
    kind: str
    config: RunConfig
    rows: tuple[dict[str, Any], ...]
    summary: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "config": self.config.model_dump(),
            "summary": self.summary,
            "rows": list(self.rows),
        }


def _summaries(rows: Sequence[dict[str, Any]], group: str, columns: Sequence[str]) -> dict[str, Any]:
    summary: dict[str, Any] = {}
    for key in sorted({row[group] for row in rows}):
        chunk = [row for row in rows if row[group] == key]
        summary[str(key)] = {
            column: summarize_column([row[column] for row in chunk], seed=int(key)).to_dict() for column in columns
        }
    return summary


def estimate_constants(cfg: RunConfig) -> ExperimentReport:
    """HK, Comb_c and tour lengths on uniform points for every n of the grid."""
    tasks = [
        (n, cfg.d, cfg.c, seed, cfg.exact_limit, cfg.exact_tours, cfg.density_eps, cfg.density_D)
        for n in cfg.n_grid
        for seed in trial_seeds(cfg.seed, n, cfg.trials)
    ]
    results = _run_trials(constants_trial, tasks, cfg.workers)
    rows = tuple(asdict(row) for row in sorted(results, key=lambda r: (r.n, r.seed)))
    summary: dict[str, Any] = _summaries(
        rows, "n", ("tsp_scaled", "hk_scaled", "comb_scaled", "ratio_hk", "ratio_comb", "copy_density")
    )
    summary["criteria"] = constants_criteria(rows, summary)
    logger.info(f"Constantes: {len(rows)} ensayos sobre n={cfg.n_grid}.")
    return ExperimentReport("constants", cfg, rows, summary)


def constants_criteria(rows: Sequence[dict[str, Any]], summary: dict[str, Any]) -> dict[str, bool]:
    """HK/TSP interval strictly below 1 for every n >= HK_CRITERION_MIN_N with certified tours."""
    checked = [
        n for n in sorted({row["n"] for row in rows})
        if n >= HK_CRITERION_MIN_N and all(row["tsp_exact"] for row in rows if row["n"] == n)
    ]
    return {"hk_ratio_below_one": all(summary[str(n)]["ratio_hk"]["ci"]["high"] < 1.0 for n in checked)}


# --- Splicing gap ---


@dataclass(frozen=True)
class GapRow:
    seed: int
    n: int
    copies: int
    spliced_copies: int
    skipped_copies: int
    tour_length: float
    tour_exact: bool
    spliced_value: float
    gap: float
    comb_clean: bool
    mean_copy_gap: float


def gap_instance(k: int, copies: int, anchors: int, D: float, seed: int) -> tuple[PointSet, list]:
    """Gadget copies planted into `anchors` uniform points spread over a box that fits them.

    Base points within the isolation disc of a copy are dropped, so n varies per trial.
    """
    base_seed, plant_seed = (
        int(child.generate_state(1, dtype=np.uint32)[0]) for child in np.random.SeedSequence(seed).spawn(2)
    )
    side = 2 * (OUTER_RADIUS + D) * (math.ceil(math.sqrt(max(copies, 1))) + 1)
    base = rescale(generate_uniform(anchors, 2, base_seed), side)
    return plant_gadget_copies(base, k, copies, D, plant_seed)


def gap_trial(
    k: int,
    c: int,
    copies: int,
    anchors: int,
    eps: float,
    D: float,
    exact_limit: int,
    exact_tours: bool,
    seed: int,
) -> GapRow | None:
    try:
        X, metas = gap_instance(k, copies, anchors, D, seed)
    except InvalidArgumentError as e:
        logger.warning(f"Ensayo {seed}: {e} Se descarta.")
        return None
    template, _ = build_gadget(k)
    if X.n - template.n * copies < 2:
        logger.warning(f"Ensayo {seed}: quedan muy pocos puntos fuera de las copias; se descarta.")
        return None
    for meta in metas:
        if not verify_copy(X, template, list(meta.all_ids), eps, D):
            logger.warning(f"Ensayo {seed}: copia plantada sin aislamiento; se descarta.")
            return None
    tour, exact = best_tour(X, exact_limit, seed, exact_tours)
    result = splice(X, tour.order, metas, c, strict=False)
    comb_clean = separate_combs(result.solution, c) is None
    gaps = [copy.gap for copy in result.spliced]
    return GapRow(
        seed=seed,
        n=X.n,
        copies=copies,
        spliced_copies=len(result.spliced),
        skipped_copies=len(result.skipped),
        tour_length=tour.length,
        tour_exact=exact,
        spliced_value=result.value,
        gap=result.tour_length - result.value,
        comb_clean=comb_clean,
        mean_copy_gap=float(np.mean(gaps)) if gaps else 0.0,
    )


def gap_experiment(cfg: RunConfig) -> ExperimentReport:
    """Splice the local half-integral solution into tours of planted-gadget instances."""
    seeds = trial_seeds(cfg.seed, cfg.k, cfg.trials)
    tasks = [
        (cfg.k, cfg.c, cfg.copies, cfg.anchors, cfg.eps, cfg.D, cfg.exact_limit, cfg.exact_tours, seed)
        for seed in seeds
    ]
    results = [row for row in _run_trials(gap_trial, tasks, cfg.workers) if row is not None]
    rows = tuple(asdict(row) for row in sorted(results, key=lambda r: r.seed))
    if not rows:
        raise InvariantError("Todos los ensayos de gap fueron descartados.")
    summary: dict[str, Any] = {
        "trials_kept": len(rows),
        "trials_discarded": cfg.trials - len(rows),
        "all_comb_clean": all(row["comb_clean"] for row in rows),
        "all_below_tour": all(row["spliced_value"] < row["tour_length"] for row in rows if row["spliced_copies"]),
        "gap": summarize_column([row["gap"] for row in rows], seed=cfg.seed).to_dict(),
    }
    if cfg.copies:
        summary["copy_gap"] = summarize_column([row["mean_copy_gap"] for row in rows], seed=cfg.seed).to_dict()
    summary["criteria"] = gap_criteria(rows, summary)
    logger.info(f"Gap: {len(rows)} ensayos (k={cfg.k}, c={cfg.c}, copias={cfg.copies}).")
    return ExperimentReport("gap", cfg, rows, summary)


def gap_criteria(rows: Sequence[dict[str, Any]], summary: dict[str, Any]) -> dict[str, bool]:
    """Every trial spliced, certified and comb-clean below its tour; mean gap positive at the CI level."""
    return {
        "comb_clean": all(row["comb_clean"] for row in rows),
        "exact_tours": all(row["tour_exact"] for row in rows),
        "spliced_below_tour": all(
            row["spliced_copies"] >= 1 and row["spliced_value"] < row["tour_length"] for row in rows
        ),
        "gap_positive": summary["gap"]["ci"]["low"] > 0.0,
    }


# --- Tree growth ---


def _family_instance(family: str, n: int, seed: int) -> PointSet:
    if family == "collinear":
        return collinear_points(n, seed)
    return generate_uniform(n, 2, seed)


def growth_trial(family: str, n: int, seed: int, bound: BoundSpec) -> CensusRun:
    X = _family_instance(family, n, seed)
    result = branch_and_bound(X, bound, seed=seed)
    return CensusRun(n=n, seed=seed, leaves=result.stats.leaves, nodes=result.stats.nodes_expanded, family=family)


def tree_growth_experiment(cfg: RunConfig) -> tuple[ExperimentReport, GrowthTable]:
    """Pruned-tree leaf counts per family and n, summarised by leaf_census."""
    bound = cfg.bound_spec()
    tasks = [
        (family, n, seed, bound)
        for family in cfg.families
        for n in cfg.n_grid
        for seed in trial_seeds(cfg.seed, n, cfg.trials)
    ]
    runs = _run_trials(growth_trial, tasks, cfg.workers)
    runs = sorted(runs, key=lambda r: (r.family, r.n, r.seed))
    table = leaf_census(runs)
    rows = tuple(asdict(run) for run in runs)
    summary = {"bound": bound.label, **table.to_dict(), "criteria": growth_criteria(table)}
    logger.info(f"Crecimiento del arbol: {len(runs)} corridas, pendientes {table.slopes}.")
    return ExperimentReport("growth", cfg, rows, summary), table


def growth_criteria(table: GrowthTable) -> dict[str, bool]:
    """Uniform median leaves never shrink with n; collinear medians stay flat."""
    medians: dict[str, list[float]] = {}
    for row in sorted(table.rows, key=lambda r: (r.family, r.n)):
        medians.setdefault(row.family, []).append(row.median_leaves)
    criteria: dict[str, bool] = {}
    if "uniform" in medians:
        series = medians["uniform"]
        criteria["uniform_nondecreasing"] = all(a <= b for a, b in zip(series, series[1:]))
    if "collinear" in medians:
        criteria["collinear_flat"] = len(set(medians["collinear"])) == 1
    return criteria


def failed_criteria(report: ExperimentReport) -> list[str]:
    return [name for name, passed in report.summary.get("criteria", {}).items() if not passed]


# --- Output ---


def write_csv(rows: Sequence[dict[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    fieldnames = ["schema_version"] + (list(rows[0].keys()) if rows else [])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({"schema_version": SCHEMA_VERSION, **row})
    except OSError as e:
        raise OSError(f"No se pudo escribir el CSV {path}: {e}") from e
    return path


def write_report(report: ExperimentReport, out_dir: str | Path) -> tuple[Path, Path]:
    """`<name>_<kind>.csv` and `.json` under out_dir; byte-identical for identical configs."""
    out_dir = Path(out_dir)
    stem = f"{report.config.name}_{report.kind}"
    csv_path = write_csv(report.rows, out_dir / f"{stem}.csv")
    json_path = out_dir / f"{stem}.json"
    try:
        json_path.write_text(dump_json(report.to_dict()), encoding="utf-8")
    except OSError as e:
        raise OSError(f"No se pudo escribir el reporte {json_path}: {e}") from e
    logger.info(f"Reporte escrito en {csv_path} y {json_path}.")
    return csv_path, json_path


def write_svg_line_chart(
    rows: Sequence[dict[str, Any]],
    x: str,
    y: str,
    path: str | Path,
    series: str | None = None,
    width: int = 480,
    height: int = 320,
) -> Path:
    """Polyline per series of y against x, with the axis ranges printed in the corners."""
    if not rows:
        raise InvalidArgumentError("No hay filas para graficar.")
    groups: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        key = str(row[series]) if series else y
        groups.setdefault(key, []).append((float(row[x]), float(row[y])))
    xs = [p[0] for pts in groups.values() for p in pts]
    ys = [p[1] for pts in groups.values() for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    pad = 40

    def sx(v: float) -> float:
        return pad + (v - x0) / ((x1 - x0) or 1.0) * (width - 2 * pad)

    def sy(v: float) -> float:
        return height - pad - (v - y0) / ((y1 - y0) or 1.0) * (height - 2 * pad)

    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - 10}" font-size="11">{x}: {x0:g} .. {x1:g}</text>',
        f'<text x="5" y="{pad - 10}" font-size="11">{y}: {y0:.4g} .. {y1:.4g}</text>',
    ]
    for idx, (name, pts) in enumerate(sorted(groups.items())):
        color = palette[idx % len(palette)]
        coords = " ".join(f"{sx(px):.1f},{sy(py):.1f}" for px, py in sorted(pts))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 14 * idx}" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"No se pudo escribir el grafico {path}: {e}") from e
    return path
