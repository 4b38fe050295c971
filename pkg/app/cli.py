"""Command-line surface: python -m app.cli <subcommand> [flags].

Exit codes: 0 success, 2 invalid arguments, 3 invariant breach (or a failed criterion
under --check), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Any, Sequence

from app.bnb import BoundSpec, branch_and_bound, verify_certificate
from app.combs import comb_lhs, comb_lp, separate_combs
from app.config import EXACT_LIMIT, REPORTS_DIR, logger
from app.errors import InvalidArgumentError, InvariantError, LabError, LPError
from app.experiments import (
    RunConfig,
    estimate_constants,
    failed_criteria,
    gap_experiment,
    load_preset,
    tree_growth_experiment,
    write_report,
    write_svg_line_chart,
)
from app.gadget_solution import build_gadget_solution, dump_support_graph, local_lengths, verify_gadget_lemmas
from app.instance import PointSet, build_gadget, collinear_points, generate_uniform
from app.io_formats import (
    CombModel,
    dump_json,
    format_points,
    load_model,
    load_points,
    load_tsplib,
    save_gadget_meta,
    save_points,
    tour_model,
    write_json,
)
from app.lp_core import EdgeFixings, build_model, held_karp, write_lp_file

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INVARIANT = 3
EXIT_IO = 4


def _emit(data: Any, fmt: str) -> None:
    if fmt == "csv":
        rows = data if isinstance(data, list) else [data]
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        sys.stdout.write(buffer.getvalue())
    else:
        sys.stdout.write(dump_json(data))


def _instance(args: argparse.Namespace) -> PointSet:
    if getattr(args, "points", None):
        path = Path(args.points)
        return load_tsplib(path) if path.suffix.lower() == ".tsp" else load_points(path)
    n = args.n[0] if isinstance(args.n, list) else args.n
    if n is None:
        raise InvalidArgumentError("Indica --points o --n.")
    return generate_uniform(n, args.d, args.seed)


def cmd_gen(args: argparse.Namespace) -> int:
    n = args.n[0]
    X = collinear_points(n, args.seed) if args.collinear else generate_uniform(n, args.d, args.seed)
    if args.out:
        save_points(X, args.out)
        logger.info(f"Instancia n={X.n} d={X.dim} guardada en {args.out}.")
    else:
        sys.stdout.write(format_points(X))
    return EXIT_OK


def cmd_gadget(args: argparse.Namespace) -> int:
    gadget, meta = build_gadget(args.k, args.scale)
    sol = build_gadget_solution(meta, args.c, args.entry_mode, strict=not args.no_strict)
    report = local_lengths(meta, sol)
    data: dict[str, Any] = {"gap": report.to_dict(), "solution": sol.to_dict()}
    if args.verify:
        data["lemmas"] = verify_gadget_lemmas(sol, args.c).to_dict()
    if args.out:
        out = Path(args.out)
        save_points(gadget, out / "gadget_points.txt")
        save_gadget_meta(meta, out / "gadget_meta.json")
        write_json(out / "gadget_solution.json", data)
        dump_support_graph(sol.closed(), out / "gadget_support.edgelist")
    _emit(data if args.format == "json" else report.to_dict(), args.format)
    return EXIT_OK


def cmd_hk(args: argparse.Namespace) -> int:
    X = _instance(args)
    result = held_karp(X)
    if args.dump_lp:
        pool_rows = result.pool.rows() if result.pool is not None else []
        write_lp_file(build_model(X, EdgeFixings(), pool_rows), args.dump_lp)
    _emit({"n": X.n, "hk": result.value, "cuts": result.cuts_added, "iterations": result.iterations}, args.format)
    return EXIT_OK


def cmd_combs(args: argparse.Namespace) -> int:
    X = _instance(args)
    hk = held_karp(X)
    violated = separate_combs(hk.solution, args.c) if hk.solution is not None else None
    result = comb_lp(X, args.c)
    data = {
        "n": X.n,
        "c": args.c,
        "hk": hk.value,
        "comb": result.value,
        "cuts": result.cuts_added,
        "violated_at_hk": violated.to_dict() if violated is not None else None,
    }
    if args.comb:
        given = load_model(args.comb, CombModel).to_comb()
        data["given_comb_lhs"] = comb_lhs(hk.solution, given)
        data["given_comb_rhs"] = given.rhs
    if args.out and violated is not None:
        write_json(args.out, violated.to_dict())
    _emit(data, args.format)
    return EXIT_OK


def cmd_bnb(args: argparse.Namespace) -> int:
    X = _instance(args)
    bound = BoundSpec.hk() if args.bound == "hk" else BoundSpec.comb(args.c)
    result = branch_and_bound(X, bound, seed=args.seed, node_log=args.node_log)
    problems = verify_certificate(result)
    if problems:
        logger.error(f"Certificado B&B invalido: {problems}")
        raise InvariantError("El arbol podado no certifica el optimo.")
    if args.out:
        write_json(args.out, tour_model(result.tour).model_dump())
    data = {"n": X.n, "bound": bound.label, "length": result.tour.length, "order": list(result.tour.order)}
    data.update(result.stats.to_dict())
    if args.format == "csv":
        data = {key: value for key, value in data.items() if not isinstance(value, list)}
    _emit(data, args.format)
    return EXIT_OK


def _run_config(args: argparse.Namespace, kind: str) -> RunConfig:
    base = load_preset(args.preset) if args.preset else RunConfig(name=kind)
    updates: dict[str, Any] = {}
    for field in ("d", "c", "k", "trials", "seed", "workers", "copies", "anchors", "bound"):
        value = getattr(args, field, None)
        if value is not None:
            updates[field] = value
    if args.n:
        updates["n_grid"] = args.n
    if args.exact_limit is not None:
        updates["exact_limit"] = args.exact_limit
    for flag in ("check", "exact_tours"):
        if getattr(args, flag, None) is not None:
            updates[flag] = getattr(args, flag)
    if getattr(args, "families", None):
        updates["families"] = args.families
    if args.out:
        updates["out_dir"] = args.out
    return RunConfig.model_validate({**base.model_dump(), **updates})


def _finish(report, args: argparse.Namespace, chart: tuple[str, str, str | None] | None = None) -> int:
    out_dir = Path(report.config.out_dir) if report.config.out_dir else REPORTS_DIR
    write_report(report, out_dir)
    if chart is not None and report.rows:
        x, y, series = chart
        write_svg_line_chart(list(report.rows), x, y, out_dir / f"{report.config.name}_{report.kind}.svg", series)
    if args.format == "csv":
        _emit(list(report.rows), "csv")
    else:
        _emit(report.to_dict(), "json")
    failed = failed_criteria(report)
    if failed:
        logger.warning(f"{report.kind}: criterios no cumplidos {failed}")
        if report.config.check:
            logger.error(f"{report.kind}: la corrida verificada falla {failed}")
            return EXIT_INVARIANT
    return EXIT_OK


def cmd_constants(args: argparse.Namespace) -> int:
    return _finish(estimate_constants(_run_config(args, "constants")), args, ("n", "ratio_hk", None))


def cmd_gap(args: argparse.Namespace) -> int:
    return _finish(gap_experiment(_run_config(args, "gap")), args)


def cmd_growth(args: argparse.Namespace) -> int:
    report, _ = tree_growth_experiment(_run_config(args, "growth"))
    return _finish(report, args, ("n", "leaves", "family"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsplab", description="Laboratorio de cotas LP para el TSP euclidiano.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, experiment: bool = False) -> None:
        p.add_argument("--n", type=int, nargs="+", default=None)
        p.add_argument("--d", type=int, default=None if experiment else 2)
        p.add_argument("--c", type=int, default=None if experiment else 6)
        p.add_argument("--seed", type=int, default=None if experiment else 0)
        p.add_argument("--out", default=None)
        p.add_argument("--format", choices=("csv", "json"), default="json")
        p.add_argument("--exact-limit", dest="exact_limit", type=int, default=None if experiment else EXACT_LIMIT)

    p = sub.add_parser("gen", help="generar puntos uniformes")
    common(p)
    p.add_argument("--collinear", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("gadget", help="gadget, solucion semientera y gap local")
    common(p)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--entry-mode", dest="entry_mode", type=int, choices=(1, 2), default=1)
    p.add_argument("--no-strict", dest="no_strict", action="store_true")
    p.add_argument("--verify", action="store_true")
    p.set_defaults(func=cmd_gadget)

    for name, func, text in (
        ("hk", cmd_hk, "cota de Held-Karp"),
        ("combs", cmd_combs, "cota Comb_c y peine mas violado"),
        ("bnb", cmd_bnb, "branch and bound certificado"),
    ):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--points", default=None)
        if name == "hk":
            p.add_argument("--dump-lp", dest="dump_lp", default=None)
        if name == "combs":
            p.add_argument("--comb", default=None, help="peine en JSON a evaluar sobre la solucion HK")
        if name == "bnb":
            p.add_argument("--bound", choices=("hk", "comb"), default="hk")
            p.add_argument("--node-log", dest="node_log", default=None)
        p.set_defaults(func=func)

    for name, func, text in (
        ("constants", cmd_constants, "estimacion Monte-Carlo de constantes escaladas"),
        ("gap", cmd_gap, "gap de empalme sobre gadgets plantados"),
        ("growth", cmd_growth, "crecimiento del arbol podado"),
    ):
        p = sub.add_parser(name, help=text)
        common(p, experiment=True)
        p.add_argument("--preset", default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        if name == "gap":
            p.add_argument("--copies", type=int, default=None)
            p.add_argument("--anchors", type=int, default=None)
        if name == "growth":
            p.add_argument("--bound", choices=("hk", "comb"), default=None)
            p.add_argument("--families", nargs="+", choices=("uniform", "collinear"), default=None)
        p.add_argument("--check", action="store_true", default=None, help="salir con 3 si falla un criterio")
        p.add_argument("--no-exact-tours", dest="exact_tours", action="store_false", default=None)
        p.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen" and not args.n:
        parser.error("gen requiere --n")
    try:
        return args.func(args)
    except (InvalidArgumentError, ValueError) as e:
        logger.error(f"Argumentos invalidos: {e}")
        return EXIT_INVALID
    except (InvariantError, LPError) as e:
        logger.error(f"Invariante violado: {e}")
        return EXIT_INVARIANT
    except OSError as e:
        logger.error(f"Error de E/S: {e}")
        return EXIT_IO
    except LabError as e:
        logger.error(f"Error del laboratorio: {e}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
