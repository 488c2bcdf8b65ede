"""Command-line entry point (``vnfpp``).

Exit codes: 0 success, 1 usage or bad parameter, 2 invalid or infeasible
instance, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import des, evo, heuristics, qos, report, surrogates
from .encoding import decode
from .errors import (
    ConvergenceError,
    InfeasibleInstanceError,
    InfeasibleSubproblemError,
    InstanceFormatError,
    InstanceValidationError,
    InvalidParameterError,
)
from .hypervolume import nondominated_mask, normalized_hypervolumes
from .topology import build_fat_tree
from .workload import generate_instance, load_instance, save_instance

log = logging.getLogger("vnfpp")

EXIT_OK, EXIT_USAGE, EXIT_INSTANCE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- generate ------------------------------------------------------------------


def cmd_generate(args) -> int:
    topo = build_fat_tree(args.k, args.vms_per_server)
    inst = generate_instance(
        topo,
        args.util,
        service_len_dist=(args.length_mean, args.length_std),
        arrival_rate_dist=(args.rate_mean, args.rate_std),
        vnf_rate_dist=(args.vnf_rate_mean, args.vnf_rate_std),
        seed=args.seed,
        anti_affinity=args.anti_affinity,
        limited_vnfs=args.limited_vnfs,
        license_fraction=args.license_fraction,
    )
    path = Path(args.output) if args.output else report.output_dir(None) / "instance.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_instance(inst, path)
    print(
        f"k={topo.k} servers={topo.n_servers} vms={topo.n_vms} services={inst.n_services} "
        f"vnfs={len(inst.vnf_catalog)} -> {path}"
    )
    return EXIT_OK


# -- optimize ------------------------------------------------------------------


def _archive_rows(run_id, seed, archive, extra) -> list[dict]:
    rows = []
    for i, c in enumerate(archive):
        L, P, E = c.objectives
        row = {"run_id": run_id, "seed": seed, "candidate_id": i, "L": L, "P": P, "E_C": E}
        row["counts"] = report.encode_ints(c.phenotype.instance_counts)
        row["genotype"] = report.encode_ints(c.genotype)
        row.update(extra)
        rows.append(row)
    return rows


ARCHIVE_EXTRA = ["evaluator", "representation", "counts", "genotype"]
HV_FIELDS = ["run_id", "seed", "hv", "points", "note", "lower", "upper"]


def _hv_rows(runs: list[tuple[str, int, np.ndarray]]) -> list[dict]:
    fronts = [f for _, _, f in runs]
    if not any(len(f) for f in fronts):
        return [{"run_id": r, "seed": s, "hv": 0.0, "points": 0, "note": "no feasible solution"} for r, s, _ in runs]
    hvs, norm = normalized_hypervolumes(fronts)
    lo, hi = report.encode_floats(norm.lower), report.encode_floats(norm.upper)
    out = []
    for (r, s, f), hv in zip(runs, hvs):
        note = "" if len(f) else "no feasible solution"
        out.append({"run_id": r, "seed": s, "hv": hv, "points": len(f), "note": note, "lower": lo, "upper": hi})
    return out


def cmd_optimize(args) -> int:
    inst = load_instance(args.instance)
    out = report.output_dir(args.output_dir)
    rows, runs, history = [], [], []
    for evaluator in args.evaluator:
        for seed in args.seeds:
            cfg = evo.OptimizerConfig(
                population_size=args.population,
                generations=args.generations,
                crossover_rate=args.crossover,
                mutation_rate=args.mutation,
                evaluator=evaluator,
                representation=args.representation,
                seed=seed,
                delta=args.delta,
                patience=args.patience,
                record_history=args.history,
            )
            res = evo.run_optimizer(inst, cfg)
            run_id = f"{evaluator}-{args.representation}-s{seed}"
            flagged = sum(1 for c in res.population if c.status == "nonconvergent")
            log.info("%s: %d archive points, %d evaluations, %d non-convergent", run_id, len(res.archive), res.evaluations, flagged)
            rows += _archive_rows(run_id, seed, res.archive, {"evaluator": evaluator, "representation": args.representation})
            runs.append((run_id, seed, res.archive_objectives()))
            for gen, cid, obj, status in res.history:
                history.append(
                    {
                        "run_id": run_id,
                        "seed": seed,
                        "generation": gen,
                        "candidate_id": cid,
                        "objectives": report.encode_floats(obj),
                        "feasible": status == "ok",
                        "status": status,
                    }
                )
    report.write_rows(out / "archive.csv", rows, ARCHIVE_EXTRA)
    report.write_rows(out / "hv.csv", _hv_rows(runs), base=HV_FIELDS)
    if args.history:
        report.write_rows(
            out / "generations.csv",
            history,
            base=["run_id", "seed", "generation", "candidate_id", "objectives", "feasible", "status"],
        )
    print(f"wrote {out / 'archive.csv'} ({len(rows)} rows) and {out / 'hv.csv'}")
    return EXIT_OK


# -- heuristics ----------------------------------------------------------------


def cmd_heuristics(args) -> int:
    inst = load_instance(args.instance)
    out = report.output_dir(args.output_dir)
    if args.source == "reference":
        if not args.reference:
            raise UsageError("--source reference needs --reference ARCHIVE_CSV")
        ref_rows = report.read_rows(args.reference)
        if len(ref_rows) < args.count:
            raise UsageError(f"reference archive has {len(ref_rows)} rows, fewer than --count {args.count}")
        subs = [heuristics.Subproblem(inst, tuple(report.decode_ints(r["counts"]).tolist())) for r in ref_rows[: args.count]]
    else:
        subs = heuristics.generate_subproblems(inst, args.count, "initializer")
    rows, runs = [], []
    for kind in args.kind:
        for seed in args.seeds:
            found = []
            for j, sub in enumerate(subs):
                try:
                    ph = heuristics.solve_heuristic(kind, sub, seed=seed * 100_003 + j)
                    obj = qos.evaluate_objectives(inst, ph, args.delta, args.patience)
                except (InfeasibleSubproblemError, ConvergenceError) as exc:
                    log.warning("%s subproblem %d skipped: %s", kind, j, exc)
                    continue
                found.append((np.array(obj), ph))
            run_id = f"{kind}-s{seed}"
            if found:
                f = np.array([o for o, _ in found])
                keep = nondominated_mask(f)
                found = [x for x, k in zip(found, keep) if k]
            for i, (obj, ph) in enumerate(found):
                rows.append(
                    {
                        "run_id": run_id,
                        "seed": seed,
                        "candidate_id": i,
                        "L": obj[0],
                        "P": obj[1],
                        "E_C": obj[2],
                        "heuristic": kind,
                        "counts": report.encode_ints(ph.instance_counts),
                    }
                )
            runs.append((run_id, seed, np.array([o for o, _ in found]).reshape(-1, 3)))
    report.write_rows(out / "heuristics_archive.csv", rows, ["heuristic", "counts"])
    report.write_rows(out / "heuristics_hv.csv", _hv_rows(runs), base=HV_FIELDS)
    print(f"wrote {out / 'heuristics_archive.csv'} ({len(rows)} rows)")
    return EXIT_OK


# -- validate ------------------------------------------------------------------


def select_solutions(objectives: np.ndarray) -> dict[str, int]:
    """Indices of the lowest-latency, lowest-loss, lowest-energy and best-balanced rows.

    Best-balanced minimises the largest normalised distance to the ideal
    point; ties go to the lower index.
    """
    f = np.asarray(objectives, dtype=float)
    lo, hi = f.min(axis=0), f.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    norm = (f - lo) / span
    return {
        "min_latency": int(np.argmin(f[:, 0])),
        "min_loss": int(np.argmin(f[:, 1])),
        "min_energy": int(np.argmin(f[:, 2])),
        "balanced": int(np.argmin(norm.max(axis=1))),
    }


def _model_objectives(model: str, inst, ph, args):
    if model == "proposed":
        return qos.evaluate_objectives(inst, ph, args.delta, args.patience)
    if model == "mm1":
        return surrogates.evaluate_mm1(inst, ph)
    return surrogates.evaluate_mm1b_instant(inst, ph)


def cmd_validate(args) -> int:
    inst = load_instance(args.instance)
    out = report.output_dir(args.output_dir)
    if args.candidates:
        cand_rows = report.read_rows(args.candidates)
        if not cand_rows:
            raise UsageError("candidate CSV is empty")
        genotypes = [report.decode_ints(r["genotype"]) for r in cand_rows]
        objs = report.objectives_of(cand_rows)
    else:
        res = evo.run_optimizer(
            inst, evo.OptimizerConfig(population_size=args.population, generations=args.generations, seed=args.seed)
        )
        genotypes = [c.genotype for c in res.archive]
        objs = res.archive_objectives()
    picks = select_solutions(objs)
    cfg = des.SimConfig(args.warmup, args.measure, args.replications, args.seed)
    rows = []
    for label, idx in picks.items():
        ph = decode(genotypes[idx], inst)
        for factor in args.factors:
            scaled = inst.scaled(factor)
            sim = des.simulate(scaled, ph, cfg)
            for model in args.models:
                obj = _model_objectives(model, scaled, ph, args)
                rows.append(
                    {
                        "run_id": f"validate-{label}",
                        "seed": args.seed,
                        "candidate_id": idx,
                        "L": obj[0],
                        "P": obj[1],
                        "E_C": obj[2],
                        "selection": label,
                        "factor": factor,
                        "model": model,
                        "des_L": sim.mean_latency,
                        "des_L_ci": float(np.sqrt(np.mean(sim.latency_ci**2))),
                        "des_P": sim.mean_loss,
                        "des_P_ci": float(np.sqrt(np.mean(sim.loss_ci**2))),
                        "des_E_C": sim.energy,
                        "des_E_C_ci": sim.energy_ci,
                    }
                )
    extra = ["selection", "factor", "model", "des_L", "des_L_ci", "des_P", "des_P_ci", "des_E_C", "des_E_C_ci"]
    report.write_rows(out / "validate.csv", rows, extra)
    print(f"wrote {out / 'validate.csv'} ({len(rows)} rows)")
    return EXIT_OK


# -- hv / inspect --------------------------------------------------------------


def cmd_hv(args) -> int:
    runs: dict[tuple[str, str], list[dict]] = {}
    for path in args.inputs:
        for r in report.read_rows(path):
            runs.setdefault((r["run_id"], r["seed"]), []).append(r)
    if not runs:
        raise UsageError("no rows in the given CSV files")
    triples = [(rid, int(seed), report.objectives_of(rows)) for (rid, seed), rows in runs.items()]
    out = report.output_dir(args.output_dir)
    rows = _hv_rows(triples)
    report.write_rows(out / args.name, rows, base=HV_FIELDS)
    for r in rows:
        print(f"{r['run_id']}\t{r['hv']:.6f}\t{r['points']}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    inst = load_instance(args.instance)
    if args.genotype:
        g = report.decode_ints(args.genotype)
    elif args.archive:
        rows = report.read_rows(args.archive)
        match = [r for r in rows if int(r["candidate_id"]) == args.candidate and (args.run_id is None or r["run_id"] == args.run_id)]
        if not match:
            raise UsageError(f"candidate {args.candidate} not found in {args.archive}")
        g = report.decode_ints(match[0]["genotype"])
    else:
        g = np.full(inst.topology.n_vms, -1, dtype=np.int64)
    if g.size != inst.topology.n_vms:
        raise UsageError(f"genotype has {g.size} slots, the instance has {inst.topology.n_vms} VMs")
    ph = decode(g, inst)
    svc = qos.evaluate_services(inst, ph, args.delta, args.patience)
    L, P, E = svc.objectives
    print(f"L={L:.6g} ms  P={P:.6g}  E_C={E:.6g} W")
    inst_rows, path_rows = report.phenotype_tables(inst, ph, args.max_paths)
    for s, service in enumerate(inst.services):
        print(f"{service.id}: {len(ph.instances[s])} instance(s), latency {svc.latency[s]:.6g} ms, loss {svc.loss[s]:.6g}")
    for r in inst_rows:
        print(f"  {r['service']}#{r['instance']}: vms [{r['vms']}] servers [{r['servers']}]")
    if args.output_dir:
        out = report.output_dir(args.output_dir)
        report.write_rows(out / "instances.csv", inst_rows, base=["service", "instance", "vms", "servers", "vnfs"])
        report.write_rows(out / "paths.csv", path_rows, base=["service", "instance", "route", "probability", "components"])
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vnfpp", description="VNF placement: queueing model, simulator and optimizers")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_flags(sp):
        sp.add_argument("--delta", type=float, default=qos.DEFAULT_DELTA, help="convergence threshold")
        sp.add_argument("--patience", type=int, default=qos.DEFAULT_PATIENCE, help="stable iterations required")

    g = sub.add_parser("generate", help="sample a problem instance")
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--vms-per-server", type=int, default=3)
    g.add_argument("--util", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--length-mean", type=float, default=5.0)
    g.add_argument("--length-std", type=float, default=1.0)
    g.add_argument("--rate-mean", type=float, default=2.0)
    g.add_argument("--rate-std", type=float, default=0.5)
    g.add_argument("--vnf-rate-mean", type=float, default=10.0)
    g.add_argument("--vnf-rate-std", type=float, default=2.0)
    g.add_argument("--anti-affinity", type=int, default=0)
    g.add_argument("--limited-vnfs", type=int, default=0)
    g.add_argument("--license-fraction", type=float, default=1.0)
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_generate)

    o = sub.add_parser("optimize", help="run the evolutionary optimizer")
    o.add_argument("--instance", required=True)
    o.add_argument("--evaluator", action="append", choices=["proposed", "mm1", "mm1b-instant", "cwtpl", "ru", "plus"])
    o.add_argument("--representation", default="proposed", choices=sorted(evo.REPRESENTATIONS))
    o.add_argument("--population", type=int, default=100)
    o.add_argument("--generations", type=int, default=100)
    o.add_argument("--crossover", type=float, default=0.9)
    o.add_argument("--mutation", type=float, default=None)
    o.add_argument("--seeds", type=_ints, default=[0])
    o.add_argument("--history", action="store_true", help="also write per-generation objectives")
    o.add_argument("--output-dir")
    model_flags(o)
    o.set_defaults(func=cmd_optimize)

    h = sub.add_parser("heuristics", help="solve subproblems with placement heuristics")
    h.add_argument("--instance", required=True)
    h.add_argument("--kind", action="append", choices=[k.value for k in heuristics.HeuristicKind])
    h.add_argument("--count", type=int, default=100)
    h.add_argument("--source", choices=["initializer", "reference"], default="initializer")
    h.add_argument("--reference", help="archive CSV with a counts column")
    h.add_argument("--seeds", type=_ints, default=[0])
    h.add_argument("--output-dir")
    model_flags(h)
    h.set_defaults(func=cmd_heuristics)

    v = sub.add_parser("validate", help="compare analytical models against simulation")
    v.add_argument("--instance", required=True)
    v.add_argument("--candidates", help="archive CSV with a genotype column")
    v.add_argument("--population", type=int, default=40)
    v.add_argument("--generations", type=int, default=20)
    v.add_argument("--factors", type=_floats, default=[0.5, 1.0, 1.5])
    v.add_argument("--models", type=lambda t: t.split(","), default=["proposed", "mm1", "mm1b-instant"])
    v.add_argument("--warmup", type=float, default=1000.0)
    v.add_argument("--measure", type=float, default=10000.0)
    v.add_argument("--replications", type=int, default=10)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--output-dir")
    model_flags(v)
    v.set_defaults(func=cmd_validate)

    hv = sub.add_parser("hv", help="hypervolume of archive CSVs in a shared normalised space")
    hv.add_argument("inputs", nargs="+")
    hv.add_argument("--name", default="hv.csv")
    hv.add_argument("--output-dir")
    hv.set_defaults(func=cmd_hv)

    i = sub.add_parser("inspect", help="report the placement and routes of a genotype")
    i.add_argument("--instance", required=True)
    i.add_argument("--genotype", help="space-separated slot values")
    i.add_argument("--archive")
    i.add_argument("--run-id")
    i.add_argument("--candidate", type=int, default=0)
    i.add_argument("--max-paths", type=int, default=64)
    i.add_argument("--output-dir")
    model_flags(i)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "evaluator", "unset") is None:
        args.evaluator = ["proposed"]
    if getattr(args, "kind", "unset") is None:
        args.kind = [k.value for k in heuristics.HeuristicKind]
    if args.command == "validate":
        bad = set(args.models) - {"proposed", "mm1", "mm1b-instant"}
        if bad:
            parser.error(f"unknown model(s): {', '.join(sorted(bad))}")
    try:
        return args.func(args)
    except (UsageError, InvalidParameterError) as exc:
        print(f"vnfpp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstanceFormatError, InstanceValidationError, InfeasibleInstanceError) as exc:
        print(f"vnfpp: invalid instance: {exc}", file=sys.stderr)
        return EXIT_INSTANCE
    except OSError as exc:
        print(f"vnfpp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        log.debug("internal error", exc_info=True)
        print(f"vnfpp: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
