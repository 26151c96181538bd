"""Command-line entry point.

Exit codes: 0 success, 2 usage/config error, 3 parse error, 4 model error,
5 explanation did not converge (the full-pool fallback was returned).
"""

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from . import kb as kbmod
from . import rng as rngmod
from .asm import parse_block, render_block
from .datagen import write_fixtures
from .errors import (AsmParseError, CometError, DatasetError, KbError, ModelError,
                     PerturbError)
from .evaluation import (accuracy_eval, baseline_fixed, baseline_random, build_model,
                         load_dataset, mape, prec_cov_eval, prominence)
from .explain import ExplainConfig, explain
from .graph import FeatureSet, build_graph, extract_features, graph_to_dict
from .models import bundled_cost_table, CostTable
from .perturb import (PerturbConfig, estimate_space_size, make_plan, sample_from_plan)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_MODEL = 4
EXIT_UNCONVERGED = 5

_EXPLAIN_FIELDS = set(ExplainConfig.__dataclass_fields__)
_PERTURB_FIELDS = set(PerturbConfig.__dataclass_fields__)


def _defaults_path() -> Path:
    return Path(resources.files("comet").joinpath("data/defaults.json"))


def load_run_config(path=None) -> dict:
    """Shipped defaults, field-wise overridden by --config when given."""
    merged = json.loads(_defaults_path().read_text())
    if path:
        overrides = json.loads(Path(path).read_text())
        unknown = set(overrides) - _EXPLAIN_FIELDS - _PERTURB_FIELDS
        if unknown:
            raise CometError(f"unknown config fields: {sorted(unknown)}")
        merged.update(overrides)
    return merged


def _split_config(merged: dict, seed: int, epsilon=None):
    exp = {k: v for k, v in merged.items() if k in _EXPLAIN_FIELDS}
    per = {k: v for k, v in merged.items() if k in _PERTURB_FIELDS}
    exp["master_seed"] = seed
    if epsilon is not None:
        exp["epsilon_cycles"] = epsilon
    return ExplainConfig(**exp), PerturbConfig(**per)


def _load_kb(args):
    if args.kb:
        return kbmod.load_kb(args.kb), str(args.kb)
    path = kbmod.bundled_kb_path("isa_core")
    return kbmod.load_kb(path), str(path)


def _read_block_text(args) -> str:
    if getattr(args, "text", None):
        return args.text
    if not args.block:
        raise CometError("provide --block FILE or --text 'asm'")
    return Path(args.block).read_text(encoding="utf-8")


def _model_spec(args) -> dict:
    spec = args.model
    if spec == "crude":
        return {"kind": "crude", "march": args.march,
                "table_path": getattr(args, "table", None)}
    if spec.startswith("exec:"):
        return {"kind": "exec", "command": spec[len("exec:"):], "march": args.march,
                "timeout": getattr(args, "timeout", 60.0)}
    raise CometError(f"unknown model spec {spec!r}; use 'crude' or 'exec:<command>'")


def _default_epsilon(args, model_spec) -> float | None:
    if args.epsilon is not None:
        return args.epsilon
    # crude-model units are quarters; external models get half a cycle
    return 0.25 if model_spec["kind"] == "crude" else 0.5


def _emit(doc: dict, out_path):
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def parse_feature_spec(spec: str, pool: FeatureSet) -> FeatureSet:
    """`inst:4,dep:3-6:raw:rax,numinsts` -> features of the pool."""
    if not spec:
        return FeatureSet()
    by_key = {f.key(): f for f in pool}
    chosen = []
    for tok in spec.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        if tok == "all":
            return pool
        if tok not in by_key:
            raise CometError(f"unknown feature reference {tok!r}; block has: "
                             f"{', '.join(sorted(by_key))}")
        chosen.append(by_key[tok])
    return FeatureSet(chosen)


def cmd_explain(args) -> int:
    kb, _ = _load_kb(args)
    merged = load_run_config(args.config)
    model_spec = _model_spec(args)
    cfg, pcfg = _split_config(merged, args.seed, _default_epsilon(args, model_spec))
    model = build_model(model_spec, kb)
    if model_spec["kind"] == "crude" and args.march:
        model.table.check_covers(kb)
    block = parse_block(_read_block_text(args), kb)
    e = explain(model, kb, block, cfg, pcfg)
    _emit(e.to_dict(include_timing=not args.no_timings), args.out)
    return EXIT_OK if e.converged else EXIT_UNCONVERGED


def _load_records(args, kb):
    if not args.dataset:
        raise CometError("provide --dataset FILE (JSON-Lines)")
    return load_dataset(args.dataset, kb)


def _write_reports(report, args, aggregate_line: str):
    include_timing = not args.no_timings
    prefix = args.out_prefix
    if prefix:
        report.write_json(f"{prefix}.json", include_timing)
        report.write_csv(f"{prefix}.csv", include_timing)
    else:
        _emit(report.to_json_dict(include_timing), None)
    print(aggregate_line)


def cmd_eval(args) -> int:
    kb, kb_path = _load_kb(args)
    records = _load_records(args, kb)
    merged = load_run_config(args.config)
    seeds = _parse_seeds(args.seeds)

    if args.mode == "accuracy":
        table = _resolve_table(args, kb)
        cfg, pcfg = _split_config(merged, 0, args.epsilon if args.epsilon is not None
                                  else 0.25)
        report = accuracy_eval(records, table, kb, cfg, pcfg, seeds=seeds,
                               kb_path=kb_path, jobs=args.jobs)
        agg = report.aggregates
        _write_reports(report, args,
                       f"accuracy {agg['accuracy_mean']:.2f} +- "
                       f"{agg['accuracy_std']:.2f} % over {len(seeds)} seeds")
        return EXIT_OK

    if args.mode == "preccov":
        model_spec = _model_spec(args)
        if model_spec["kind"] == "crude":
            _resolve_table(args, kb)
        cfg, pcfg = _split_config(merged, 0, _default_epsilon(args, model_spec))
        report = prec_cov_eval(records, kb, model_spec, cfg, pcfg, seeds=seeds,
                               kb_path=kb_path, jobs=args.jobs)
        agg = report.aggregates
        _write_reports(report, args,
                       f"precision {agg['avg_precision']:.3f} +- {agg['std_precision']:.3f}  "
                       f"coverage {agg['avg_coverage']:.3f} +- {agg['std_coverage']:.3f}  "
                       f"time {agg['avg_time'] if not args.no_timings else 0.0:.2f}s")
        return EXIT_OK

    if args.mode == "mape":
        model_spec = _model_spec(args)
        model = build_model(model_spec, kb)
        value = mape(records, model, args.march)
        _emit({"mape_percent": round(value, 4), "march": args.march,
               "model": model.name, "records": len(records)}, args.out_prefix and
              f"{args.out_prefix}.json")
        print(f"mape {value:.2f} %")
        return EXIT_OK

    if args.mode == "prominence":
        table = _resolve_table(args, kb)
        cfg, pcfg = _split_config(merged, 0, args.epsilon if args.epsilon is not None
                                  else 0.25)
        report = accuracy_eval(records, table, kb, cfg, pcfg, seeds=seeds,
                               kb_path=kb_path, jobs=args.jobs)
        rows = prominence(report.rows, {r.id: r for r in records}, args.group_by)
        _emit({"group_by": args.group_by, "rows": rows}, args.out_prefix and
              f"{args.out_prefix}.json")
        for row in rows:
            print(f"{row['group']}: n={row['n']} n%={row['pct_numinsts']:.1f} "
                  f"I%={row['pct_inst']:.1f} D%={row['pct_dep']:.1f}")
        return EXIT_OK

    if args.mode == "baselines":
        table = _resolve_table(args, kb)
        rnd = baseline_random(records, table, kb, seeds=seeds)
        fxd = baseline_fixed(records, table, kb)
        doc = {"random": rnd.to_json_dict(include_timing=False)["aggregates"],
               "fixed": fxd.to_json_dict(include_timing=False)["aggregates"]}
        _emit(doc, args.out_prefix and f"{args.out_prefix}.json")
        print(f"random {rnd.aggregates['accuracy_mean']:.2f} +- "
              f"{rnd.aggregates['accuracy_std']:.2f} %  "
              f"fixed {fxd.aggregates['accuracy_mean']:.2f} %")
        return EXIT_OK

    raise CometError(f"unknown eval mode {args.mode!r}")


def _resolve_table(args, kb) -> CostTable:
    if getattr(args, "table", None):
        table = CostTable.from_csv(args.table, args.march)
    else:
        table = bundled_cost_table(args.march)
    table.check_covers(kb)
    return table


def _parse_seeds(spec) -> list:
    if isinstance(spec, int):
        return list(range(spec))
    if "," in spec:
        return [int(s) for s in spec.split(",") if s.strip() != ""]
    return list(range(int(spec)))


def cmd_perturb(args) -> int:
    kb, _ = _load_kb(args)
    merged = load_run_config(args.config)
    _, pcfg = _split_config(merged, args.seed)
    block = parse_block(_read_block_text(args), kb)
    g = build_graph(kb, block)
    preserve = parse_feature_spec(args.preserve, extract_features(g))
    plan = make_plan(kb, g, preserve, pcfg)
    chunks = [f"; seed {args.seed} preserve {args.preserve or '-'}\n"]
    for i in range(args.n):
        r = sample_from_plan(plan, pcfg, rngmod.stream(args.seed, "cli-perturb", i))
        chunks.append(render_block(r.block))
    sys.stdout.write("\n".join(chunks))
    return EXIT_OK


def cmd_space_size(args) -> int:
    kb, _ = _load_kb(args)
    block = parse_block(_read_block_text(args), kb)
    g = build_graph(kb, block)
    preserve = parse_feature_spec(args.preserve, extract_features(g))
    size = estimate_space_size(kb, g, preserve)
    mantissa = 10 ** (size.log10_count - int(size.log10_count))
    _emit({"log10_count": round(size.log10_count, 4),
           "scientific": f"{mantissa:.2f}e+{int(size.log10_count)}",
           "preserve": args.preserve or "", "seed": args.seed}, args.out)
    return EXIT_OK


def cmd_graph(args) -> int:
    kb, _ = _load_kb(args)
    block = parse_block(_read_block_text(args), kb)
    g = build_graph(kb, block, all_pairs=args.all_pairs)
    doc = graph_to_dict(g)
    doc["seed"] = args.seed
    _emit(doc, args.out)
    return EXIT_OK


def cmd_fixtures(args) -> int:
    kb, _ = _load_kb(args)
    n = write_fixtures(args.out or "fixtures.jsonl", kb, seed=args.seed,
                       per_category=args.per_category)
    print(f"wrote {n} fixture records")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="comet",
                                description="Explain x86 basic-block cost-model "
                                            "predictions")
    p.add_argument("--kb", help="KB JSON path (default: bundled isa_core)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, block=True):
        if block:
            sp.add_argument("--block", help="file with one basic block")
            sp.add_argument("--text", help="inline block text")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", help="JSON config overriding shipped defaults")
        sp.add_argument("--no-timings", action="store_true",
                        help="zero wall-time fields for byte-reproducible output")
        sp.add_argument("--out", help="write JSON here instead of stdout")

    sp = sub.add_parser("explain", help="explain one block's prediction")
    common(sp)
    sp.add_argument("--model", default="crude", help="'crude' or 'exec:<command>'")
    sp.add_argument("--march", default="hsw")
    sp.add_argument("--table", help="cost-table CSV (crude model)")
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--timeout", type=float, default=60.0)
    sp.set_defaults(fn=cmd_explain)

    sp = sub.add_parser("eval", help="dataset-level studies")
    sp.add_argument("mode", choices=["accuracy", "preccov", "mape", "prominence",
                                     "baselines"])
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--model", default="crude")
    sp.add_argument("--march", default="hsw")
    sp.add_argument("--table")
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--timeout", type=float, default=60.0)
    sp.add_argument("--seeds", default="1", help="count or comma list")
    sp.add_argument("--group-by", default="none", choices=["none", "source",
                                                           "category"])
    sp.add_argument("--jobs", type=int,
                    default=min(4, os.cpu_count() or 1),
                    help="worker processes (default: parallelism capped at 4)")
    sp.add_argument("--config")
    sp.add_argument("--no-timings", action="store_true")
    sp.add_argument("--out-prefix", help="write <prefix>.json and <prefix>.csv")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("perturb", help="emit feature-preserving perturbations")
    common(sp)
    sp.add_argument("--preserve", default="", help="e.g. inst:4,dep:3-6:raw:rax,numinsts")
    sp.add_argument("-n", type=int, default=1)
    sp.set_defaults(fn=cmd_perturb)

    sp = sub.add_parser("space-size", help="log10 size of the perturbation space")
    common(sp)
    sp.add_argument("--preserve", default="")
    sp.set_defaults(fn=cmd_space_size)

    sp = sub.add_parser("graph", help="dump the dependency multigraph as JSON")
    common(sp)
    sp.add_argument("--all-pairs", action="store_true",
                    help="keep every conflicting pair, not just nearest")
    sp.set_defaults(fn=cmd_graph)

    sp = sub.add_parser("fixtures", help="regenerate the synthetic fixture dataset")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=2024)
    sp.add_argument("--per-category", type=int, default=9)
    sp.set_defaults(fn=cmd_fixtures)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except AsmParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (KbError, DatasetError, PerturbError, CometError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
