"""Dataset ingestion, accuracy scoring against the crude model's ground truth,
random/fixed baselines, precision/coverage/time aggregation, MAPE, and
feature-prominence tables.
"""

import csv
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import kb as kbmod
from . import rng as rngmod
from .asm import parse_block
from .errors import CometError, DatasetError
from .explain import ExplainConfig, explain
from .graph import FeatureSet, build_graph, extract_features
from .models import CostTable, CrudeModel, ExternalModel, ground_truth_explanation
from .perturb import PerturbConfig

_RECORD_KEYS = {"id", "asm", "measured", "source", "category"}
FEATURE_TYPES = ("numinsts", "inst", "dep")


def cfg_echo(cfg: ExplainConfig, pcfg: PerturbConfig) -> dict:
    """Fully materialized run configuration, embedded in report metadata."""
    echo = {k: v for k, v in cfg.__dict__.items() if k != "master_seed"}
    echo.update({f"perturb_{k}": v for k, v in pcfg.__dict__.items()})
    return echo


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    asm: tuple                   # instruction strings
    measured: dict               # microarchitecture -> cycles
    source: str | None
    category: str | None
    block: object = field(compare=False, default=None)


def load_dataset(path, kb) -> list:
    """JSON-Lines records; every block parsed and validated, ids unique."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{line_no}: not valid JSON ({exc})") from exc
            unknown = set(doc) - _RECORD_KEYS
            if unknown:
                raise DatasetError(f"{path}:{line_no}: unknown fields {sorted(unknown)}")
            if "id" not in doc or "asm" not in doc:
                raise DatasetError(f"{path}:{line_no}: records need 'id' and 'asm'")
            rid = doc["id"]
            if rid in seen:
                raise DatasetError(f"{path}:{line_no}: duplicate id {rid!r}")
            seen.add(rid)
            measured = doc.get("measured", {})
            for march, v in measured.items():
                if not isinstance(v, (int, float)) or v <= 0:
                    raise DatasetError(f"{path}:{line_no}: measured[{march!r}] must be > 0")
            try:
                block = parse_block("\n".join(doc["asm"]), kb)
            except CometError as exc:
                raise DatasetError(f"{path}:{line_no}: record {rid!r} has an invalid "
                                   f"block: {exc}") from exc
            records.append(DatasetRecord(
                id=rid, asm=tuple(doc["asm"]), measured=dict(measured),
                source=doc.get("source"), category=doc.get("category"), block=block))
    return records


@dataclass
class EvalRow:
    record_id: str
    seed: int
    correct: bool | None = None
    est_precision: float | None = None
    est_coverage: float | None = None
    wall_time: float = 0.0
    features: tuple = ()
    has_numinsts: bool = False
    has_inst: bool = False
    has_dep: bool = False
    error: str | None = None


@dataclass
class EvalReport:
    kind: str
    rows: list
    aggregates: dict
    meta: dict = field(default_factory=dict)

    def to_json_dict(self, include_timing: bool = True) -> dict:
        rows = []
        for r in self.rows:
            d = dict(r.__dict__)
            d["features"] = list(r.features)
            if not include_timing:
                d["wall_time"] = 0.0
            rows.append(d)
        aggregates = dict(self.aggregates)
        if not include_timing:
            for k in list(aggregates):
                if "time" in k:
                    aggregates[k] = 0.0
        return {"kind": self.kind, "meta": self.meta, "aggregates": aggregates,
                "rows": rows}

    def write_json(self, path, include_timing: bool = True):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(include_timing), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path, include_timing: bool = True):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "seed", "correct", "precision", "coverage", "time",
                        "f_numinsts", "f_inst", "f_dep", "error"])
            for r in self.rows:
                w.writerow([
                    r.record_id, r.seed,
                    "" if r.correct is None else int(r.correct),
                    "" if r.est_precision is None else f"{r.est_precision:.6f}",
                    "" if r.est_coverage is None else f"{r.est_coverage:.6f}",
                    f"{r.wall_time:.3f}" if include_timing else "0.000",
                    int(r.has_numinsts), int(r.has_inst), int(r.has_dep),
                    r.error or "",
                ])


def _mean_std(values):
    if not values:
        return 0.0, 0.0
    m = sum(values) / len(values)
    var = sum((v - m) ** 2 for v in values) / len(values)
    return m, math.sqrt(var)


def _feature_type(key: str) -> str:
    if key == "numinsts":
        return "numinsts"
    return "inst" if key.startswith("inst:") else "dep"


def _type_flags(keys):
    types = {_feature_type(k) for k in keys}
    return ("numinsts" in types, "inst" in types, "dep" in types)


def record_seed(base_seed: int, record_id: str) -> int:
    """Stable per-(seed, record) master seed for explanation runs."""
    return (base_seed * 0x9E3779B1 + zlib.crc32(record_id.encode())) & 0x7FFFFFFF


def _is_correct(explained_keys, gt: FeatureSet) -> bool:
    gt_keys = {f.key() for f in gt}
    return bool(explained_keys) and set(explained_keys) <= gt_keys


# -- worker plumbing (module level so ProcessPoolExecutor can pickle it) -----

_WORKER: dict = {}


def _worker_init(kb_path, model_spec):
    kb = kbmod.load_kb(kb_path)
    _WORKER["kb"] = kb
    _WORKER["model"] = build_model(model_spec, kb)
    if model_spec.get("kind") == "crude":
        _WORKER["table"] = _WORKER["model"].table


def _worker_explain(args):
    rid, asm_lines, seed, cfg_dict, pcfg_dict = args
    kb = _WORKER["kb"]
    model = _WORKER["model"]
    cfg = ExplainConfig(**{**cfg_dict, "master_seed": record_seed(seed, rid)})
    pcfg = PerturbConfig(**pcfg_dict)
    try:
        block = parse_block("\n".join(asm_lines), kb)
        e = explain(model, kb, block, cfg, pcfg)
        keys = tuple(f.key() for f in e.features)
        return (rid, seed, keys, e.est_precision, e.est_coverage, e.wall_time, None)
    except CometError as exc:
        return (rid, seed, (), None, None, 0.0, str(exc))


def build_model(spec: dict, kb):
    """Rebuild a cost model from a picklable description."""
    if spec["kind"] == "crude":
        if spec.get("table_path"):
            table = CostTable.from_csv(spec["table_path"], spec["march"])
        else:
            from .models import bundled_cost_table
            table = bundled_cost_table(spec["march"])
        table.check_covers(kb)
        return CrudeModel(table, kb)
    if spec["kind"] == "exec":
        return ExternalModel(spec["command"], march=spec.get("march"),
                             timeout=spec.get("timeout", 60.0))
    raise CometError(f"unknown model kind {spec['kind']!r}")


def _run_explains(records, kb_path, model_spec, cfg: ExplainConfig,
                  pcfg: PerturbConfig, seeds, jobs: int = 1):
    """(record, seed) explanation sweep; returns rows sorted by (id, seed)."""
    cfg_dict = {k: v for k, v in cfg.__dict__.items() if k != "master_seed"}
    pcfg_dict = dict(pcfg.__dict__)
    tasks = [(r.id, list(r.asm), seed, cfg_dict, pcfg_dict)
             for seed in seeds for r in records]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init,
                                 initargs=(kb_path, model_spec)) as pool:
            results = list(pool.map(_worker_explain, tasks, chunksize=1))
    else:
        _worker_init(kb_path, model_spec)
        results = [_worker_explain(t) for t in tasks]
    return sorted(results, key=lambda r: (r[0], r[1]))


def accuracy_eval(records, table: CostTable, kb, cfg: ExplainConfig,
                  pcfg: PerturbConfig | None = None, seeds=(0,),
                  kb_path=None, jobs: int = 1) -> EvalReport:
    """Explain every record against the crude model per seed; an explanation is
    correct when it is a non-empty subset of the ground-truth feature set."""
    if not records:
        raise DatasetError("accuracy_eval needs a non-empty record list")
    pcfg = pcfg or PerturbConfig()
    kb_path = kb_path or kbmod.bundled_kb_path("isa_core")
    gts = {r.id: ground_truth_explanation(table, build_graph(kb, r.block))
           for r in records}
    model_spec = {"kind": "crude", "march": table.microarchitecture}
    results = _run_explains(records, kb_path, model_spec, cfg, pcfg, seeds, jobs)

    rows = []
    per_seed_hits = {s: [] for s in seeds}
    excluded = 0
    for rid, seed, keys, prec, cov, wall, err in results:
        if err is not None:
            excluded += 1
            rows.append(EvalRow(record_id=rid, seed=seed, error=err))
            continue
        correct = _is_correct(keys, gts[rid])
        fn, fi, fd = _type_flags(keys)
        rows.append(EvalRow(record_id=rid, seed=seed, correct=correct,
                            est_precision=prec, est_coverage=cov, wall_time=wall,
                            features=keys, has_numinsts=fn, has_inst=fi, has_dep=fd))
        per_seed_hits[seed].append(correct)

    per_seed_acc = [100.0 * sum(h) / len(h) for s, h in sorted(per_seed_hits.items())
                    if h]
    acc_mean, acc_std = _mean_std(per_seed_acc)
    prec_mean, prec_std = _mean_std([r.est_precision for r in rows
                                     if r.est_precision is not None])
    cov_mean, cov_std = _mean_std([r.est_coverage for r in rows
                                   if r.est_coverage is not None])
    time_mean, time_std = _mean_std([r.wall_time for r in rows if r.error is None])
    return EvalReport(
        kind="accuracy",
        rows=rows,
        aggregates={
            "accuracy_mean": acc_mean, "accuracy_std": acc_std,
            "avg_precision": prec_mean, "std_precision": prec_std,
            "avg_coverage": cov_mean, "std_coverage": cov_std,
            "avg_time": time_mean, "std_time": time_std,
            "excluded": excluded,
        },
        meta={"seeds": list(seeds), "march": table.microarchitecture,
              "records": len(records), "config": cfg_echo(cfg, pcfg)},
    )


def gt_type_frequencies(gts) -> dict:
    """Occurrence frequency of each feature type across all GT explanations."""
    counts = {t: 0 for t in FEATURE_TYPES}
    total = 0
    for gt in gts.values():
        for f in gt:
            counts[_feature_type(f.key())] += 1
            total += 1
    if total == 0:
        return {t: 0.0 for t in FEATURE_TYPES}
    return {t: counts[t] / total for t in FEATURE_TYPES}


def baseline_random(records, table: CostTable, kb, seeds=(0,)) -> EvalReport:
    """Include each block feature with the global frequency of its GT type;
    re-drawn per seed."""
    if not records:
        raise DatasetError("baseline_random needs a non-empty record list")
    gts = {r.id: ground_truth_explanation(table, build_graph(kb, r.block))
           for r in records}
    freqs = gt_type_frequencies(gts)
    rows = []
    per_seed_hits = {s: [] for s in seeds}
    for seed in seeds:
        for r in records:
            rng = rngmod.stream(seed, "baseline-random", r.id)
            pool = extract_features(build_graph(kb, r.block))
            keys = tuple(f.key() for f in pool
                         if rng.random() < freqs[_feature_type(f.key())])
            correct = _is_correct(keys, gts[r.id])
            fn, fi, fd = _type_flags(keys)
            rows.append(EvalRow(record_id=r.id, seed=seed, correct=correct,
                                features=keys, has_numinsts=fn, has_inst=fi,
                                has_dep=fd))
            per_seed_hits[seed].append(correct)
    per_seed_acc = [100.0 * sum(h) / len(h) for s, h in sorted(per_seed_hits.items())]
    acc_mean, acc_std = _mean_std(per_seed_acc)
    return EvalReport(kind="baseline_random", rows=sorted(
        rows, key=lambda r: (r.record_id, r.seed)),
        aggregates={"accuracy_mean": acc_mean, "accuracy_std": acc_std,
                    "type_frequencies": freqs},
        meta={"seeds": list(seeds), "march": table.microarchitecture})


def baseline_fixed(records, table: CostTable, kb) -> EvalReport:
    """Deterministic baseline: the first feature of the globally most frequent
    ground-truth type, or the empty explanation when the block lacks one."""
    if not records:
        raise DatasetError("baseline_fixed needs a non-empty record list")
    gts = {r.id: ground_truth_explanation(table, build_graph(kb, r.block))
           for r in records}
    freqs = gt_type_frequencies(gts)
    best_type = max(FEATURE_TYPES, key=lambda t: (freqs[t], t))
    rows = []
    hits = []
    for r in records:
        pool = extract_features(build_graph(kb, r.block))
        first = next((f for f in pool if _feature_type(f.key()) == best_type), None)
        keys = (first.key(),) if first is not None else ()
        correct = _is_correct(keys, gts[r.id])
        fn, fi, fd = _type_flags(keys)
        rows.append(EvalRow(record_id=r.id, seed=0, correct=correct, features=keys,
                            has_numinsts=fn, has_inst=fi, has_dep=fd))
        hits.append(correct)
    acc = 100.0 * sum(hits) / len(hits)
    return EvalReport(kind="baseline_fixed",
                      rows=sorted(rows, key=lambda r: r.record_id),
                      aggregates={"accuracy_mean": acc, "accuracy_std": 0.0,
                                  "fixed_type": best_type,
                                  "type_frequencies": freqs},
                      meta={"march": table.microarchitecture})


def prec_cov_eval(records, kb, model_spec: dict, cfg: ExplainConfig,
                  pcfg: PerturbConfig | None = None, seeds=(0,),
                  kb_path=None, jobs: int = 1) -> EvalReport:
    """Average precision, coverage, and explanation time over records x seeds."""
    if not records:
        raise DatasetError("prec_cov_eval needs a non-empty record list")
    pcfg = pcfg or PerturbConfig()
    kb_path = kb_path or kbmod.bundled_kb_path("isa_core")
    results = _run_explains(records, kb_path, model_spec, cfg, pcfg, seeds, jobs)
    rows = []
    excluded = 0
    for rid, seed, keys, prec, cov, wall, err in results:
        if err is not None:
            excluded += 1
            rows.append(EvalRow(record_id=rid, seed=seed, error=err))
            continue
        fn, fi, fd = _type_flags(keys)
        rows.append(EvalRow(record_id=rid, seed=seed, est_precision=prec,
                            est_coverage=cov, wall_time=wall, features=keys,
                            has_numinsts=fn, has_inst=fi, has_dep=fd))
    prec_mean, prec_std = _mean_std([r.est_precision for r in rows
                                     if r.est_precision is not None])
    cov_mean, cov_std = _mean_std([r.est_coverage for r in rows
                                   if r.est_coverage is not None])
    time_mean, time_std = _mean_std([r.wall_time for r in rows if r.error is None])
    return EvalReport(kind="preccov", rows=rows,
                      aggregates={"avg_precision": prec_mean, "std_precision": prec_std,
                                  "avg_coverage": cov_mean, "std_coverage": cov_std,
                                  "avg_time": time_mean, "std_time": time_std,
                                  "excluded": excluded},
                      meta={"seeds": list(seeds), "model": model_spec.get("kind"),
                            "records": len(records), "config": cfg_echo(cfg, pcfg)})


def mape(records, model, march: str) -> float:
    """Mean absolute percentage error of `model` against measured throughput."""
    if not records:
        raise DatasetError("mape needs a non-empty record list")
    total = 0.0
    for r in records:
        if march not in r.measured:
            raise DatasetError(f"record {r.id!r} has no measurement for {march!r}")
        predicted = model.predict(r.block)
        total += abs(predicted - r.measured[march]) / r.measured[march]
    return 100.0 * total / len(records)


def prominence(rows, records_by_id: dict, group_by: str = "none") -> list:
    """Per group, the percentage of explanations containing each feature type."""
    if group_by not in ("none", "source", "category"):
        raise DatasetError(f"unknown group key {group_by!r}")
    groups: dict = {}
    for row in rows:
        if row.error is not None:
            continue
        if group_by == "none":
            g = "all"
        else:
            g = getattr(records_by_id[row.record_id], group_by) or "unlabeled"
        groups.setdefault(g, []).append(row)
    table = []
    for g in sorted(groups):
        members = groups[g]
        n = len(members)
        table.append({
            "group": g,
            "n": n,
            "pct_numinsts": 100.0 * sum(r.has_numinsts for r in members) / n,
            "pct_inst": 100.0 * sum(r.has_inst for r in members) / n,
            "pct_dep": 100.0 * sum(r.has_dep for r in members) / n,
        })
    return table


def recompute_aggregates(report: EvalReport) -> dict:
    """Re-derive the headline aggregates from the emitted rows (self-consistency)."""
    out = {}
    if "accuracy_mean" in report.aggregates:
        per_seed: dict = {}
        for r in report.rows:
            if r.correct is not None:
                per_seed.setdefault(r.seed, []).append(r.correct)
        vals = [100.0 * sum(h) / len(h) for s, h in sorted(per_seed.items())]
        out["accuracy_mean"], out["accuracy_std"] = _mean_std(vals)
    if "avg_precision" in report.aggregates:
        precs = [r.est_precision for r in report.rows if r.est_precision is not None]
        covs = [r.est_coverage for r in report.rows if r.est_coverage is not None]
        out["avg_precision"], _ = _mean_std(precs)
        out["avg_coverage"], _ = _mean_std(covs)
    return out
